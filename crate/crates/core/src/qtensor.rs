//! Quantized tensors and the accumulation contract.
//!
//! Elements are stored as binary64 but are always members of the tensor's
//! format. Reductions accumulate in binary64, in ascending index order, and
//! are rounded exactly once at the end.

use std::fs;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{Context, ContextBase, ContextFormat};
use crate::error::{Error, Result};
use crate::qformats::{self, RoundingMode, ScaledFormat};
use crate::rng::RngStream;

/// Per-kind arithmetic operation tally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub mul: u64,
    pub add: u64,
    pub shift: u64,
    pub cmp: u64,
    pub scale_adjust: u64,
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.mul += o.mul;
        self.add += o.add;
        self.shift += o.shift;
        self.cmp += o.cmp;
        self.scale_adjust += o.scale_adjust;
    }
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.mul + self.add + self.shift + self.cmp + self.scale_adjust
    }
}

/// Format a tensor's elements are constrained to.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorFormat {
    Wide,
    Plain(ScaledFormat),
    Context(ContextFormat),
}

impl TensorFormat {
    pub fn grid(&self) -> ScaledFormat {
        match self {
            Self::Wide => ScaledFormat::wide(),
            Self::Plain(f) => *f,
            Self::Context(c) => c.grid(),
        }
    }

    pub fn context(&self) -> Option<&Context> {
        match self {
            Self::Context(c) => Some(&c.context),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Wide => "wide".into(),
            Self::Plain(f) => f.to_string(),
            Self::Context(c) => c.base.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    fmt: TensorFormat,
}

fn check_members(data: &[f64], fmt: &TensorFormat) -> Result<()> {
    let g = fmt.grid();
    for (i, &v) in data.iter().enumerate() {
        if !g.is_representable(v) {
            return Err(Error::NotRepresentable {
                index: i,
                value: v,
                format: fmt.label(),
            });
        }
    }
    Ok(())
}

impl QTensor {
    /// Builds a tensor, checking the shape and that every element is a
    /// member of `fmt`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>, fmt: TensorFormat) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch {
                left: n,
                right: data.len(),
            });
        }
        check_members(&data, &fmt)?;
        Ok(Self { shape, data, fmt })
    }

    pub fn wide(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, TensorFormat::Wide)
    }

    pub fn vector(data: Vec<f64>, fmt: TensorFormat) -> Result<Self> {
        Self::new(vec![data.len()], data, fmt)
    }

    pub fn zeros(shape: Vec<usize>, fmt: TensorFormat) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            fmt,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn fmt(&self) -> &TensorFormat {
        &self.fmt
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Re-checks the representability invariant.
    pub fn check(&self) -> Result<()> {
        check_members(&self.data, &self.fmt)
    }

    /// Writes `<stem>.bin` (little-endian binary64, row-major) and a
    /// `<stem>.json` sidecar with shape, format and context id.
    pub fn write_dump(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let bin = stem.with_extension("bin");
        let json = stem.with_extension("json");
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let side = DumpSidecar {
            shape: self.shape.clone(),
            fmt: self.fmt.label(),
            context: self.fmt.context().map(|c| c.id.clone()),
            scale_exponent: self.fmt.context().map(|c| c.scale_exponent),
        };
        fs::write(&json, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&json, e))?;
        Ok((bin, json))
    }

    pub fn read_dump(stem: &Path) -> Result<Self> {
        let bin = stem.with_extension("bin");
        let json = stem.with_extension("json");
        let side: DumpSidecar = serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let n: usize = side.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::Truncated {
                path: bin,
                expected: (n * 8) as u64,
                actual: bytes.len() as u64,
                offset: (bytes.len() - bytes.len() % 8) as u64,
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let fmt = side.tensor_format()?;
        Self::new(side.shape, data, fmt)
    }
}

#[derive(Serialize, Deserialize)]
struct DumpSidecar {
    shape: Vec<usize>,
    fmt: String,
    context: Option<String>,
    scale_exponent: Option<i32>,
}

impl DumpSidecar {
    fn tensor_format(&self) -> Result<TensorFormat> {
        if self.fmt.starts_with("ctx-") || self.fmt.starts_with("context-") {
            let base: ContextBase = self.fmt.parse()?;
            let ctx = Context::new(
                self.context.clone().unwrap_or_default(),
                self.scale_exponent.unwrap_or(0),
                self.shape.iter().product(),
            );
            return Ok(TensorFormat::Context(ContextFormat::new(base, ctx)));
        }
        let f: ScaledFormat = self.fmt.parse()?;
        Ok(match f.format {
            qformats::NumericFormat::Wide => TensorFormat::Wide,
            _ => TensorFormat::Plain(f),
        })
    }
}

/// Multiplies `w` by a power of two `x = ±2^y` by adding `y` to the
/// exponent field of `w`.
#[inline]
pub fn shift_term(w: f64, x: f64) -> f64 {
    if w == 0.0 || x == 0.0 {
        return 0.0;
    }
    let xb = x.to_bits();
    let y = ((xb >> 52) & 0x7ff) as i64 - 1023;
    let wb = w.to_bits();
    let we = ((wb >> 52) & 0x7ff) as i64;
    let ne = we + y;
    if we == 0 || ne <= 0 || ne >= 0x7ff {
        // binary64 subnormal/overflow territory, unreachable from <=16-bit grids
        return w * x;
    }
    let mag = (wb & !(0x7ffu64 << 52)) | ((ne as u64) << 52);
    f64::from_bits(mag ^ (xb & (1u64 << 63)))
}

#[inline]
pub fn is_pot_value(x: f64) -> bool {
    x == 0.0 || (x.is_finite() && x.to_bits() & ((1u64 << 52) - 1) == 0 && (x.to_bits() >> 52) & 0x7ff != 0)
}

/// Wide-precision running sum with an operation tally. Never rounded to a
/// low-precision grid mid-reduction.
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    pub value: f64,
    pub counts: OpCounts,
    terms: u64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, term: f64) {
        if self.terms > 0 {
            self.counts.add += 1;
            self.value += term;
        } else {
            self.value = term;
        }
        self.terms += 1;
    }

    pub fn mac(&mut self, a: f64, b: f64) {
        self.counts.mul += 1;
        self.push(a * b);
    }

    /// Accumulates `w * x` for power-of-two `x` via an exponent shift.
    pub fn shift_mac(&mut self, w: f64, x: f64) {
        if x != 0.0 {
            self.counts.shift += 1;
        }
        self.push(shift_term(w, x));
    }

    pub fn add(&mut self, v: f64) {
        self.push(v);
    }
}

fn check_rank1(a: &QTensor, b: &QTensor) -> Result<()> {
    if a.shape.len() != 1 || b.shape.len() != 1 {
        return Err(Error::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `quantize(sum a_i * b_i)` with the sum carried in binary64.
pub fn dot(
    a: &QTensor,
    b: &QTensor,
    out: &ScaledFormat,
    mode: RoundingMode,
    rng: Option<&mut RngStream>,
    counts: &mut OpCounts,
) -> Result<f64> {
    check_rank1(a, b)?;
    let mut acc = Accumulator::new();
    for (x, y) in a.data.iter().zip(&b.data) {
        acc.mac(*x, *y);
    }
    *counts += acc.counts;
    out.quantize(acc.value, mode, rng)
}

/// Same value as [`dot`] when every `x_j` is zero or a signed power of two,
/// computed with exponent shifts instead of multiplies.
pub fn shift_dot(
    w: &QTensor,
    x: &QTensor,
    out: &ScaledFormat,
    mode: RoundingMode,
    rng: Option<&mut RngStream>,
    counts: &mut OpCounts,
) -> Result<f64> {
    check_rank1(w, x)?;
    if let Some((index, &value)) = x.data.iter().enumerate().find(|(_, v)| !is_pot_value(**v)) {
        return Err(Error::NotPowerOfTwo { index, value });
    }
    let mut acc = Accumulator::new();
    for (wi, xi) in w.data.iter().zip(&x.data) {
        acc.shift_mac(*wi, *xi);
    }
    *counts += acc.counts;
    out.quantize(acc.value, mode, rng)
}

/// Elementwise quantization into `fmt`. Stochastic mode draws once per
/// element in row-major order.
pub fn quantize_tensor(
    t: &QTensor,
    fmt: TensorFormat,
    mode: RoundingMode,
    mut rng: Option<&mut RngStream>,
) -> Result<QTensor> {
    let g = fmt.grid();
    let data = t
        .data
        .iter()
        .map(|&v| g.quantize(v, mode, rng.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    Ok(QTensor {
        shape: t.shape.clone(),
        data,
        fmt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Max,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn broadcast_index(flat: usize, out: &[usize], src: &[usize]) -> usize {
    let mut rem = flat;
    let mut idx = 0;
    let mut stride = 1;
    let off = out.len() - src.len();
    for d in (0..out.len()).rev() {
        let coord = rem % out[d];
        rem /= out[d];
        if d >= off {
            let sd = src[d - off];
            if sd != 1 {
                idx += coord * stride;
            }
            stride *= sd;
        }
    }
    idx
}

/// Wide elementwise op with numpy-style broadcasting, then quantization.
pub fn elementwise(
    op: ElementOp,
    a: &QTensor,
    b: &QTensor,
    out: TensorFormat,
    mode: RoundingMode,
    rng: Option<&mut RngStream>,
    counts: &mut OpCounts,
) -> Result<QTensor> {
    let shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::ShapeMismatch {
        left: a.shape.clone(),
        right: b.shape.clone(),
    })?;
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let x = a.data[broadcast_index(i, &shape, &a.shape)];
        let y = b.data[broadcast_index(i, &shape, &b.shape)];
        data.push(match op {
            ElementOp::Add => x + y,
            ElementOp::Sub => x - y,
            ElementOp::Mul => x * y,
            ElementOp::Max => {
                if y > x {
                    y
                } else {
                    x
                }
            }
        });
    }
    let tally = n as u64;
    match op {
        ElementOp::Add | ElementOp::Sub => counts.add += tally,
        ElementOp::Mul => counts.mul += tally,
        ElementOp::Max => counts.cmp += tally,
    }
    let wide = QTensor {
        shape,
        data,
        fmt: TensorFormat::Wide,
    };
    quantize_tensor(&wide, out, mode, rng)
}
