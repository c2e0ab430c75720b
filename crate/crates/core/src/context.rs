//! Locally scaled ("context") representations.
//!
//! A context is a group of same-class values from one layer that share a
//! single power-of-two scale. The scale exponent is the rounded mean of
//! `log2|x|` over the group's nonzero members; members are then stored on the
//! base grid translated by that scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkState, ParameterClass};
use crate::qformats::{self, FixedFormat, FloatFormat, GlobalScale, NumericFormat, RoundingMode, ScaledFormat};
use crate::qtensor::OpCounts;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub scale_exponent: i32,
    pub member_count: usize,
}

impl Context {
    pub fn new(id: impl Into<String>, scale_exponent: i32, member_count: usize) -> Self {
        Self {
            id: id.into(),
            scale_exponent,
            member_count,
        }
    }

    pub fn scale(&self) -> f64 {
        qformats::pow2(self.scale_exponent)
    }
}

/// Relative grid of a context representation, independent of any scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextBase {
    /// `I` bits above the scale factor, `F` bits below it.
    Fixed(FixedFormat),
    /// Exponent field read as a two's-complement offset from the scale
    /// factor; the most negative offset is the subnormal binade.
    Float(FloatFormat),
}

impl ContextBase {
    pub fn fixed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        FixedFormat::new(int_bits, frac_bits).map(Self::Fixed)
    }

    pub fn float(exp_bits: u32, man_bits: u32) -> Result<Self> {
        if exp_bits == 0 {
            return Err(Error::InvalidFormat("context float needs exponent bits".into()));
        }
        FloatFormat::with_bias(exp_bits, man_bits, 1 << (exp_bits - 1)).map(Self::Float)
    }

    pub fn numeric(&self) -> NumericFormat {
        match *self {
            Self::Fixed(f) => NumericFormat::Fixed(f),
            Self::Float(f) => NumericFormat::Float(f),
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            Self::Fixed(f) => f.width(),
            Self::Float(f) => f.width(),
        }
    }
}

impl std::fmt::Display for ContextBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(x) => write!(f, "ctx-fixed[{},{}]", x.int_bits(), x.frac_bits()),
            Self::Float(x) => write!(f, "ctx-float[{},{}]", x.exp_bits(), x.man_bits()),
        }
    }
}

impl std::str::FromStr for ContextBase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(format!("cannot parse context format '{s}'"));
        let (name, args) = qformats::parse_call(s.trim()).ok_or_else(bad)?;
        match (name, args.as_slice()) {
            ("ctx-fixed" | "context-fixed", [i, f]) => Self::fixed(*i, *f),
            ("ctx-float" | "context-float", [e, m]) => Self::float(*e, *m),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextFormat {
    pub base: ContextBase,
    pub context: Context,
}

impl ContextFormat {
    pub fn new(base: ContextBase, context: Context) -> Self {
        Self { base, context }
    }

    /// The absolute grid: base grid scaled by `2^scale_exponent`.
    pub fn grid(&self) -> ScaledFormat {
        ScaledFormat::new(self.base.numeric(), GlobalScale(self.context.scale_exponent))
    }
}

/// Rounded mean of `log2|x|` over the nonzero members; 0 when all are zero.
pub fn compute_scale_exponent(values: &[f64]) -> Result<i32> {
    if values.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(v));
        }
        if v != 0.0 {
            sum += v.abs().log2();
            n += 1;
        }
    }
    if n == 0 {
        return Ok(0);
    }
    Ok((sum / n as f64).round() as i32)
}

pub fn compute_scale_factor(values: &[f64]) -> Result<Context> {
    Ok(Context::new("", compute_scale_exponent(values)?, values.len()))
}

/// `2^s * quantize(x / 2^s, base)`, computed without loss since the scale is
/// a power of two.
pub fn context_quantize(x: f64, cf: &ContextFormat, mode: RoundingMode, rng: Option<&mut RngStream>) -> Result<f64> {
    let g = cf.grid();
    qformats::quantize(x, &g.format, g.scale, mode, rng)
}

/// Moves a value between contexts. The value is carried in wide precision
/// so it is unchanged; the alignment step is recorded as one scale-adjust.
pub fn rescale(x: f64, _from: &Context, _to: &Context, counts: &mut OpCounts) -> f64 {
    counts.scale_adjust += 1;
    x
}

/// Recomputes a context from `values` and requantizes them in place under it.
pub fn requantize_in_context(
    values: &mut [f64],
    base: ContextBase,
    id: &str,
    mode: RoundingMode,
    mut rng: Option<&mut RngStream>,
) -> Result<Context> {
    let ctx = Context::new(id, compute_scale_exponent(values)?, values.len());
    let cf = ContextFormat::new(base, ctx);
    for v in values.iter_mut() {
        *v = context_quantize(*v, &cf, mode, rng.as_deref_mut())?;
    }
    Ok(cf.context)
}

/// Recomputes every context of a stored parameter class and requantizes its
/// members. Transient classes (outputs, gradients) are refreshed by the
/// forward and backward passes from the current batch, so this is a no-op
/// for them.
pub fn refresh_contexts(model: &mut NetworkState, class: ParameterClass) -> Result<Vec<Context>> {
    model.refresh_class(class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qformats::pow2;

    #[test]
    fn scale_factor_examples() {
        assert_eq!(compute_scale_exponent(&[1.0, 4.0]).unwrap(), 1);
        assert_eq!(compute_scale_factor(&[1.0, 4.0]).unwrap().scale(), 2.0);
        assert_eq!(compute_scale_exponent(&[0.5, 0.5, 0.5]).unwrap(), -1);
        assert_eq!(compute_scale_exponent(&[0.0, 8.0]).unwrap(), 3);
        assert_eq!(compute_scale_exponent(&[0.0, 0.0]).unwrap(), 0);
        assert!(matches!(compute_scale_exponent(&[]), Err(Error::EmptyCollection)));
    }

    #[test]
    fn scale_exponent_matches_direct_mean() {
        let vals = [0.013, -0.2, 0.0, 3.5e-4, 0.07];
        let nz: Vec<f64> = vals.iter().copied().filter(|v| *v != 0.0).collect();
        let direct = nz.iter().map(|v| v.abs().ln() / 2f64.ln()).sum::<f64>() / nz.len() as f64;
        assert_eq!(compute_scale_exponent(&vals).unwrap(), direct.round() as i32);
    }

    #[test]
    fn context_fixed_grid() {
        let cf = ContextFormat::new(ContextBase::fixed(6, 6).unwrap(), Context::new("c", -4, 1));
        let q = context_quantize(0.011, &cf, RoundingMode::Nearest, None).unwrap();
        assert_eq!(q, 11.0 * pow2(-10));
        assert_eq!(context_quantize(0.0, &cf, RoundingMode::Nearest, None).unwrap(), 0.0);
    }

    #[test]
    fn context_float_relative_exponent() {
        let s = -9;
        let cf = ContextFormat::new(ContextBase::float(4, 7).unwrap(), Context::new("c", s, 1));
        let x = pow2(s + 3);
        assert!(cf.grid().is_representable(x));
        assert_eq!(context_quantize(x, &cf, RoundingMode::Nearest, None).unwrap(), x);
        // e_rel spans -8..=7: the largest magnitude sits just under 2^(s+8)
        assert!(cf.grid().max() < pow2(s + 8));
        assert!(cf.grid().max() >= pow2(s + 7));
        // smallest normal binade starts at 2^(s-7)
        assert!(cf.grid().is_representable(pow2(s - 7)));
    }

    #[test]
    fn rescale_is_value_preserving() {
        let a = Context::new("a", -2, 1);
        let b = Context::new("b", -5, 1);
        let mut c = OpCounts::default();
        assert_eq!(rescale(0.25, &a, &b, &mut c), 0.25);
        assert_eq!(c.scale_adjust, 1);
        assert_eq!(rescale(rescale(0.25, &a, &b, &mut c), &b, &a, &mut c), 0.25);
        assert_eq!(c.scale_adjust, 3);
    }

    #[test]
    fn shift_equivariance() {
        let base = ContextBase::float(4, 7).unwrap();
        let vals: Vec<f64> = (0..50).map(|i| ((i * 37 % 101) as f64 - 50.0) * 1.7e-3).collect();
        for mode in [RoundingMode::Nearest, RoundingMode::Truncate, RoundingMode::Stochastic] {
            let mut a = vals.clone();
            let mut b: Vec<f64> = vals.iter().map(|v| v * 32.0).collect();
            let mut ra = RngStream::new(5);
            let mut rb = RngStream::new(5);
            let ca = requantize_in_context(&mut a, base, "a", mode, Some(&mut ra)).unwrap();
            let cb = requantize_in_context(&mut b, base, "b", mode, Some(&mut rb)).unwrap();
            assert_eq!(cb.scale_exponent, ca.scale_exponent + 5);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x * 32.0, *y);
            }
        }
    }

    #[test]
    fn parse_context_formats() {
        let b: ContextBase = "ctx-fixed[6,6]".parse().unwrap();
        assert_eq!(b.to_string(), "ctx-fixed[6,6]");
        let b: ContextBase = "ctx-float[4,7]".parse().unwrap();
        assert_eq!(b.width(), 12);
        assert!("ctx-pot[6]".parse::<ContextBase>().is_err());
    }
}
