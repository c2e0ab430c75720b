//! Golden suites behind the `conformance` subcommand.
//!
//! Every suite compares the implementation against an oracle written here
//! from first principles (bit-pattern decoding, binomial statistics, exact
//! products, finite differences) and reports the first failures with the
//! seed needed to reproduce them.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{synthesize, Split, SyntheticSpec};
use crate::error::Result;
use crate::network::{loss, KernelMode, LayerSpec, NetworkState, ParameterClass, Pass, SchemeConfig, Topology};
use crate::qformats::{
    bracket, enumerate_codepoints, pow2, quantize, stochastic_round, FloatFormat, GlobalScale, NumericFormat,
    RoundingMode, ScaledFormat,
};
use crate::qtensor::{dot, shift_dot, OpCounts, QTensor, TensorFormat};
use crate::rng::RngStream;
use crate::trainer::{self, TrainConfig};

/// Formats covered by the exhaustive and statistical suites.
pub const SUITE_FORMATS: [&str; 5] = ["fixed[0,12]", "fixed[6,6]", "float[5,6]", "float[4,7]", "float[6,0]"];

const MAX_REPORTED: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub seed: u64,
    pub checks: u64,
    pub failures: Vec<String>,
    /// Failures beyond the first few are only counted.
    pub failure_count: u64,
}

impl SuiteReport {
    fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            ..Self::default()
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failure_count += 1;
            if self.failures.len() < MAX_REPORTED {
                self.failures.push(msg());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failure_count == 0 && self.checks > 0
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{} {} ({} checks, {} failures, seed {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.failure_count,
            self.seed
        );
        for f in &self.failures {
            let _ = write!(s, "\n    {f}");
        }
        s
    }
}

/// One codepoint of the oracle: its magnitude code and value.
#[derive(Clone, Copy, Debug)]
struct Code {
    bits: u32,
    value: f64,
}

/// Decodes every bit pattern from the format definition alone.
fn oracle_codes(fmt: &NumericFormat) -> Vec<Code> {
    match fmt {
        NumericFormat::Fixed(f) => {
            let w = f.width();
            let half = 1i64 << (w - 1);
            (-half..half)
                .map(|k| Code {
                    bits: (k.rem_euclid(1i64 << w)) as u32,
                    value: k as f64 * pow2(-(f.frac_bits() as i32)),
                })
                .collect()
        }
        NumericFormat::Float(f) => {
            let (e, m) = (f.exp_bits(), f.man_bits());
            let bias = (1i32 << (e - 1)) - 1;
            let mut out = Vec::new();
            for bits in 0..1u32 << (1 + e + m) {
                let man = bits & ((1 << m) - 1);
                let exp = (bits >> m) & ((1 << e) - 1);
                let neg = bits >> (e + m) == 1;
                let mag = if exp == 0 {
                    man as f64 * pow2(1 - bias - m as i32)
                } else {
                    ((1u32 << m) + man) as f64 * pow2(exp as i32 - bias - m as i32)
                };
                out.push(Code {
                    bits,
                    value: if neg { -mag } else { mag },
                });
            }
            out
        }
        NumericFormat::Wide => Vec::new(),
    }
}

fn implementation_decode(fmt: &NumericFormat, bits: u32) -> f64 {
    match fmt {
        NumericFormat::Fixed(f) => f.decode(bits),
        NumericFormat::Float(f) => f.decode(bits),
        NumericFormat::Wide => f64::NAN,
    }
}

/// Applies a bias offset to float formats, to exercise the suite itself.
pub fn with_bias_offset(fmt: NumericFormat, offset: i32) -> Result<NumericFormat> {
    match fmt {
        NumericFormat::Float(f) if offset != 0 => Ok(NumericFormat::Float(FloatFormat::with_bias(
            f.exp_bits(),
            f.man_bits(),
            f.bias() + offset,
        )?)),
        other => Ok(other),
    }
}

/// Exhaustive check of decoding, enumeration, identity on codepoints, and
/// ties-to-even on every midpoint. `implementation` is normally `reference`.
pub fn codepoint_suite(reference: &NumericFormat, implementation: &NumericFormat) -> Result<SuiteReport> {
    let mut r = SuiteReport::new(&format!("codepoints {reference}"), 0);
    let codes = oracle_codes(reference);
    let width = reference.width().unwrap_or(0);
    let hex = (width as usize).div_ceil(4);
    for c in &codes {
        let got = implementation_decode(implementation, c.bits);
        r.check(got == c.value, || {
            format!("code 0x{:0hex$x}: expected {} got {}", c.bits, c.value, got)
        });
    }
    // sorted distinct values with the parity of their code
    let mut table: Vec<(f64, bool)> = codes
        .iter()
        .map(|c| (if c.value == 0.0 { 0.0 } else { c.value }, c.bits & 1 == 0))
        .collect();
    table.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    table.dedup_by(|a, b| a.0 == b.0);
    let listed = enumerate_codepoints(implementation)?;
    r.check(listed.len() == table.len(), || {
        format!(
            "enumerate_codepoints: expected {} values got {}",
            table.len(),
            listed.len()
        )
    });
    for (i, (v, l)) in table.iter().zip(&listed).enumerate() {
        r.check(v.0 == *l, || format!("codepoint #{i}: expected {} got {}", v.0, l));
    }
    let q = |x: f64| quantize(x, implementation, GlobalScale::ONE, RoundingMode::Nearest, None);
    for &(v, _) in &table {
        let got = q(v)?;
        r.check(got == v, || format!("quantize({v}) = {got}, not the identity"));
    }
    for pair in table.windows(2) {
        let ((lo, lo_even), (hi, _)) = (pair[0], pair[1]);
        let mid = lo + (hi - lo) / 2.0;
        let want = if lo_even { lo } else { hi };
        let got = q(mid)?;
        r.check(got == want, || {
            format!("tie {mid} between {lo} and {hi}: expected {want} got {got}")
        });
    }
    Ok(r)
}

/// Random probe points: half uniform over the range, half log-uniform in
/// magnitude so that small binades are covered.
fn probe(fmt: &NumericFormat, rng: &mut RngStream) -> f64 {
    let (lo, hi) = (fmt.min(), fmt.max());
    if rng.bernoulli(0.5) {
        lo + (hi - lo) * rng.unit()
    } else {
        let top = hi.abs().max(lo.abs());
        let x = top * pow2(-(rng.below(24) as i32)) * (0.5 + 0.5 * rng.unit());
        let x = if rng.bernoulli(0.5) { -x } else { x };
        x.clamp(lo, hi)
    }
}

/// Empirical mean of `draws` stochastic roundings within `sigmas` binomial
/// standard deviations of the input at each of `points` probes.
pub fn rounding_suite(fmt: &NumericFormat, points: usize, draws: usize, sigmas: f64, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new(&format!("stochastic rounding {fmt}"), seed);
    let root = RngStream::new(seed).derive_str("rounding").derive_str(&fmt.to_string());
    let mut probes = root.derive_str("points");
    for p in 0..points {
        let x = probe(fmt, &mut probes);
        let b = bracket(x, fmt, GlobalScale::ONE)?;
        let mut rng = root.derive(p as u64);
        let mut ups = 0u64;
        let mut stray = None;
        for _ in 0..draws {
            let v = stochastic_round(x, fmt, GlobalScale::ONE, &mut rng)?;
            if v == b.hi && b.hi != b.lo {
                ups += 1;
            } else if v != b.lo {
                stray = Some(v);
            }
        }
        r.check(stray.is_none(), || {
            format!("point {p}: x={x} rounded to {stray:?} outside [{}, {}]", b.lo, b.hi)
        });
        let n = draws as f64;
        let gap = b.hi - b.lo;
        let prob = if gap > 0.0 { (x - b.lo) / gap } else { 0.0 };
        let mean = b.lo + gap * ups as f64 / n;
        let sigma = gap * (prob * (1.0 - prob) / n).sqrt();
        let err = (mean - x).abs();
        r.check(err <= sigmas * sigma + 1e-15 * x.abs(), || {
            format!(
                "point {p}: x={x} mean={mean} |err|={err:e} > {sigmas}σ={:e}",
                sigmas * sigma
            )
        });
    }
    Ok(r)
}

fn pick_code(codes: &[f64], rng: &mut RngStream) -> f64 {
    codes[rng.below(codes.len())]
}

/// `shift_dot` against `dot` on random fixed[0,12] · pot vectors, compared
/// bit for bit, with both a wide and a fixed[6,6] output.
pub fn shift_suite(pairs: usize, max_len: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("shift equivalence", seed);
    let wf = NumericFormat::fixed(0, 12)?;
    let xf = NumericFormat::pot(6)?;
    let wcodes = enumerate_codepoints(&wf)?;
    let xcodes = enumerate_codepoints(&xf)?;
    let outs = [
        ScaledFormat::wide(),
        ScaledFormat::unscaled(NumericFormat::fixed(6, 6)?),
    ];
    let mut rng = RngStream::new(seed).derive_str("shift");
    for p in 0..pairs {
        let n = 1 + rng.below(max_len);
        let w: Vec<f64> = (0..n).map(|_| pick_code(&wcodes, &mut rng)).collect();
        let x: Vec<f64> = if p % 4 == 3 {
            // every fourth pair spans the full pot range
            (0..n).map(|_| pick_code(&xcodes, &mut rng)).collect()
        } else {
            // the rest stay in the dynamic range seen in training
            (0..n)
                .map(|_| {
                    if rng.bernoulli(0.1) {
                        return 0.0;
                    }
                    let v = pow2(rng.below(24) as i32 - 16);
                    if rng.bernoulli(0.5) {
                        -v
                    } else {
                        v
                    }
                })
                .collect()
        };
        let wt = QTensor::vector(w.clone(), TensorFormat::Plain(ScaledFormat::unscaled(wf)))?;
        let xt = QTensor::vector(x.clone(), TensorFormat::Plain(ScaledFormat::unscaled(xf)))?;
        let exact: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        for out in &outs {
            let mut c1 = OpCounts::default();
            let mut c2 = OpCounts::default();
            let a = dot(&wt, &xt, out, RoundingMode::Nearest, None, &mut c1)?;
            let b = shift_dot(&wt, &xt, out, RoundingMode::Nearest, None, &mut c2)?;
            r.check(a.to_bits() == b.to_bits(), || {
                format!("pair {p} (len {n}) into {out}: dot {a:e} shift_dot {b:e}")
            });
            if out.format == NumericFormat::Wide {
                r.check(a == exact, || {
                    format!("pair {p}: dot {a:e} differs from the exact sum {exact:e}")
                });
            }
        }
    }
    Ok(r)
}

/// One pot-scheme epoch with shift kernels and again with multiply kernels;
/// every parameter, metric and tally must agree bit for bit.
pub fn shift_epoch_suite(topology: Topology, data: &SyntheticSpec, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new(&format!("pot epoch shift = multiply ({})", topology.name), seed);
    let train = synthesize(data, Split::Train)?;
    let test = synthesize(data, Split::Test)?;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 50,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let mut runs = Vec::new();
    for mode in [KernelMode::Auto, KernelMode::Multiply] {
        let mut s = NetworkState::new(
            topology.clone(),
            SchemeConfig::from_name("pot")?,
            RoundingMode::Stochastic,
            seed,
        )?;
        s.set_kernel_mode(mode);
        let summary = trainer::train(&mut s, &train, &test, &cfg, |_, _| Ok(()))?;
        runs.push((s, summary));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let m = (&a.1.epochs[0], &b.1.epochs[0]);
    r.check(m.0.train_loss.to_bits() == m.1.train_loss.to_bits(), || {
        format!("train loss {} vs {}", m.0.train_loss, m.1.train_loss)
    });
    r.check(m.0.test_accuracy == m.1.test_accuracy, || {
        format!("test accuracy {} vs {}", m.0.test_accuracy, m.1.test_accuracy)
    });
    r.check(m.0.ops.shift > 0 && m.1.ops.shift == 0, || {
        "kernels did not switch".into()
    });
    r.check(m.0.ops.shift + m.0.ops.mul <= m.1.ops.mul, || {
        format!(
            "shift tally {} + mul {} exceeds multiply tally {}",
            m.0.ops.shift, m.0.ops.mul, m.1.ops.mul
        )
    });
    for (i, (pa, pb)) in a.0.layer_params().iter().zip(b.0.layer_params()).enumerate() {
        if let (Some(pa), Some(pb)) = (pa, pb) {
            for c in [
                ParameterClass::Weights,
                ParameterClass::Biases,
                ParameterClass::WeightUpdates,
                ParameterClass::BiasUpdates,
            ] {
                let (va, vb) = (pa.tensor(c).expect("stored").0, pb.tensor(c).expect("stored").0);
                let same = va.len() == vb.len() && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits());
                r.check(same, || format!("layer {i} {c} differs"));
            }
        }
    }
    Ok(r)
}

/// Small network with every layer kind, including a bias-free FC layer.
pub fn gradient_topology() -> Topology {
    Topology {
        name: "gradcheck".into(),
        input: (2, 7, 7),
        layers: vec![
            LayerSpec::conv("conv1", 3, 3, 1, 1),
            LayerSpec::max_pool("pool1", 3, 2),
            LayerSpec::relu("relu1"),
            LayerSpec::conv("conv2", 4, 3, 2, 1),
            LayerSpec::relu("relu2"),
            LayerSpec::fc("fc1", 6),
            LayerSpec::relu("relu3"),
            LayerSpec::dropout("drop1", 0.7),
            LayerSpec::FullyConnected {
                name: "fc2".into(),
                outputs: 4,
                bias: false,
            },
            LayerSpec::fc("fc3", 3),
            LayerSpec::softmax("loss"),
        ],
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central finite differences against backward on wide formats, for every
/// parameter of every parametric layer. Each report line names the layer.
pub fn gradient_suite(
    topology: Topology,
    batch: usize,
    tolerance: f64,
    seed: u64,
) -> Result<(SuiteReport, Vec<(String, f64)>)> {
    let mut r = SuiteReport::new(&format!("gradient check ({})", topology.name), seed);
    let mut state = NetworkState::new(
        topology,
        SchemeConfig::from_name("fp32-baseline")?,
        RoundingMode::Nearest,
        seed,
    )?;
    let mut rng = RngStream::new(seed).derive_str("gradcheck");
    for i in 0..state.layer_params().len() {
        if state.layer_params()[i].is_none() {
            continue;
        }
        for c in [ParameterClass::Weights, ParameterClass::Biases] {
            let n = state.layer_params()[i]
                .as_ref()
                .expect("params")
                .tensor(c)
                .expect("stored")
                .0
                .len();
            let v: Vec<f64> = (0..n).map(|_| 0.5 * rng.normal()).collect();
            state.set_tensor(i, c, v)?;
        }
    }
    let x: Vec<f64> = (0..batch * state.input_len()).map(|_| rng.normal()).collect();
    let classes = state.classes();
    let y: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
    let cache = state.forward(&x, batch, Pass::Train)?;
    let grads = state.backward(&cache, &y)?;
    let h = 1e-5;
    let mut worst = Vec::new();
    for i in 0..state.layer_params().len() {
        let Some((gw, gb)) = grads.params[i].clone() else {
            continue;
        };
        let name = state.topology().layers[i].name().to_string();
        let mut layer_worst: f64 = 0.0;
        for (c, g) in [(ParameterClass::Weights, gw), (ParameterClass::Biases, gb)] {
            let base = state.layer_params()[i]
                .as_ref()
                .expect("params")
                .tensor(c)
                .expect("stored")
                .0
                .to_vec();
            for (j, &analytic) in g.iter().enumerate() {
                let probe = |delta: f64, state: &mut NetworkState| -> Result<f64> {
                    let mut v = base.clone();
                    v[j] += delta;
                    state.set_tensor(i, c, v)?;
                    let out = state.forward(&x, batch, Pass::Train)?;
                    loss(&out.logits, &y, classes)
                };
                let up = probe(h, &mut state)?;
                let down = probe(-h, &mut state)?;
                state.set_tensor(i, c, base.clone())?;
                let numeric = (up - down) / (2.0 * h);
                let e = rel_error(analytic, numeric);
                layer_worst = layer_worst.max(e);
                r.check(e < tolerance, || {
                    format!("{name} {c}[{j}]: analytic {analytic:e} numeric {numeric:e} rel {e:e}")
                });
            }
        }
        worst.push((name, layer_worst));
    }
    Ok((r, worst))
}

/// Suite sizes for [`run_all`].
#[derive(Clone, Debug)]
pub struct SuitePlan {
    pub seed: u64,
    pub rounding_points: usize,
    pub rounding_draws: usize,
    pub shift_pairs: usize,
    pub shift_max_len: usize,
    /// Added to every float bias on the implementation side; nonzero values
    /// must make the codepoint suites fail.
    pub inject_bias_offset: i32,
}

impl Default for SuitePlan {
    fn default() -> Self {
        Self {
            seed: 1,
            rounding_points: 1000,
            rounding_draws: 100_000,
            shift_pairs: 10_000,
            shift_max_len: 512,
            inject_bias_offset: 0,
        }
    }
}

pub fn run_all(plan: &SuitePlan, mut emit: impl FnMut(&SuiteReport)) -> Result<bool> {
    let mut ok = true;
    let mut record = |r: SuiteReport| {
        ok &= r.passed();
        emit(&r);
    };
    for f in SUITE_FORMATS {
        let reference: NumericFormat = f.parse()?;
        let implementation = with_bias_offset(reference, plan.inject_bias_offset)?;
        record(codepoint_suite(&reference, &implementation)?);
    }
    for f in SUITE_FORMATS {
        record(rounding_suite(
            &f.parse()?,
            plan.rounding_points,
            plan.rounding_draws,
            4.0,
            plan.seed,
        )?);
    }
    record(shift_suite(plan.shift_pairs, plan.shift_max_len, plan.seed)?);
    let spec = SyntheticSpec {
        classes: 4,
        per_class: 25,
        shape: (3, 8, 8),
        seed: plan.seed,
        ..SyntheticSpec::default()
    };
    record(shift_epoch_suite(Topology::compact((3, 8, 8), 4), &spec, plan.seed)?);
    record(gradient_suite(gradient_topology(), 3, 1e-4, plan.seed)?.0);
    Ok(ok)
}
