//! Analytical training-time and memory estimates.
//!
//! Time is `sum(count(kind) * cost(kind))`, with every narrow (12-bit) kind
//! divided by the SIMD ratio `wide_bits / narrow_bits`. Operation counts are
//! closed-form per layer and mirror exactly what the instrumented kernels
//! tally, except that power-of-two schemes are charged a shift for every
//! product (the kernels skip products with a zero operand).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::ContextBase;
use crate::error::{Error, Result};
use crate::network::{numel, FormatSpec, LayerSpec, SchemeConfig, Topology};
use crate::qformats::NumericFormat;
use crate::qtensor::OpCounts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Mul32,
    Add32,
    FloatMul12,
    FloatAdd12,
    FixedMul12,
    FixedAdd12,
    Shift,
    Cmp,
    ScaleAdjustFloat,
    ScaleAdjustFixed,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        Self::Mul32,
        Self::Add32,
        Self::FloatMul12,
        Self::FloatAdd12,
        Self::FixedMul12,
        Self::FixedAdd12,
        Self::Shift,
        Self::Cmp,
        Self::ScaleAdjustFloat,
        Self::ScaleAdjustFixed,
    ];

    /// Narrow kinds run `simd_ratio` lanes per wide operation.
    pub fn is_narrow(&self) -> bool {
        !matches!(self, Self::Mul32 | Self::Add32)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mul32 => "mul32",
            Self::Add32 => "add32",
            Self::FloatMul12 => "float-mul12",
            Self::FloatAdd12 => "float-add12",
            Self::FixedMul12 => "fixed-mul12",
            Self::FixedAdd12 => "fixed-add12",
            Self::Shift => "shift",
            Self::Cmp => "cmp",
            Self::ScaleAdjustFloat => "scale-adjust-float",
            Self::ScaleAdjustFixed => "scale-adjust-fixed",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-operation cost in abstract time units (the shipped table uses hours).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    #[serde(default)]
    pub note: String,
    pub units: String,
    pub wide_bits: u32,
    pub narrow_bits: u32,
    pub costs: BTreeMap<OpKind, f64>,
}

/// The calibration table shipped with the crate.
pub const DEFAULT_COST_TABLE: &str = include_str!("../data/cost_table.json");

impl CostTable {
    pub fn default_table() -> Self {
        serde_json::from_str(DEFAULT_COST_TABLE).expect("shipped cost table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn simd_ratio(&self) -> f64 {
        self.wide_bits as f64 / self.narrow_bits as f64
    }

    pub fn cost(&self, k: OpKind) -> Result<f64> {
        self.costs
            .get(&k)
            .copied()
            .ok_or_else(|| Error::MissingCostEntry(k.to_string()))
    }

    /// Effective cost of one operation after the SIMD rule.
    pub fn effective(&self, k: OpKind) -> Result<f64> {
        let c = self.cost(k)?;
        Ok(if k.is_narrow() { c / self.simd_ratio() } else { c })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.costs.values_mut().for_each(|c| *c *= factor);
        t
    }
}

/// How a scheme's generic tallies map to op kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KindMap {
    pub mul: OpKind,
    pub add: OpKind,
    pub scale_adjust: OpKind,
}

fn is_float(f: &FormatSpec) -> bool {
    match f {
        FormatSpec::Plain(s) => matches!(s.format, NumericFormat::Float(_)),
        FormatSpec::Context(b) => matches!(b, ContextBase::Float(_)),
        FormatSpec::Wide => true,
    }
}

impl KindMap {
    /// Arithmetic follows the weights' representation; scale adjustments
    /// follow the first context class found.
    pub fn for_scheme(s: &SchemeConfig) -> Self {
        let (mul, add) = match s.weights {
            FormatSpec::Wide => (OpKind::Mul32, OpKind::Add32),
            w if is_float(&w) => (OpKind::FloatMul12, OpKind::FloatAdd12),
            _ => (OpKind::FixedMul12, OpKind::FixedAdd12),
        };
        let ctx_float = [s.weights, s.outputs, s.gradients, s.weight_updates]
            .iter()
            .find(|f| f.is_context())
            .is_some_and(is_float);
        Self {
            mul,
            add,
            scale_adjust: if ctx_float {
                OpKind::ScaleAdjustFloat
            } else {
                OpKind::ScaleAdjustFixed
            },
        }
    }

    pub fn by_kind(&self, c: &OpCounts) -> BTreeMap<OpKind, u64> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            (self.mul, c.mul),
            (self.add, c.add),
            (OpKind::Shift, c.shift),
            (OpKind::Cmp, c.cmp),
            (self.scale_adjust, c.scale_adjust),
        ] {
            if v > 0 {
                *m.entry(k).or_insert(0) += v;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub layer: String,
    pub counts: OpCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub layers: Vec<LayerOps>,
    pub total: OpCounts,
}

/// An empty topology costs nothing.
fn geometry_or_empty(t: &Topology) -> Result<Vec<crate::network::LayerGeometry>> {
    if t.layers.is_empty() {
        Ok(Vec::new())
    } else {
        t.geometry()
    }
}

/// Closed-form tallies of one training iteration (forward, backward,
/// update) on a batch of `n` images, per layer.
pub fn batch_ops(topology: &Topology, scheme: &SchemeConfig, n: usize, pot_hyper: bool) -> Result<Vec<LayerOps>> {
    let geo = geometry_or_empty(topology)?;
    let n = n as u64;
    let fwd_shift = scheme.outputs.is_pot();
    let bwd_shift = scheme.gradients.is_pot();
    let out_ctx = scheme.outputs.is_context();
    let grad_ctx = scheme.gradients.is_context();
    let first_param = topology.layers.iter().position(|l| l.has_params()).unwrap_or(0);
    let mut out = Vec::with_capacity(geo.len());
    for (i, (l, g)) in topology.layers.iter().zip(&geo).enumerate() {
        let mut c = OpCounts::default();
        let product = |c: &mut OpCounts, count: u64, shift: bool| {
            if shift {
                c.shift += count;
            } else {
                c.mul += count;
            }
        };
        let sa = |on: bool, v: u64| if on { v } else { 0 };
        let in_len = numel(g.input) as u64;
        let out_len = numel(g.output) as u64;
        match l {
            LayerSpec::Conv {
                kernel, stride, pad, ..
            } => {
                let (ci, h, w) = g.input;
                let (oc, oh, ow) = g.output;
                let geom = crate::network::kernels::ConvGeom {
                    c: ci,
                    h,
                    w,
                    oc,
                    k: *kernel,
                    stride: *stride,
                    pad: *pad,
                    oh,
                    ow,
                };
                let (kp, np, oc) = (geom.patch() as u64, geom.positions() as u64, oc as u64);
                let outs = n * oc * np;
                product(&mut c, outs * kp, fwd_shift);
                c.add += outs * kp;
                c.scale_adjust += sa(out_ctx, outs);
                product(&mut c, oc * kp * n * np, bwd_shift);
                c.add += oc * kp * (n * np - 1) + oc * (n * np - 1);
                c.scale_adjust += sa(grad_ctx, oc * kp + oc);
                if i != first_param {
                    let v: u64 = geom.in_bounds().iter().sum();
                    product(&mut c, n * v * oc, bwd_shift);
                    c.add += n * v * oc;
                    c.scale_adjust += sa(grad_ctx, n * in_len);
                }
            }
            LayerSpec::FullyConnected { bias, .. } => {
                let (ins, outs) = (in_len, out_len);
                product(&mut c, n * outs * ins, fwd_shift);
                c.add += n * outs * (ins - 1) + if *bias { n * outs } else { 0 };
                c.scale_adjust += sa(out_ctx, n * outs);
                product(&mut c, outs * ins * n, bwd_shift);
                c.add += outs * ins * (n - 1) + if *bias { outs * (n - 1) } else { 0 };
                c.scale_adjust += sa(grad_ctx, outs * ins + if *bias { outs } else { 0 });
                if i != first_param {
                    product(&mut c, n * ins * outs, bwd_shift);
                    c.add += n * ins * (outs - 1);
                    c.scale_adjust += sa(grad_ctx, n * ins);
                }
            }
            LayerSpec::MaxPool { kernel, .. } => {
                c.cmp += n * out_len * (kernel * kernel - 1) as u64;
                if i > first_param {
                    c.add += n * out_len;
                    c.scale_adjust += sa(grad_ctx, n * in_len);
                }
            }
            LayerSpec::Relu { .. } | LayerSpec::Dropout { .. } => c.cmp += n * out_len,
            LayerSpec::SoftmaxXent { .. } => c.scale_adjust += sa(grad_ctx, n * out_len),
        }
        if l.has_params() {
            for (count, wc, uc) in [
                (g.weight_count as u64, scheme.weights, scheme.weight_updates),
                (g.bias_count as u64, scheme.biases, scheme.bias_updates),
            ] {
                if pot_hyper {
                    c.shift += 3 * count;
                } else {
                    c.mul += 3 * count;
                }
                c.add += 3 * count;
                c.scale_adjust += sa(wc.is_context(), count) + sa(uc.is_context(), count);
            }
        }
        out.push(LayerOps {
            layer: l.name().to_string(),
            counts: c,
        });
    }
    Ok(out)
}

/// Training tallies for `epochs` passes over `dataset_size` images.
pub fn count_ops(
    topology: &Topology,
    scheme: &SchemeConfig,
    dataset_size: usize,
    epochs: usize,
    batch_size: usize,
    pot_hyper: bool,
) -> Result<OpReport> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let full = (dataset_size / batch_size) as u64 * epochs as u64;
    let rest = dataset_size % batch_size;
    let a = batch_ops(topology, scheme, batch_size, pot_hyper)?;
    let b = if rest > 0 {
        Some(batch_ops(topology, scheme, rest, pot_hyper)?)
    } else {
        None
    };
    let mut layers = Vec::with_capacity(a.len());
    let mut total = OpCounts::default();
    for (i, la) in a.iter().enumerate() {
        let mut c = scale_counts(&la.counts, full);
        if let Some(b) = &b {
            c += scale_counts(&b[i].counts, epochs as u64);
        }
        total += c;
        layers.push(LayerOps {
            layer: la.layer.clone(),
            counts: c,
        });
    }
    Ok(OpReport { layers, total })
}

fn scale_counts(c: &OpCounts, k: u64) -> OpCounts {
    OpCounts {
        mul: c.mul * k,
        add: c.add * k,
        shift: c.shift * k,
        cmp: c.cmp * k,
        scale_adjust: c.scale_adjust * k,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeReport {
    pub layers: Vec<(String, f64)>,
    pub total: f64,
}

pub fn time_of(counts: &OpCounts, table: &CostTable, map: &KindMap) -> Result<f64> {
    let mut t = 0.0;
    for (k, v) in map.by_kind(counts) {
        t += v as f64 * table.effective(k)?;
    }
    Ok(t)
}

pub fn estimate_time(report: &OpReport, table: &CostTable, scheme: &SchemeConfig) -> Result<TimeReport> {
    let map = KindMap::for_scheme(scheme);
    let mut layers = Vec::with_capacity(report.layers.len());
    let mut total = 0.0;
    for l in &report.layers {
        let t = time_of(&l.counts, table, &map)?;
        total += t;
        layers.push((l.layer.clone(), t));
    }
    Ok(TimeReport { layers, total })
}

/// Fitted totals (hours to train 40 epochs of 50,000 images) that the
/// calibration reproduces.
pub const CALIBRATION_TARGETS: [(&str, f64); 5] = [
    ("fp32-baseline", 2.0),
    ("fixed12", 0.3739916292),
    ("pot", 0.2282776801),
    ("ctx-fixed12", 0.751287616675702),
    ("ctx-float12", 1.291214067),
];

/// Reference float12 total; predicted, not fitted.
pub const FLOAT12_REFERENCE: f64 = 0.751287616675702;

/// Solves the per-op costs, one scheme at a time:
/// fp32 fixes the float op cost (float12 reuses it under the SIMD rule),
/// fixed12 the fixed op cost, pot the shift cost, and the two context
/// schemes their scale-adjust costs. Comparisons cost nothing.
pub fn calibrate(topology: &Topology, dataset_size: usize, epochs: usize, batch_size: usize) -> Result<CostTable> {
    let report = |name: &str| -> Result<OpCounts> {
        let s = SchemeConfig::from_name(name)?;
        Ok(count_ops(topology, &s, dataset_size, epochs, batch_size, false)?.total)
    };
    let target = |name: &str| CALIBRATION_TARGETS.iter().find(|t| t.0 == name).expect("target").1;
    let (wide_bits, narrow_bits) = (32u32, 12u32);
    let simd = wide_bits as f64 / narrow_bits as f64;
    let positive = |name: &str, v: f64| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("calibration for {name} is not positive ({v})")))
        }
    };

    let fp = report("fp32-baseline")?;
    let c_float = positive("fp32-baseline", target("fp32-baseline") / (fp.mul + fp.add) as f64)?;
    let fx = report("fixed12")?;
    let c_fixed = positive("fixed12", target("fixed12") * simd / (fx.mul + fx.add) as f64)?;
    let pot = report("pot")?;
    let rest = c_fixed * (pot.mul + pot.add) as f64 / simd;
    let c_shift = positive("pot", (target("pot") - rest) * simd / pot.shift as f64)?;
    let cf = report("ctx-fixed12")?;
    let base = c_fixed * (cf.mul + cf.add) as f64 / simd;
    let c_saf = positive(
        "ctx-fixed12",
        (target("ctx-fixed12") - base) * simd / cf.scale_adjust as f64,
    )?;
    let cl = report("ctx-float12")?;
    let base = c_float * (cl.mul + cl.add) as f64 / simd;
    let c_sal = positive(
        "ctx-float12",
        (target("ctx-float12") - base) * simd / cl.scale_adjust as f64,
    )?;

    let costs = BTreeMap::from([
        (OpKind::Mul32, c_float),
        (OpKind::Add32, c_float),
        (OpKind::FloatMul12, c_float),
        (OpKind::FloatAdd12, c_float),
        (OpKind::FixedMul12, c_fixed),
        (OpKind::FixedAdd12, c_fixed),
        (OpKind::Shift, c_shift),
        (OpKind::Cmp, 0.0),
        (OpKind::ScaleAdjustFloat, c_sal),
        (OpKind::ScaleAdjustFixed, c_saf),
    ]);
    Ok(CostTable {
        note: "calibration fitted to reference totals, not a hardware measurement".into(),
        units: "hours".into(),
        wide_bits,
        narrow_bits,
        costs,
    })
}

/// Storage convention for [`estimate_memory`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    /// Images whose activations and activation gradients are resident.
    pub resident_images: usize,
    /// Elements are padded to a multiple of this many bits.
    pub packing_bits: u32,
    /// Bytes per reported megabyte.
    pub bytes_per_mb: f64,
}

impl Default for MemoryModel {
    /// Fitted convention: 14 resident images, nibble packing (so a 7-bit
    /// power-of-two value occupies 8 bits), decimal megabytes.
    fn default() -> Self {
        Self {
            resident_images: 14,
            packing_bits: 4,
            bytes_per_mb: 1e6,
        }
    }
}

impl MemoryModel {
    pub fn stored_bits(&self, bits: u32) -> u32 {
        bits.div_ceil(self.packing_bits) * self.packing_bits
    }

    fn bytes(&self, count: usize, f: &FormatSpec) -> f64 {
        count as f64 * self.stored_bits(f.bits()) as f64 / 8.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMemory {
    pub layer: String,
    pub parameters: f64,
    pub momentum: f64,
    pub outputs: f64,
    pub gradients: f64,
}

impl LayerMemory {
    pub fn total(&self) -> f64 {
        self.parameters + self.momentum + self.outputs + self.gradients
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub layers: Vec<LayerMemory>,
    /// Total in bytes.
    pub total: f64,
    pub total_mb: f64,
}

/// Weights, biases and their momentum buffers, plus one output and one
/// gradient buffer per layer for the resident images. The loss layer holds
/// nothing.
pub fn estimate_memory(topology: &Topology, scheme: &SchemeConfig, model: &MemoryModel) -> Result<MemoryReport> {
    let geo = geometry_or_empty(topology)?;
    let mut layers = Vec::with_capacity(geo.len());
    let mut total = 0.0;
    for (l, g) in topology.layers.iter().zip(&geo) {
        let acts = if matches!(l, LayerSpec::SoftmaxXent { .. }) {
            0
        } else {
            numel(g.output) * model.resident_images
        };
        let m = LayerMemory {
            layer: l.name().to_string(),
            parameters: model.bytes(g.weight_count, &scheme.weights) + model.bytes(g.bias_count, &scheme.biases),
            momentum: model.bytes(g.weight_count, &scheme.weight_updates)
                + model.bytes(g.bias_count, &scheme.bias_updates),
            outputs: model.bytes(acts, &scheme.outputs),
            gradients: model.bytes(acts, &scheme.gradients),
        };
        total += m.total();
        layers.push(m);
    }
    Ok(MemoryReport {
        layers,
        total,
        total_mb: total / model.bytes_per_mb,
    })
}

/// Reference memory totals in MB: fp32, any uniform 12-bit scheme, pot.
pub const MEMORY_REFERENCE_MB: [(&str, f64); 3] =
    [("fp32-baseline", 12.702256), ("float12", 4.763346), ("pot", 3.783888)];

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme(n: &str) -> SchemeConfig {
        SchemeConfig::from_name(n).unwrap()
    }

    #[test]
    fn fc_closed_form() {
        let t = Topology {
            name: "t".into(),
            input: (3, 1, 1),
            layers: vec![
                LayerSpec::FullyConnected {
                    name: "fc".into(),
                    outputs: 1,
                    bias: false,
                },
                LayerSpec::softmax("loss"),
            ],
        };
        // forward only: drop the gradient and update terms by hand
        let ops = batch_ops(&t, &scheme("fp32-baseline"), 1, false).unwrap();
        let c = ops[0].counts;
        // forward 3 mul + 2 add, weight grads 3 mul + 0 add, update 9 mul + 9 add
        assert_eq!(c.mul, 3 + 3 + 9);
        assert_eq!(c.add, 2 + 9);
    }

    #[test]
    fn conv1_forward_macs() {
        let t = Topology::cifar10_cnn();
        let ops = batch_ops(&t, &scheme("fp32-baseline"), 1, false).unwrap();
        let conv1 = ops[0].counts;
        let fwd = 32 * 32 * 32 * 75u64;
        let grads = 32 * 75 * 1024u64;
        let update = 3 * (32 * 75 + 32) as u64;
        assert_eq!(conv1.mul, fwd + grads + update);
    }

    #[test]
    fn pot_has_no_pass_multiplies() {
        let t = Topology::cifar10_cnn();
        let r = count_ops(&t, &scheme("pot"), 1000, 1, 100, false).unwrap();
        let params = t.param_count().unwrap() as u64;
        // only the update multiplies remain
        assert_eq!(r.total.mul, 3 * params * 10);
        assert!(r.total.shift > 0);
        let fp = count_ops(&t, &scheme("fp32-baseline"), 1000, 1, 100, false).unwrap();
        assert_eq!(r.total.shift + r.total.mul, fp.total.mul);
    }

    #[test]
    fn conservation_and_homogeneity() {
        let t = Topology::cifar10_cnn();
        let r = count_ops(&t, &scheme("ctx-float12"), 250, 2, 100, false).unwrap();
        let mut sum = OpCounts::default();
        for l in &r.layers {
            sum += l.counts;
        }
        assert_eq!(sum, r.total);
        let table = CostTable::default_table();
        let a = estimate_time(&r, &table, &scheme("ctx-float12")).unwrap().total;
        let b = estimate_time(&r, &table.scaled(2.0), &scheme("ctx-float12"))
            .unwrap()
            .total;
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_entry_is_reported() {
        let t = Topology::linear(4, 2);
        let r = count_ops(&t, &scheme("pot"), 10, 1, 10, false).unwrap();
        let mut table = CostTable::default_table();
        table.costs.remove(&OpKind::Shift);
        assert!(matches!(estimate_time(&r, &table, &scheme("pot")), Err(Error::MissingCostEntry(k)) if k == "shift"));
    }

    #[test]
    fn shipped_table_matches_calibration() {
        let t = Topology::cifar10_cnn();
        let fresh = calibrate(&t, 50_000, 40, 100).unwrap();
        let shipped = CostTable::default_table();
        for k in OpKind::ALL {
            let (a, b) = (fresh.cost(k).unwrap(), shipped.cost(k).unwrap());
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-30), "{k}: {a} vs {b}");
        }
    }

    #[test]
    fn empty_topology_is_free() {
        let t = Topology {
            name: "empty".into(),
            input: (1, 1, 1),
            layers: Vec::new(),
        };
        let s = scheme("fp32-baseline");
        let r = count_ops(&t, &s, 100, 1, 10, false).unwrap();
        assert_eq!(r.total, OpCounts::default());
        assert_eq!(estimate_time(&r, &CostTable::default_table(), &s).unwrap().total, 0.0);
        assert_eq!(estimate_memory(&t, &s, &MemoryModel::default()).unwrap().total, 0.0);
    }

    #[test]
    fn empty_layer_memory() {
        let t = Topology::linear(4, 2);
        let m = estimate_memory(&t, &scheme("fp32-baseline"), &MemoryModel::default()).unwrap();
        assert_eq!(m.layers[1].total(), 0.0);
        assert!(m.layers[0].total() > 0.0);
    }
}
