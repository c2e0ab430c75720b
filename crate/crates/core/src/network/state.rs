use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::scheme::{FormatSpec, ParameterClass, SchemeConfig};
use super::topology::{numel, LayerGeometry, LayerSpec, Topology};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::qformats::RoundingMode;
use crate::qtensor::{is_pot_value, OpCounts, QTensor};
use crate::rng::RngStream;

/// Which product kernel the parametric layers use when the scheme permits
/// shifts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Shifts whenever the pot operand's format guarantees powers of two.
    #[default]
    Auto,
    /// Always multiply; used to cross-check the shift path.
    Multiply,
}

/// Stored tensors of one parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub weight_momentum: Vec<f64>,
    pub bias_momentum: Vec<f64>,
    pub weight_ctx: Option<Context>,
    pub bias_ctx: Option<Context>,
    pub weight_update_ctx: Option<Context>,
    pub bias_update_ctx: Option<Context>,
}

impl LayerParams {
    pub fn tensor(&self, class: ParameterClass) -> Option<(&[f64], Option<&Context>)> {
        match class {
            ParameterClass::Weights => Some((&self.weights, self.weight_ctx.as_ref())),
            ParameterClass::Biases => Some((&self.biases, self.bias_ctx.as_ref())),
            ParameterClass::WeightUpdates => Some((&self.weight_momentum, self.weight_update_ctx.as_ref())),
            ParameterClass::BiasUpdates => Some((&self.bias_momentum, self.bias_update_ctx.as_ref())),
            _ => None,
        }
    }

    fn slot(&mut self, class: ParameterClass) -> Option<(&mut Vec<f64>, &mut Option<Context>)> {
        match class {
            ParameterClass::Weights => Some((&mut self.weights, &mut self.weight_ctx)),
            ParameterClass::Biases => Some((&mut self.biases, &mut self.bias_ctx)),
            ParameterClass::WeightUpdates => Some((&mut self.weight_momentum, &mut self.weight_update_ctx)),
            ParameterClass::BiasUpdates => Some((&mut self.bias_momentum, &mut self.bias_update_ctx)),
            _ => None,
        }
    }
}

/// How a forward pass is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    /// Dropout active; a cache for backward is kept.
    Train,
    /// Dropout replaced by scaling. `tag` keys the rounding streams.
    Infer { tag: u64 },
}

#[derive(Clone, Debug)]
enum LayerCache {
    Conv { rows: Vec<f64> },
    Fc { input: Vec<f64> },
    Pool { arg: Vec<u32>, input_len: usize },
    Relu { input: Vec<f64> },
    Dropout { mask: Vec<bool> },
    None,
}

/// Everything backward needs from a training forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    pub logits: Vec<f64>,
    /// Scale exponent of every output context produced, keyed by site.
    pub contexts: BTreeMap<String, i32>,
    pub counts: OpCounts,
    /// Per-layer quantized outputs, kept only on request.
    pub outputs: Option<Vec<Vec<f64>>>,
    iteration: u64,
    train: bool,
    layers: Vec<LayerCache>,
}

/// Parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// `(weight gradient, bias gradient)` for each parametric layer.
    pub params: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    pub contexts: BTreeMap<String, i32>,
    pub counts: OpCounts,
    /// Gradient with respect to each layer's output, kept only on request.
    pub output_grads: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct NetworkState {
    topology: Topology,
    geometry: Vec<LayerGeometry>,
    scheme: SchemeConfig,
    rounding: RoundingMode,
    seed: u64,
    kernel: KernelMode,
    params: Vec<Option<LayerParams>>,
    conv: Vec<Option<ConvTables>>,
    pub(crate) iteration: u64,
    pub(crate) epoch: usize,
}

#[derive(Clone, Debug)]
struct ConvTables {
    geom: ConvGeom,
    table: Vec<usize>,
    inb: Vec<u64>,
}

const CONV_STD: f64 = 0.01;
const FC_STD: f64 = 0.005;

impl NetworkState {
    /// Gaussian-initialized network (std 0.01 conv, 0.005 FC, zero biases),
    /// quantized into the scheme's formats.
    pub fn new(topology: Topology, scheme: SchemeConfig, rounding: RoundingMode, seed: u64) -> Result<Self> {
        let geometry = topology.geometry()?;
        let root = RngStream::new(seed).derive_str("init");
        let mut params = Vec::new();
        let mut conv = Vec::new();
        for (l, g) in topology.layers.iter().zip(&geometry) {
            conv.push(match l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    let geom = ConvGeom {
                        c: g.input.0,
                        h: g.input.1,
                        w: g.input.2,
                        oc: *out_channels,
                        k: *kernel,
                        stride: *stride,
                        pad: *pad,
                        oh: g.output.1,
                        ow: g.output.2,
                    };
                    Some(ConvTables {
                        geom,
                        table: geom.index_table(),
                        inb: geom.in_bounds(),
                    })
                }
                _ => None,
            });
            params.push(if l.has_params() {
                let std = if matches!(l, LayerSpec::Conv { .. }) {
                    CONV_STD
                } else {
                    FC_STD
                };
                let mut r = root.derive_str(l.name());
                let weights = (0..g.weight_count).map(|_| r.normal() * std).collect();
                Some(LayerParams {
                    weights,
                    biases: vec![0.0; g.bias_count],
                    weight_momentum: vec![0.0; g.weight_count],
                    bias_momentum: vec![0.0; g.bias_count],
                    weight_ctx: None,
                    bias_ctx: None,
                    weight_update_ctx: None,
                    bias_update_ctx: None,
                })
            } else {
                None
            });
        }
        let mut s = Self {
            topology,
            geometry,
            scheme,
            rounding,
            seed,
            kernel: KernelMode::Auto,
            params,
            conv,
            iteration: 0,
            epoch: 0,
        };
        for c in ParameterClass::ALL {
            s.refresh_class(c)?;
        }
        Ok(s)
    }

    /// Rebuilds a state from stored tensors, quantizing them into `scheme`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        topology: Topology,
        scheme: SchemeConfig,
        rounding: RoundingMode,
        seed: u64,
        params: Vec<Option<LayerParams>>,
        iteration: u64,
        epoch: usize,
        requantize: bool,
    ) -> Result<Self> {
        let mut s = Self::new(topology, scheme, rounding, seed)?;
        if params.len() != s.params.len() {
            return Err(Error::Topology("parameter list does not match the topology".into()));
        }
        for (dst, src) in s.params.iter().zip(&params) {
            match (dst, src) {
                (Some(d), Some(p))
                    if d.weights.len() == p.weights.len()
                        && d.biases.len() == p.biases.len()
                        && d.weight_momentum.len() == p.weight_momentum.len()
                        && d.bias_momentum.len() == p.bias_momentum.len() => {}
                (None, None) => {}
                _ => return Err(Error::Topology("parameter shapes do not match the topology".into())),
            }
        }
        s.params = params;
        s.iteration = iteration;
        s.epoch = epoch;
        if requantize {
            for c in ParameterClass::ALL {
                s.refresh_class(c)?;
            }
        } else {
            s.check_conformance()?;
        }
        Ok(s)
    }

    /// Same parameters under a different scheme (checkpoint restart).
    pub fn with_scheme(&self, scheme: SchemeConfig) -> Result<Self> {
        let mut s = Self::from_parts(
            self.topology.clone(),
            scheme,
            self.rounding,
            self.seed,
            self.params.clone(),
            self.iteration,
            self.epoch,
            true,
        )?;
        s.kernel = self.kernel;
        Ok(s)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn geometry(&self) -> &[LayerGeometry] {
        &self.geometry
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn rounding(&self) -> RoundingMode {
        self.rounding
    }

    pub fn set_rounding(&mut self, mode: RoundingMode) {
        self.rounding = mode;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn kernel_mode(&self) -> KernelMode {
        self.kernel
    }

    pub fn set_kernel_mode(&mut self, k: KernelMode) {
        self.kernel = k;
    }

    pub fn classes(&self) -> usize {
        numel(self.geometry.last().expect("nonempty topology").output)
    }

    pub fn input_len(&self) -> usize {
        numel(self.topology.input)
    }

    pub fn layer_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub(crate) fn layer_params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    /// Replaces one stored tensor's values, requantizing them under the scheme.
    pub fn set_tensor(&mut self, layer: usize, class: ParameterClass, values: Vec<f64>) -> Result<()> {
        let spec = self.scheme.get(class);
        let site = format!("{}/{}", self.topology.layers[layer].name(), class);
        let mut rng = self.site_rng("set", &site);
        let mode = self.rounding;
        let p = self.params[layer]
            .as_mut()
            .ok_or_else(|| Error::Topology(format!("layer {layer} has no parameters")))?;
        let (slot, ctx) = p
            .slot(class)
            .ok_or_else(|| Error::Config(format!("{class} is not stored")))?;
        if slot.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: slot.len(),
                right: values.len(),
            });
        }
        *slot = values;
        *ctx = spec.quantize_in_place(slot, &site, mode, &mut rng, &mut OpCounts::default())?;
        Ok(())
    }

    /// Stored tensor as a [`QTensor`] tagged with its format.
    pub fn tensor(&self, layer: usize, class: ParameterClass) -> Result<QTensor> {
        let p = self.params[layer]
            .as_ref()
            .ok_or_else(|| Error::Topology(format!("layer {layer} has no parameters")))?;
        let (data, ctx) = p
            .tensor(class)
            .ok_or_else(|| Error::Config(format!("{class} is not stored")))?;
        let fmt = self.scheme.get(class).tensor_format(ctx)?;
        QTensor::vector(data.to_vec(), fmt)
    }

    pub(crate) fn site_rng(&self, phase: &str, site: &str) -> RngStream {
        RngStream::new(self.seed)
            .derive_str(phase)
            .derive(self.iteration)
            .derive_str(site)
    }

    fn pass_rng(&self, pass: Pass, phase: &str, site: &str) -> RngStream {
        match pass {
            Pass::Train => self.site_rng(phase, site),
            Pass::Infer { tag } => RngStream::new(self.seed)
                .derive_str("infer")
                .derive(tag)
                .derive_str(phase)
                .derive_str(site),
        }
    }

    fn forward_shifts(&self) -> bool {
        self.kernel == KernelMode::Auto && self.scheme.outputs.is_pot()
    }

    fn backward_shifts(&self) -> bool {
        self.kernel == KernelMode::Auto && self.scheme.gradients.is_pot()
    }

    /// Recomputes the contexts of a stored class and requantizes its
    /// members. Outputs and gradients are transient and rebuilt every pass.
    pub fn refresh_class(&mut self, class: ParameterClass) -> Result<Vec<Context>> {
        let spec = self.scheme.get(class);
        let mode = self.rounding;
        let mut out = Vec::new();
        for i in 0..self.params.len() {
            if self.params[i].is_none() {
                continue;
            }
            let site = format!("{}/{}", self.topology.layers[i].name(), class);
            let mut rng = self.site_rng("refresh", &site);
            let p = self.params[i].as_mut().expect("checked");
            let Some((slot, ctx)) = p.slot(class) else {
                return Ok(out);
            };
            *ctx = spec.quantize_in_place(slot, &site, mode, &mut rng, &mut OpCounts::default())?;
            if let Some(c) = ctx {
                out.push(c.clone());
            }
        }
        Ok(out)
    }

    /// Every stored tensor is a member of its class's format.
    pub fn check_conformance(&self) -> Result<()> {
        for i in 0..self.params.len() {
            if self.params[i].is_some() {
                for c in [
                    ParameterClass::Weights,
                    ParameterClass::Biases,
                    ParameterClass::WeightUpdates,
                    ParameterClass::BiasUpdates,
                ] {
                    self.tensor(i, c)?.check()?;
                }
            }
        }
        Ok(())
    }

    /// Quantizes raw inputs into the outputs format (inputs are layer-0
    /// outputs).
    pub fn quantize_input(&self, input: &[f64], pass: Pass) -> Result<Vec<f64>> {
        let mut x = input.to_vec();
        let mut rng = self.pass_rng(pass, "round", "input/outputs");
        self.scheme.outputs.quantize_in_place(
            &mut x,
            "input/outputs",
            self.rounding,
            &mut rng,
            &mut OpCounts::default(),
        )?;
        Ok(x)
    }

    /// Forward pass over `n` images stored row-major in `input`.
    pub fn forward(&self, input: &[f64], n: usize, pass: Pass) -> Result<ForwardCache> {
        self.forward_with(input, n, pass, false)
    }

    pub fn forward_with(&self, input: &[f64], n: usize, pass: Pass, keep_outputs: bool) -> Result<ForwardCache> {
        if n == 0 || input.len() != n * self.input_len() {
            return Err(Error::LengthMismatch {
                left: n * self.input_len(),
                right: input.len(),
            });
        }
        let mut cur = self.quantize_input(input, pass)?;
        let mut counts = OpCounts::default();
        let mut contexts = BTreeMap::new();
        let mut caches = Vec::with_capacity(self.geometry.len());
        let mut outputs = keep_outputs.then(Vec::new);
        let train = pass == Pass::Train;
        let mode = self.rounding;
        let shift = self.forward_shifts();
        let out_spec = self.scheme.outputs;
        for (i, (layer, g)) in self.topology.layers.iter().zip(&self.geometry).enumerate() {
            let name = layer.name();
            let mut requantize = false;
            let cache = match layer {
                LayerSpec::Conv { .. } => {
                    let t = self.conv[i].as_ref().expect("conv tables");
                    let per = t.geom.positions() * t.geom.patch();
                    let in_len = numel(g.input);
                    let mut rows = vec![0.0; n * per];
                    for img in 0..n {
                        kernels::im2row(
                            &cur[img * in_len..(img + 1) * in_len],
                            &t.table,
                            &mut rows[img * per..(img + 1) * per],
                        );
                    }
                    if shift {
                        check_pot(&cur)?;
                    }
                    let p = self.params[i].as_ref().expect("conv params");
                    cur = kernels::conv_forward(&t.geom, &rows, n, &p.weights, &p.biases, shift, &mut counts);
                    requantize = true;
                    LayerCache::Conv { rows }
                }
                LayerSpec::FullyConnected { bias, .. } => {
                    if shift {
                        check_pot(&cur)?;
                    }
                    let p = self.params[i].as_ref().expect("fc params");
                    let b = bias.then_some(p.biases.as_slice());
                    let out = kernels::fc_forward(&cur, n, numel(g.input), &p.weights, b, shift, &mut counts);
                    requantize = true;
                    LayerCache::Fc {
                        input: std::mem::replace(&mut cur, out),
                    }
                }
                LayerSpec::MaxPool { kernel, stride, .. } => {
                    let (out, arg) = kernels::pool_forward(
                        &cur,
                        n,
                        g.input,
                        (g.output.1, g.output.2),
                        *kernel,
                        *stride,
                        &mut counts,
                    );
                    let input_len = cur.len();
                    cur = out;
                    LayerCache::Pool { arg, input_len }
                }
                LayerSpec::Relu { .. } => {
                    let input = cur.clone();
                    for v in cur.iter_mut() {
                        if *v <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    counts.cmp += cur.len() as u64;
                    if train {
                        LayerCache::Relu { input }
                    } else {
                        LayerCache::None
                    }
                }
                LayerSpec::Dropout { keep, .. } => {
                    if train {
                        let mut rng = self.site_rng("dropout", name);
                        let mask: Vec<bool> = (0..cur.len()).map(|_| rng.bernoulli(*keep)).collect();
                        for (v, m) in cur.iter_mut().zip(&mask) {
                            if !m {
                                *v = 0.0;
                            }
                        }
                        counts.cmp += cur.len() as u64;
                        LayerCache::Dropout { mask }
                    } else {
                        for v in cur.iter_mut() {
                            *v *= keep;
                        }
                        counts.mul += cur.len() as u64;
                        requantize = true;
                        LayerCache::None
                    }
                }
                LayerSpec::SoftmaxXent { .. } => LayerCache::None,
            };
            if requantize {
                let site = format!("{name}/outputs");
                let mut rng = self.pass_rng(pass, "round", &site);
                if let Some(c) = out_spec.quantize_in_place(&mut cur, &site, mode, &mut rng, &mut counts)? {
                    contexts.insert(site, c.scale_exponent);
                }
            }
            if let Some(o) = outputs.as_mut() {
                o.push(cur.clone());
            }
            caches.push(if train { cache } else { LayerCache::None });
        }
        Ok(ForwardCache {
            batch: n,
            logits: cur,
            contexts,
            counts,
            outputs,
            iteration: self.iteration,
            train,
            layers: caches,
        })
    }

    /// Backward pass from the softmax cross-entropy loss.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
        self.backward_with(cache, labels, false)
    }

    pub fn backward_with(&self, cache: &ForwardCache, labels: &[usize], keep_grads: bool) -> Result<Gradients> {
        if !cache.train || cache.iteration != self.iteration || cache.layers.len() != self.geometry.len() {
            return Err(Error::CacheMissing);
        }
        let n = cache.batch;
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: labels.len(),
            });
        }
        let classes = self.classes();
        let mode = self.rounding;
        let gspec = self.scheme.gradients;
        let shift = self.backward_shifts();
        let mut counts = OpCounts::default();
        let mut contexts = BTreeMap::new();
        let mut params: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; self.geometry.len()];
        let mut kept: Option<Vec<Vec<f64>>> = keep_grads.then(|| vec![Vec::new(); self.geometry.len()]);
        let first_param = self.topology.layers.iter().position(|l| l.has_params()).unwrap_or(0);

        let mut quant = |values: &mut Vec<f64>, site: String, counts: &mut OpCounts| -> Result<()> {
            let mut rng = self.site_rng("round", &site);
            if let Some(c) = gspec.quantize_in_place(values, &site, mode, &mut rng, counts)? {
                contexts.insert(site, c.scale_exponent);
            }
            Ok(())
        };

        let last = self.geometry.len() - 1;
        let mut delta = softmax_xent_grad(&cache.logits, labels, classes)?;
        quant(
            &mut delta,
            format!("{}/gradients", self.topology.layers[last].name()),
            &mut counts,
        )?;
        if let Some(k) = kept.as_mut() {
            k[last] = delta.clone();
        }
        for i in (0..last).rev() {
            if let Some(k) = kept.as_mut() {
                k[i] = delta.clone();
            }
            let layer = &self.topology.layers[i];
            let name = layer.name();
            let g = &self.geometry[i];
            match (&cache.layers[i], layer) {
                (LayerCache::Dropout { mask }, _) => {
                    for (d, m) in delta.iter_mut().zip(mask) {
                        if !m {
                            *d = 0.0;
                        }
                    }
                }
                (LayerCache::Relu { input }, _) => {
                    for (d, x) in delta.iter_mut().zip(input) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                (LayerCache::Pool { arg, input_len }, _) => {
                    if i <= first_param {
                        break;
                    }
                    delta = kernels::pool_backward(&delta, arg, *input_len, &mut counts);
                    quant(&mut delta, format!("{name}/gradients"), &mut counts)?;
                }
                (LayerCache::Conv { rows }, _) => {
                    let t = self.conv[i].as_ref().expect("conv tables");
                    let p = self.params[i].as_ref().expect("conv params");
                    let (mut dw, mut db) = kernels::conv_param_grads(&t.geom, rows, &delta, n, shift, &mut counts);
                    quant(&mut dw, format!("{name}/weight-gradients"), &mut counts)?;
                    quant(&mut db, format!("{name}/bias-gradients"), &mut counts)?;
                    params[i] = Some((dw, db));
                    if i == first_param {
                        break;
                    }
                    delta =
                        kernels::conv_input_grad(&t.geom, &t.table, &t.inb, &p.weights, &delta, n, shift, &mut counts);
                    quant(&mut delta, format!("{name}/gradients"), &mut counts)?;
                }
                (LayerCache::Fc { input }, LayerSpec::FullyConnected { bias, outputs, .. }) => {
                    let p = self.params[i].as_ref().expect("fc params");
                    let ins = numel(g.input);
                    let (mut dw, db) = kernels::fc_param_grads(input, &delta, n, ins, *outputs, shift, &mut counts);
                    let mut db = if *bias {
                        db
                    } else {
                        // bias-free layers never form the bias sum
                        counts.add -= (*outputs as u64) * (n as u64 - 1);
                        Vec::new()
                    };
                    quant(&mut dw, format!("{name}/weight-gradients"), &mut counts)?;
                    quant(&mut db, format!("{name}/bias-gradients"), &mut counts)?;
                    params[i] = Some((dw, db));
                    if i == first_param {
                        break;
                    }
                    delta = kernels::fc_input_grad(&p.weights, &delta, n, ins, *outputs, shift, &mut counts);
                    quant(&mut delta, format!("{name}/gradients"), &mut counts)?;
                }
                _ => return Err(Error::CacheMissing),
            }
        }
        Ok(Gradients {
            params,
            contexts,
            counts,
            output_grads: kept,
        })
    }
}

fn check_pot(v: &[f64]) -> Result<()> {
    if cfg!(debug_assertions) {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !is_pot_value(**x)) {
            return Err(Error::NotPowerOfTwo { index, value });
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch, with log-sum-exp stabilization.
pub fn loss(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::LengthMismatch {
            left: labels.len() * classes,
            right: logits.len(),
        });
    }
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// `(softmax(z) - onehot(y)) / n` per row.
pub fn softmax_xent_grad(logits: &[f64], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let n = labels.len();
    let mut g = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (c, ev) in e.iter().enumerate() {
            let t = if c == y { 1.0 } else { 0.0 };
            g.push((ev / s - t) / n as f64);
        }
    }
    Ok(g)
}

/// Index of the largest logit per row; the first maximum wins.
pub fn predictions(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Formats of every class as display strings, for headers and logs.
pub fn scheme_formats(s: &SchemeConfig) -> BTreeMap<String, String> {
    ParameterClass::ALL
        .iter()
        .map(|c| (c.to_string(), FormatSpec::to_string(&s.get(*c))))
        .collect()
}
