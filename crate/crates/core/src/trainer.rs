//! SGD with momentum and weight decay, the update-quantization contract,
//! and the epoch loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{loss, predictions, Gradients, NetworkState, ParameterClass, Pass};
use crate::qformats::{floor_log2, pow2};
use crate::qtensor::OpCounts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Round the learning rate, momentum and decay to powers of two so the
    /// update multiplies become shifts. Off by default.
    pub pot_hyperparameters: bool,
    /// Check every stored tensor against its format after each step.
    pub check_conformance: bool,
    /// Accuracy (percent) whose first crossing is reported.
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.004,
            batch_size: 100,
            epochs: 40,
            pot_hyperparameters: false,
            check_conformance: cfg!(debug_assertions),
            target_accuracy: 70.0,
        }
    }
}

fn nearest_pot(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    pow2(x.abs().log2().round() as i32).copysign(x)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    /// `(α, μ, λ)` as applied, after the optional power-of-two rounding.
    pub fn effective_hyperparameters(&self) -> (f64, f64, f64) {
        if self.pot_hyperparameters {
            (
                nearest_pot(self.learning_rate),
                // log-rounding 0.9 gives 1, which never decays
                nearest_pot(self.momentum).min(0.5),
                nearest_pot(self.weight_decay),
            )
        } else {
            (self.learning_rate, self.momentum, self.weight_decay)
        }
    }
}

/// One epoch's record in the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Scale exponent per context site: stored classes at epoch end plus
    /// the transient classes of the last batch.
    pub contexts: BTreeMap<String, i32>,
    pub ops: OpCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochMetrics>,
    pub final_accuracy: f64,
    /// First epoch whose test accuracy reached the target.
    pub epochs_to_target: Option<usize>,
}

/// `u = μu − α(g + λw)`, `u` quantized into its update class, then
/// `w ← quantize(w + u)`. The momentum buffer keeps the quantized `u`.
pub fn sgd_step(state: &mut NetworkState, grads: &Gradients, cfg: &TrainConfig) -> Result<OpCounts> {
    let (alpha, mu, lambda) = cfg.effective_hyperparameters();
    let mode = state.rounding();
    let scheme = state.scheme().clone();
    let mut counts = OpCounts::default();
    let n_layers = state.layer_params().len();
    for i in 0..n_layers {
        let Some((gw, gb)) = grads.params.get(i).and_then(|g| g.as_ref()) else {
            continue;
        };
        let name = state.topology().layers[i].name().to_string();
        let sites = [
            (ParameterClass::Weights, ParameterClass::WeightUpdates, gw),
            (ParameterClass::Biases, ParameterClass::BiasUpdates, gb),
        ];
        for (wc, uc, g) in sites {
            let wsite = format!("{name}/{wc}");
            let usite = format!("{name}/{uc}");
            let mut urng = state.site_rng("update", &usite);
            let mut wrng = state.site_rng("update", &wsite);
            let p = state.layer_params_mut()[i]
                .as_mut()
                .expect("gradient for a parametric layer");
            let (w, u, wctx, uctx) = match wc {
                ParameterClass::Weights => (
                    &mut p.weights,
                    &mut p.weight_momentum,
                    &mut p.weight_ctx,
                    &mut p.weight_update_ctx,
                ),
                _ => (
                    &mut p.biases,
                    &mut p.bias_momentum,
                    &mut p.bias_ctx,
                    &mut p.bias_update_ctx,
                ),
            };
            if g.len() != w.len() {
                return Err(Error::LengthMismatch {
                    left: w.len(),
                    right: g.len(),
                });
            }
            for ((uj, &gj), &wj) in u.iter_mut().zip(g.iter()).zip(w.iter()) {
                *uj = mu * *uj - alpha * (gj + lambda * wj);
            }
            *uctx = scheme
                .get(uc)
                .quantize_in_place(u, &usite, mode, &mut urng, &mut counts)?;
            for (wj, uj) in w.iter_mut().zip(u.iter()) {
                *wj += uj;
            }
            *wctx = scheme
                .get(wc)
                .quantize_in_place(w, &wsite, mode, &mut wrng, &mut counts)?;
            let n = w.len() as u64;
            if cfg.pot_hyperparameters {
                counts.shift += 3 * n;
            } else {
                counts.mul += 3 * n;
            }
            counts.add += 3 * n;
        }
    }
    state.iteration += 1;
    if cfg.check_conformance {
        state.check_conformance()?;
    }
    Ok(counts)
}

/// Percentage of argmax-correct predictions with dropout disabled.
pub fn evaluate(state: &NetworkState, ds: &Dataset, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let batch = batch.max(1);
    let classes = state.classes();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut correct = 0usize;
    for (b, chunk) in idx.chunks(batch).enumerate() {
        let (x, y) = ds.gather(chunk);
        let tag = (state.iteration() << 20) ^ b as u64;
        let cache = state.forward(&x, chunk.len(), Pass::Infer { tag })?;
        correct += predictions(&cache.logits, classes)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// Logits of the inference pass, for external recounts.
pub fn inference_logits(state: &NetworkState, ds: &Dataset, batch: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len() * state.classes());
    for (b, chunk) in idx.chunks(batch.max(1)).enumerate() {
        let (x, _) = ds.gather(chunk);
        let tag = (state.iteration() << 20) ^ b as u64;
        out.extend(state.forward(&x, chunk.len(), Pass::Infer { tag })?.logits);
    }
    Ok(out)
}

/// One forward/backward/update on a batch. Returns the batch loss, the
/// number of correct predictions, and the tallies.
pub fn train_batch(
    state: &mut NetworkState,
    x: &[f64],
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, usize, OpCounts, BTreeMap<String, i32>)> {
    let cache = state.forward(x, y.len(), Pass::Train)?;
    let l = loss(&cache.logits, y, state.classes())?;
    let correct = predictions(&cache.logits, state.classes())
        .iter()
        .zip(y)
        .filter(|(p, t)| p == t)
        .count();
    let grads = state.backward(&cache, y)?;
    let mut counts = cache.counts;
    counts += grads.counts;
    counts += sgd_step(state, &grads, cfg)?;
    let mut ctx = cache.contexts;
    ctx.extend(grads.contexts);
    Ok((l, correct, counts, ctx))
}

/// Epoch order: a full shuffle keyed by `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    crate::rng::RngStream::new(seed)
        .derive_str("shuffle")
        .derive(epoch as u64)
        .shuffle(&mut order);
    order
}

fn stored_contexts(state: &NetworkState) -> BTreeMap<String, i32> {
    let mut out = BTreeMap::new();
    for (i, p) in state.layer_params().iter().enumerate() {
        let Some(p) = p else { continue };
        let name = state.topology().layers[i].name();
        for c in [
            ParameterClass::Weights,
            ParameterClass::Biases,
            ParameterClass::WeightUpdates,
            ParameterClass::BiasUpdates,
        ] {
            if let Some((_, Some(ctx))) = p.tensor(c) {
                out.insert(format!("{name}/{c}"), ctx.scale_exponent);
            }
        }
    }
    out
}

/// Runs `cfg.epochs` epochs from the state's current epoch, calling
/// `on_epoch` after each evaluation.
pub fn train(
    state: &mut NetworkState,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&NetworkState, &EpochMetrics) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCollection);
    }
    if train_set.image_len() != state.input_len() {
        return Err(Error::Topology(format!(
            "dataset images have {} values, the network expects {}",
            train_set.image_len(),
            state.input_len()
        )));
    }
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut epochs_to_target = None;
    for _ in 0..cfg.epochs {
        let epoch = state.epoch + 1;
        let order = epoch_order(state.seed(), epoch, train_set.len());
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut ops = OpCounts::default();
        let mut contexts = BTreeMap::new();
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_set.gather(chunk);
            let (l, c, counts, ctx) = train_batch(state, &x, &y, cfg)?;
            loss_sum += l * chunk.len() as f64;
            correct += c;
            ops += counts;
            contexts = ctx;
        }
        state.epoch = epoch;
        contexts.extend(stored_contexts(state));
        let test_accuracy = evaluate(state, test_set, cfg.batch_size)?;
        if epochs_to_target.is_none() && test_accuracy >= cfg.target_accuracy {
            epochs_to_target = Some(epoch);
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: 100.0 * correct as f64 / train_set.len() as f64,
            test_accuracy,
            contexts,
            ops,
        };
        on_epoch(state, &m)?;
        epochs.push(m);
    }
    let final_accuracy = match epochs.last() {
        Some(m) => m.test_accuracy,
        None => evaluate(state, test_set, cfg.batch_size)?,
    };
    Ok(TrainSummary {
        epochs,
        final_accuracy,
        epochs_to_target,
    })
}

/// Counts of `floor(log2|x|)` per integer bin, plus exact zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub epoch: usize,
    pub site: String,
    pub count: usize,
    pub zeros: u64,
    pub bins: BTreeMap<i32, u64>,
}

impl Histogram {
    pub fn of(epoch: usize, site: impl Into<String>, values: &[f64]) -> Self {
        let mut bins = BTreeMap::new();
        let mut zeros = 0;
        for &v in values {
            if v == 0.0 {
                zeros += 1;
            } else {
                *bins.entry(floor_log2(v)).or_insert(0) += 1;
            }
        }
        Self {
            epoch,
            site: site.into(),
            count: values.len(),
            zeros,
            bins,
        }
    }

    pub fn total(&self) -> u64 {
        self.zeros + self.bins.values().sum::<u64>()
    }
}

/// Histograms of the stored classes and of one batch's outputs and
/// gradients, without updating the state.
pub fn histograms(state: &NetworkState, x: &[f64], y: &[usize]) -> Result<Vec<Histogram>> {
    let epoch = state.epoch();
    let mut out = Vec::new();
    for (i, p) in state.layer_params().iter().enumerate() {
        let Some(p) = p else { continue };
        let name = state.topology().layers[i].name();
        for c in [ParameterClass::Weights, ParameterClass::Biases] {
            if let Some((v, _)) = p.tensor(c) {
                out.push(Histogram::of(epoch, format!("{name}/{c}"), v));
            }
        }
        if let Some((gw, _)) = p.tensor(ParameterClass::WeightUpdates) {
            out.push(Histogram::of(epoch, format!("{name}/weight-updates"), gw));
        }
    }
    let cache = state.forward_with(x, y.len(), Pass::Train, true)?;
    let grads = state.backward_with(&cache, y, true)?;
    let names: Vec<&str> = state.topology().layers.iter().map(|l| l.name()).collect();
    if let Some(o) = &cache.outputs {
        for (v, n) in o.iter().zip(&names) {
            out.push(Histogram::of(epoch, format!("{n}/outputs"), v));
        }
    }
    if let Some(g) = &grads.output_grads {
        for (v, n) in g.iter().zip(&names) {
            if !v.is_empty() {
                out.push(Histogram::of(epoch, format!("{n}/gradients"), v));
            }
        }
    }
    Ok(out)
}
