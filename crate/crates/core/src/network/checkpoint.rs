//! Checkpoints: a JSON header plus one little-endian binary64 blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerParams, NetworkState, SchemeConfig, Topology};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::qformats::RoundingMode;

#[derive(Serialize, Deserialize)]
struct Header {
    topology: Topology,
    scheme: SchemeConfig,
    rounding: RoundingMode,
    seed: u64,
    epoch: usize,
    iteration: u64,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    layer: usize,
    name: String,
    offset: usize,
    lens: [usize; 4],
    contexts: [Option<Context>; 4],
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save(state: &NetworkState, stem: &Path) -> Result<()> {
    let (json, bin) = paths(stem);
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (i, p) in state.layer_params().iter().enumerate() {
        let Some(p) = p else { continue };
        let parts = [&p.weights, &p.biases, &p.weight_momentum, &p.bias_momentum];
        for v in parts {
            for x in v.iter() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let lens = parts.map(|v| v.len());
        tensors.push(Entry {
            layer: i,
            name: state.topology().layers[i].name().to_string(),
            offset,
            lens,
            contexts: [
                p.weight_ctx.clone(),
                p.bias_ctx.clone(),
                p.weight_update_ctx.clone(),
                p.bias_update_ctx.clone(),
            ],
        });
        offset += lens.iter().sum::<usize>();
    }
    let header = Header {
        topology: state.topology().clone(),
        scheme: state.scheme().clone(),
        rounding: state.rounding(),
        seed: state.seed(),
        epoch: state.epoch(),
        iteration: state.iteration(),
        tensors,
    };
    fs::write(&json, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&json, e))?;
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    Ok(())
}

/// Restores a checkpoint under its own scheme.
pub fn load(stem: &Path) -> Result<NetworkState> {
    load_impl(stem, None)
}

/// Restores a checkpoint and requantizes every stored tensor into `scheme`.
pub fn load_with_scheme(stem: &Path, scheme: SchemeConfig) -> Result<NetworkState> {
    load_impl(stem, Some(scheme))
}

fn load_impl(stem: &Path, scheme: Option<SchemeConfig>) -> Result<NetworkState> {
    let (json, bin) = paths(stem);
    let header: Header = serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let total: usize = header.tensors.iter().map(|t| t.lens.iter().sum::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Truncated {
            path: bin,
            expected: (total * 8) as u64,
            actual: bytes.len() as u64,
            offset: bytes.len() as u64,
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params: Vec<Option<LayerParams>> = vec![None; header.topology.layers.len()];
    for t in &header.tensors {
        let mut at = t.offset;
        let mut take = |n: usize| {
            let v = vals[at..at + n].to_vec();
            at += n;
            v
        };
        let weights = take(t.lens[0]);
        let biases = take(t.lens[1]);
        let weight_momentum = take(t.lens[2]);
        let bias_momentum = take(t.lens[3]);
        let slot = params
            .get_mut(t.layer)
            .ok_or_else(|| Error::Topology(format!("checkpoint names layer {}", t.layer)))?;
        *slot = Some(LayerParams {
            weights,
            biases,
            weight_momentum,
            bias_momentum,
            weight_ctx: t.contexts[0].clone(),
            bias_ctx: t.contexts[1].clone(),
            weight_update_ctx: t.contexts[2].clone(),
            bias_update_ctx: t.contexts[3].clone(),
        });
    }
    let requantize = scheme.as_ref().is_some_and(|s| *s != header.scheme);
    NetworkState::from_parts(
        header.topology,
        scheme.unwrap_or(header.scheme),
        header.rounding,
        header.seed,
        params,
        header.iteration,
        header.epoch,
        requantize,
    )
}
