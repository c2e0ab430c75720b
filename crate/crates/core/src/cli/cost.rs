//! The `cost` subcommand: per-layer time and memory as CSV.

use serde::Serialize;

use crate::costmodel::{count_ops, estimate_memory, estimate_time, CostTable, MemoryModel};
use crate::error::{Error, Result};
use crate::network::{SchemeConfig, Topology};
use crate::qtensor::OpCounts;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub scheme: String,
    pub layer: String,
    pub mul: u64,
    pub add: u64,
    pub shift: u64,
    pub cmp: u64,
    pub scale_adjust: u64,
    pub time: f64,
    pub parameter_bytes: f64,
    pub momentum_bytes: f64,
    pub output_bytes: f64,
    pub gradient_bytes: f64,
    pub memory_bytes: f64,
}

#[derive(Clone, Debug)]
pub struct CostRequest {
    pub schemes: Vec<SchemeConfig>,
    pub topology: Topology,
    pub dataset_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pot_hyperparameters: bool,
    pub table: CostTable,
    pub memory: MemoryModel,
}

/// Layer rows followed by a `total` row, per scheme.
pub fn cost_rows(req: &CostRequest) -> Result<Vec<CostRow>> {
    let mut rows = Vec::new();
    for scheme in &req.schemes {
        let ops = count_ops(
            &req.topology,
            scheme,
            req.dataset_size,
            req.epochs,
            req.batch_size,
            req.pot_hyperparameters,
        )?;
        let time = estimate_time(&ops, &req.table, scheme)?;
        let mem = estimate_memory(&req.topology, scheme, &req.memory)?;
        let mut total = CostRow {
            scheme: scheme.name.clone(),
            layer: "total".into(),
            mul: 0,
            add: 0,
            shift: 0,
            cmp: 0,
            scale_adjust: 0,
            time: time.total,
            parameter_bytes: 0.0,
            momentum_bytes: 0.0,
            output_bytes: 0.0,
            gradient_bytes: 0.0,
            memory_bytes: mem.total,
        };
        for ((l, (_, t)), m) in ops.layers.iter().zip(&time.layers).zip(&mem.layers) {
            let c: OpCounts = l.counts;
            let row = CostRow {
                scheme: scheme.name.clone(),
                layer: l.layer.clone(),
                mul: c.mul,
                add: c.add,
                shift: c.shift,
                cmp: c.cmp,
                scale_adjust: c.scale_adjust,
                time: *t,
                parameter_bytes: m.parameters,
                momentum_bytes: m.momentum,
                output_bytes: m.outputs,
                gradient_bytes: m.gradients,
                memory_bytes: m.total(),
            };
            total.mul += c.mul;
            total.add += c.add;
            total.shift += c.shift;
            total.cmp += c.cmp;
            total.scale_adjust += c.scale_adjust;
            total.parameter_bytes += m.parameters;
            total.momentum_bytes += m.momentum;
            total.output_bytes += m.outputs;
            total.gradient_bytes += m.gradients;
            rows.push(row);
        }
        rows.push(total);
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CostRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
