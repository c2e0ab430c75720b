//! Fits the per-operation cost table and prints it as JSON.
//!
//! `cargo run --example calibrate_costs > crates/core/data/cost_table.json`

use lpnum::costmodel::calibrate;
use lpnum::network::Topology;

fn main() -> lpnum::Result<()> {
    let table = calibrate(&Topology::cifar10_cnn(), 50_000, 40, 100)?;
    println!("{}", serde_json::to_string_pretty(&table)?);
    Ok(())
}
