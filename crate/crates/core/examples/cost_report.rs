//! Estimated training time and memory for every scheme on the reference CNN.

use lpnum::costmodel::{count_ops, estimate_memory, estimate_time, CostTable, MemoryModel};
use lpnum::network::{SchemeConfig, Topology, SCHEME_NAMES};

fn main() -> lpnum::Result<()> {
    let topology = Topology::cifar10_cnn();
    let table = CostTable::default_table();
    let memory = MemoryModel::default();
    let mut fp32 = None;
    println!("{:<16} {:>10} {:>9} {:>10}", "scheme", "hours", "speedup", "MB");
    for name in SCHEME_NAMES {
        let scheme = SchemeConfig::from_name(name)?;
        let ops = count_ops(&topology, &scheme, 50_000, 40, 100, false)?;
        let hours = estimate_time(&ops, &table, &scheme)?.total;
        let mb = estimate_memory(&topology, &scheme, &memory)?.total_mb;
        let base = *fp32.get_or_insert(hours);
        println!("{name:<16} {hours:>10.4} {:>9.2} {mb:>10.4}", base / hours);
    }
    Ok(())
}
