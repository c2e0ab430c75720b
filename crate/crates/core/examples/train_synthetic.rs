//! Trains the compact CNN on a small synthetic dataset under two schemes
//! and prints the per-epoch test accuracy.

use lpnum::data::{synthesize, Split, SyntheticSpec};
use lpnum::network::{NetworkState, SchemeConfig, Topology};
use lpnum::trainer::{train, TrainConfig};
use lpnum::RoundingMode;

fn main() -> lpnum::Result<()> {
    let spec = SyntheticSpec {
        classes: 2,
        per_class: 100,
        shape: (3, 8, 8),
        ..SyntheticSpec::default()
    };
    let (train_set, test_set) = (synthesize(&spec, Split::Train)?, synthesize(&spec, Split::Test)?);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 20,
        epochs: 40,
        ..TrainConfig::default()
    };
    for name in ["fp32-baseline", "float12"] {
        let topology = Topology::compact(spec.shape, spec.classes);
        let mut state = NetworkState::new(topology, SchemeConfig::from_name(name)?, RoundingMode::Stochastic, 1)?;
        let summary = train(&mut state, &train_set, &test_set, &cfg, |_, m| {
            if m.epoch % 10 == 0 {
                println!(
                    "{name:>14} epoch {:>2}: loss {:.4}, test {:.1}%",
                    m.epoch, m.train_loss, m.test_accuracy
                );
            }
            Ok(())
        })?;
        println!("{name:>14} final {:.1}%", summary.final_accuracy);
    }
    Ok(())
}
