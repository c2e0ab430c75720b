//! Trains under float12, checkpoints, and resumes under ctx-float12; the
//! stored tensors are requantized into the new scheme on load.

use lpnum::data::{synthesize, Split, SyntheticSpec};
use lpnum::network::{checkpoint, NetworkState, SchemeConfig, Topology};
use lpnum::trainer::{evaluate, train, TrainConfig};
use lpnum::RoundingMode;

fn main() -> lpnum::Result<()> {
    let spec = SyntheticSpec {
        classes: 2,
        per_class: 100,
        shape: (3, 8, 8),
        ..SyntheticSpec::default()
    };
    let (tr, te) = (synthesize(&spec, Split::Train)?, synthesize(&spec, Split::Test)?);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 20,
        epochs: 30,
        ..TrainConfig::default()
    };
    let topology = Topology::compact(spec.shape, spec.classes);
    let mut state = NetworkState::new(
        topology,
        SchemeConfig::from_name("float12")?,
        RoundingMode::Stochastic,
        3,
    )?;
    train(&mut state, &tr, &te, &cfg, |_, _| Ok(()))?;
    let dir = std::env::temp_dir().join("lpnum-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| lpnum::Error::Config(e.to_string()))?;
    let stem = dir.join("float12");
    checkpoint::save(&state, &stem)?;
    println!(
        "float12 after {} epochs: {:.1}%",
        state.epoch(),
        evaluate(&state, &te, 100)?
    );

    let same = checkpoint::load(&stem)?;
    println!("restored exactly: {}", same.layer_params() == state.layer_params());

    let mut resumed = checkpoint::load_with_scheme(&stem, SchemeConfig::from_name("ctx-float12")?)?;
    println!("converted to ctx-float12: {:.1}%", evaluate(&resumed, &te, 100)?);
    let more = TrainConfig { epochs: 5, ..cfg };
    train(&mut resumed, &tr, &te, &more, |_, m| {
        println!("ctx-float12 epoch {}: {:.1}%", m.epoch, m.test_accuracy);
        Ok(())
    })?;
    Ok(())
}
