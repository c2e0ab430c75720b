//! Loads CIFAR-10 from `$LPNUM_CIFAR10_DIR`, draws a stratified subset and
//! evaluates an untrained network on it.

use std::path::PathBuf;

use lpnum::cli::CIFAR_DIR_ENV;
use lpnum::data::{cifar10_available, load_cifar10, subset, Split};
use lpnum::network::{NetworkState, SchemeConfig, Topology};
use lpnum::trainer::evaluate;
use lpnum::RoundingMode;

fn main() -> lpnum::Result<()> {
    let Some(dir) = std::env::var_os(CIFAR_DIR_ENV).map(PathBuf::from) else {
        println!("set {CIFAR_DIR_ENV} to the cifar-10-batches-bin directory");
        return Ok(());
    };
    if !cifar10_available(&dir) {
        println!("{} does not contain the CIFAR-10 binary batches", dir.display());
        return Ok(());
    }
    let train = load_cifar10(&dir, Split::Train)?;
    let small = subset(&train, 5000, 1)?;
    println!(
        "{} training images, subset of {} with class counts {:?}",
        train.len(),
        small.len(),
        small.class_counts()
    );
    let state = NetworkState::new(
        Topology::cifar10_cnn(),
        SchemeConfig::from_name("float12")?,
        RoundingMode::Stochastic,
        1,
    )?;
    let test = subset(&load_cifar10(&dir, Split::Test)?, 1000, 1)?;
    println!("untrained accuracy: {:.1}%", evaluate(&state, &test, 100)?);
    Ok(())
}
