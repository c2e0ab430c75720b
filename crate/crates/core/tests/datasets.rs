//! CIFAR-10 ingestion from a fabricated directory, subsets, and the
//! synthetic generator as a training target.

use std::fs;
use std::path::Path;

use lpnum::data::{cifar10_available, load_cifar10, subset, subset_indices, synthesize, Split, SyntheticSpec};
use lpnum::network::{NetworkState, SchemeConfig, Topology};
use lpnum::trainer::{train, TrainConfig};
use lpnum::{Error, RngStream, RoundingMode};

const RECORD: usize = 3073;

fn fake_batch(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = RngStream::new(seed);
    let mut out = Vec::with_capacity(n * RECORD);
    for i in 0..n {
        out.push((i % 10) as u8);
        out.extend((0..RECORD - 1).map(|_| (rng.next_u64() & 0xff) as u8));
    }
    out
}

fn write_dir(dir: &Path, per_file: usize) -> Vec<Vec<u8>> {
    let mut files = Vec::new();
    for (k, name) in [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ]
    .iter()
    .enumerate()
    {
        let bytes = fake_batch(per_file, k as u64);
        fs::write(dir.join(name), &bytes).unwrap();
        files.push(bytes);
    }
    files
}

#[test]
fn ingestion_is_lossless_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_dir(dir.path(), 20);
    assert!(cifar10_available(dir.path()));
    let train_set = load_cifar10(dir.path(), Split::Train).unwrap();
    let test_set = load_cifar10(dir.path(), Split::Test).unwrap();
    assert_eq!((train_set.len(), test_set.len()), (100, 20));
    assert!(train_set.labels.iter().all(|l| *l < 10));
    // first image against a plain byte reader
    let first: Vec<f64> = files[0][1..RECORD].iter().map(|b| f64::from(*b) / 255.0).collect();
    assert_eq!(train_set.image(0), &first[..]);
    assert_eq!(train_set.to_cifar_bytes(), files[..5].concat());
    assert_eq!(test_set.to_cifar_bytes(), files[5]);
    assert!(train_set.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn nested_archive_layout_is_found() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("cifar-10-batches-bin");
    fs::create_dir(&nested).unwrap();
    write_dir(&nested, 10);
    assert!(cifar10_available(dir.path()));
    assert_eq!(load_cifar10(dir.path(), Split::Test).unwrap().len(), 10);
}

#[test]
fn damaged_files_name_the_file_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    write_dir(dir.path(), 10);
    let path = dir.path().join("test_batch.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(2 * RECORD + 100);
    fs::write(&path, &bytes).unwrap();
    match load_cifar10(dir.path(), Split::Test) {
        Err(Error::Truncated { path: p, offset, .. }) => {
            assert_eq!(p, path);
            assert_eq!(offset, 2 * RECORD as u64);
        }
        other => panic!("{other:?}"),
    }
    fs::remove_file(&path).unwrap();
    assert!(!cifar10_available(dir.path()));
    let msg = load_cifar10(dir.path(), Split::Test).unwrap_err().to_string();
    assert!(msg.contains("test_batch.bin"), "{msg}");
}

#[test]
fn subsets_are_stratified_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    write_dir(dir.path(), 200);
    let ds = load_cifar10(dir.path(), Split::Train).unwrap();
    let s = subset(&ds, 500, 3).unwrap();
    assert!(s.class_counts().iter().all(|c| *c == 50));
    assert_eq!(
        subset_indices(&ds, 500, 3).unwrap(),
        subset_indices(&ds, 500, 3).unwrap()
    );
    assert_ne!(
        subset_indices(&ds, 500, 3).unwrap(),
        subset_indices(&ds, 500, 4).unwrap()
    );
    assert_eq!(
        subset_indices(&ds, ds.len(), 9).unwrap(),
        (0..ds.len()).collect::<Vec<_>>()
    );
    assert!(matches!(subset(&ds, 1010, 3), Err(Error::Stratification { .. })));
}

fn fit(separation: f64) -> (f64, f64) {
    let spec = SyntheticSpec {
        classes: 2,
        per_class: 100,
        shape: (3, 8, 8),
        separation,
        seed: 12,
        ..SyntheticSpec::default()
    };
    let (tr, te) = (
        synthesize(&spec, Split::Train).unwrap(),
        synthesize(&spec, Split::Test).unwrap(),
    );
    let mut s = NetworkState::new(
        Topology::compact((3, 8, 8), 2),
        SchemeConfig::from_name("fp32-baseline").unwrap(),
        RoundingMode::Nearest,
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 20,
        epochs: 40,
        ..TrainConfig::default()
    };
    let sum = train(&mut s, &tr, &te, &cfg, |_, _| Ok(())).unwrap();
    (sum.final_accuracy, sum.epochs.last().unwrap().train_accuracy)
}

#[test]
fn separated_classes_are_learned() {
    let (test, _) = fit(0.3);
    assert!(test >= 95.0, "{test}");
}

#[test]
fn identical_classes_stay_at_chance() {
    let (test, _) = fit(0.0);
    assert!((test - 50.0).abs() <= 15.0, "{test}");
}
