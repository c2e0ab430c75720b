//! CIFAR-10 binary ingestion, stratified subsets, and synthetic data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{numel, Shape3};
use crate::qtensor::QTensor;
use crate::rng::RngStream;

pub const CIFAR_SHAPE: Shape3 = (3, 32, 32);
pub const CIFAR_CLASSES: usize = 10;
/// One label byte followed by 3072 pixel bytes (R, G, B planes).
pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`, wide.
    pub images: QTensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Vec<f64>, shape: Shape3, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let images = QTensor::wide(vec![labels.len(), shape.0, shape.1, shape.2], images)?;
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> Shape3 {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image_len(&self) -> usize {
        numel(self.image_shape())
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Concatenated images and labels for the given indices.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.image_len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.image(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let (x, y) = self.gather(idx);
        Self::new(x, self.image_shape(), y, self.classes, self.split)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// CIFAR-10 records (`label, pixels`) with pixels `round(255 v)`.
    pub fn to_cifar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * (1 + self.image_len()));
        for i in 0..self.len() {
            out.push(self.labels[i] as u8);
            out.extend(
                self.image(i)
                    .iter()
                    .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
            );
        }
        out
    }

    /// Subtracts each channel's mean over the whole set; returns the means.
    pub fn subtract_channel_mean(&mut self) -> Vec<f64> {
        let (c, h, w) = self.image_shape();
        let plane = h * w;
        let n = self.len();
        let data = self.images.data();
        let means: Vec<f64> = (0..c)
            .map(|ch| {
                let s: f64 = (0..n)
                    .map(|i| {
                        let base = i * c * plane + ch * plane;
                        data[base..base + plane].iter().sum::<f64>()
                    })
                    .sum();
                s / (n * plane).max(1) as f64
            })
            .collect();
        self.subtract_mean(&means);
        means
    }

    /// Subtracts the given per-channel means (e.g. the training set's).
    pub fn subtract_mean(&mut self, means: &[f64]) {
        let (c, h, w) = self.image_shape();
        let plane = h * w;
        let mut data = self.images.data().to_vec();
        for img in data.chunks_mut(c * plane) {
            for (ch, m) in means.iter().enumerate().take(c) {
                img[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v -= m);
            }
        }
        self.images = QTensor::wide(self.images.shape().to_vec(), data).expect("same shape");
    }

    /// Images as a tensor dump (`<stem>.bin`, `<stem>.json`) plus
    /// `<stem>.labels.json`.
    pub fn write_dump(&self, stem: &Path) -> Result<()> {
        self.images.write_dump(stem)?;
        let lp = labels_path(stem);
        let side = LabelFile {
            classes: self.classes,
            split: self.split,
            labels: self.labels.clone(),
        };
        fs::write(&lp, serde_json::to_vec(&side)?).map_err(|e| Error::io(&lp, e))
    }

    pub fn read_dump(stem: &Path) -> Result<Self> {
        let images = QTensor::read_dump(stem)?;
        let lp = labels_path(stem);
        let side: LabelFile = serde_json::from_slice(&fs::read(&lp).map_err(|e| Error::io(&lp, e))?)?;
        let s = images.shape();
        if s.len() != 4 || s[0] != side.labels.len() {
            return Err(Error::ShapeMismatch {
                left: s.to_vec(),
                right: vec![side.labels.len()],
            });
        }
        let shape = (s[1], s[2], s[3]);
        Self::new(images.into_data(), shape, side.labels, side.classes, side.split)
    }
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    classes: usize,
    split: Split,
    labels: Vec<usize>,
}

fn labels_path(stem: &Path) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

/// Parses one CIFAR-10 binary batch file.
pub fn load_batch_file(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let full = bytes.len() / RECORD_BYTES;
    if bytes.len() % RECORD_BYTES != 0 || bytes.is_empty() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: ((full + 1) * RECORD_BYTES) as u64,
            actual: bytes.len() as u64,
            offset: (full * RECORD_BYTES) as u64,
        });
    }
    let mut images = Vec::with_capacity(full * (RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(full);
    for (r, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::BadLabel {
                path: path.to_path_buf(),
                offset: (r * RECORD_BYTES) as u64,
                byte: rec[0],
            });
        }
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((images, labels))
}

/// Locates the batch files either directly in `dir` or in the
/// `cifar-10-batches-bin` folder of the official archive.
fn batch_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let base = batch_dir(dir);
    let files: Vec<&str> = match split {
        Split::Train => TRAIN_FILES.to_vec(),
        Split::Test => vec![TEST_FILE],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (x, y) = load_batch_file(&base.join(f))?;
        images.extend(x);
        labels.extend(y);
    }
    Dataset::new(images, CIFAR_SHAPE, labels, CIFAR_CLASSES, split)
}

/// Whether a readable CIFAR-10 copy exists at `dir`.
pub fn cifar10_available(dir: &Path) -> bool {
    let base = batch_dir(dir);
    base.join(TEST_FILE).is_file() && TRAIN_FILES.iter().all(|f| base.join(f).is_file())
}

/// Class-stratified sample indices in ascending order. Class `c` receives
/// `n / classes` samples, plus one for the first `n % classes` classes.
pub fn subset_indices(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    let k = ds.classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let root = RngStream::new(seed).derive_str("subset");
    let mut out = Vec::with_capacity(n);
    for (c, members) in by_class.iter_mut().enumerate() {
        let quota = n / k + usize::from(c < n % k);
        if quota > members.len() {
            return Err(Error::Stratification {
                requested: quota,
                class: c,
                available: members.len(),
            });
        }
        root.derive(c as u64).shuffle(members);
        out.extend_from_slice(&members[..quota]);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    ds.select(&subset_indices(ds, n, seed)?)
}

/// Parameters of a synthetic classification set.
///
/// Each class has a Gaussian prototype image `p_c` (unit variance per
/// pixel); a sample is `clamp(0.5 + separation * p_c + noise * e, 0, 1)`.
/// Class means are about `separation * sqrt(2 D)` apart for `D` pixels, so
/// a nearest-prototype rule separates the classes with overwhelming margin
/// once `separation >= 10 * noise / sqrt(D)`; at `separation = 0` all
/// classes share one distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub shape: Shape3,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 50,
            shape: CIFAR_SHAPE,
            separation: 0.15,
            noise: 0.1,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn separation_threshold(&self) -> f64 {
        10.0 * self.noise / (numel(self.shape) as f64).sqrt()
    }
}

/// Samples are interleaved by class (`label = i % classes`). Train and test
/// splits share prototypes and draw independent noise.
pub fn synthesize(spec: &SyntheticSpec, split: Split) -> Result<Dataset> {
    if spec.classes == 0
        || numel(spec.shape) == 0
        || !(spec.noise.is_finite() && spec.noise >= 0.0)
        || !spec.separation.is_finite()
    {
        return Err(Error::Config("invalid synthetic spec".into()));
    }
    let d = numel(spec.shape);
    let root = RngStream::new(spec.seed).derive_str("synthetic");
    let protos: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let mut r = root.derive_str("prototype").derive(c as u64);
            (0..d).map(|_| r.normal()).collect()
        })
        .collect();
    let mut noise = root.derive_str(match split {
        Split::Train => "train",
        Split::Test => "test",
    });
    let n = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        labels.push(c);
        for &p in &protos[c] {
            let v = 0.5 + spec.separation * p + spec.noise * noise.normal();
            images.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(images, spec.shape, labels, spec.classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_records(n: usize) -> Vec<u8> {
        let mut b = Vec::new();
        for r in 0..n {
            b.push((r % 10) as u8);
            b.extend((0..3072).map(|p| ((p * 7 + r * 13) % 256) as u8));
        }
        b
    }

    #[test]
    fn batch_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TEST_FILE);
        let bytes = fake_records(20);
        fs::write(&p, &bytes).unwrap();
        let (x, y) = load_batch_file(&p).unwrap();
        assert_eq!(y.len(), 20);
        // independent byte reader for the first image
        for (j, v) in x[..3072].iter().enumerate() {
            assert_eq!(*v, bytes[1 + j] as f64 / 255.0);
        }
        let ds = Dataset::new(x, CIFAR_SHAPE, y, 10, Split::Test).unwrap();
        assert_eq!(ds.to_cifar_bytes(), bytes);
    }

    #[test]
    fn truncated_and_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let mut bytes = fake_records(3);
        bytes.truncate(2 * RECORD_BYTES + 100);
        fs::write(&p, &bytes).unwrap();
        match load_batch_file(&p) {
            Err(Error::Truncated { offset, actual, .. }) => {
                assert_eq!(offset, 2 * RECORD_BYTES as u64);
                assert_eq!(actual, bytes.len() as u64);
            }
            other => panic!("{other:?}"),
        }
        let mut bytes = fake_records(2);
        bytes[RECORD_BYTES] = 12;
        fs::write(&p, &bytes).unwrap();
        assert!(
            matches!(load_batch_file(&p), Err(Error::BadLabel { byte: 12, offset, .. }) if offset == RECORD_BYTES as u64)
        );
        assert!(matches!(load_cifar10(dir.path(), Split::Train), Err(Error::Io { .. })));
    }

    #[test]
    fn stratified_subsets() {
        let spec = SyntheticSpec {
            per_class: 30,
            shape: (1, 2, 2),
            ..Default::default()
        };
        let ds = synthesize(&spec, Split::Train).unwrap();
        let s = subset(&ds, 100, 3).unwrap();
        assert!(s.class_counts().iter().all(|c| *c == 10));
        assert_eq!(
            subset_indices(&ds, 100, 3).unwrap(),
            subset_indices(&ds, 100, 3).unwrap()
        );
        assert_ne!(
            subset_indices(&ds, 100, 3).unwrap(),
            subset_indices(&ds, 100, 4).unwrap()
        );
        assert_eq!(subset_indices(&ds, 300, 9).unwrap(), (0..300).collect::<Vec<_>>());
        assert!(matches!(subset(&ds, 310, 1), Err(Error::Stratification { .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let spec = SyntheticSpec {
            per_class: 3,
            shape: (3, 4, 4),
            ..Default::default()
        };
        let a = synthesize(&spec, Split::Train).unwrap();
        assert_eq!(a, synthesize(&spec, Split::Train).unwrap());
        assert_ne!(a, synthesize(&spec, Split::Test).unwrap());
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("syn");
        a.write_dump(&stem).unwrap();
        assert_eq!(Dataset::read_dump(&stem).unwrap(), a);
    }
}
