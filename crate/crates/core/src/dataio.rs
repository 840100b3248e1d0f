//! IDX (MNIST) ingestion, seeded splitting and the normalized input norm.
//!
//! Pixels are stored as `f64` in `[0, 1]` (raw byte / 255). Images are kept
//! row-major in an `m × d` matrix, one example per row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_CLASSES: usize = 10;
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `m × d`, entries in `[0, 1]`.
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        images: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if images.nrows() == 0 {
            return Err(Error::InsufficientExamples {
                requested: 1,
                available: 0,
            });
        }
        if images.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        if images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let images = self.images.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self {
            images,
            labels,
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    /// First `n` examples (or all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice(s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// `n` back-to-back copies of this dataset (the replicated sample `S^n`).
    pub fn replicate(&self, n: usize) -> Self {
        assert!(n >= 1, "replication count must be at least 1");
        let views: Vec<_> = (0..n).map(|_| self.images.view()).collect();
        let images = ndarray::concatenate(Axis(0), &views).expect("same column count");
        let labels = self.labels.iter().copied().cycle().take(n * self.len()).collect();
        Self {
            images,
            labels,
            num_classes: self.num_classes,
            name: format!("{}^{}", self.name, n),
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what}: header ends at byte {offset}")))
}

/// Parses an IDX3 image file. Returns `(count, rows*cols, raw pixel bytes)`.
fn parse_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4, "images")? as usize;
    let rows = read_u32_be(bytes, 8, "images")? as usize;
    let cols = read_u32_be(bytes, 12, "images")? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * dim {
        return Err(Error::Truncated(format!(
            "images: expected {} pixel bytes, found {}",
            count * dim,
            body.len()
        )));
    }
    Ok((count, dim, &body[..count * dim]))
}

fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!(
            "labels: expected {count} bytes, found {}",
            body.len()
        )));
    }
    Ok(&body[..count])
}

/// Decodes an image/label IDX pair held in memory.
pub fn decode_idx(image_bytes: &[u8], label_bytes: &[u8], name: &str) -> Result<Dataset> {
    let (count, dim, pixels) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let images = Array2::from_shape_vec(
        (count, dim),
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("shape matches pixel count");
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(images, labels, num_classes, name)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path.as_ref())?;
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_idx(&image_bytes, &label_bytes, &name)
}

/// Encodes a dataset back to IDX bytes. Pixels are quantized to `round(255·v)`,
/// so a dataset that came from IDX round-trips exactly. Images are written as a
/// single row of `d` columns unless `shape` gives `(rows, cols)`.
pub fn encode_idx(dataset: &Dataset, shape: Option<(usize, usize)>) -> (Vec<u8>, Vec<u8>) {
    let d = dataset.input_dim();
    let (rows, cols) = shape.unwrap_or((1, d));
    assert_eq!(rows * cols, d, "image shape must match input dimension");

    let mut images = Vec::with_capacity(16 + dataset.len() * d);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend(dataset.images.iter().map(|&v| (v * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    labels.extend(dataset.labels.iter().map(|&l| l as u8));
    (images, labels)
}

pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    shape: Option<(usize, usize)>,
) -> Result<()> {
    let (images, labels) = encode_idx(dataset, shape);
    fs::File::create(images_path)?.write_all(&images)?;
    fs::File::create(labels_path)?.write_all(&labels)?;
    Ok(())
}

/// Paths of the four standard MNIST files inside `dir`.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join(MNIST_TRAIN_IMAGES),
            train_labels: dir.join(MNIST_TRAIN_LABELS),
            test_images: dir.join(MNIST_TEST_IMAGES),
            test_labels: dir.join(MNIST_TEST_LABELS),
        }
    }

    pub fn exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }

    pub fn load_train(&self) -> Result<Dataset> {
        let mut ds = load_idx(&self.train_images, &self.train_labels)?;
        ds.name = "mnist-train".into();
        ds.num_classes = MNIST_CLASSES;
        Ok(ds)
    }

    pub fn load_test(&self) -> Result<Dataset> {
        let mut ds = load_idx(&self.test_images, &self.test_labels)?;
        ds.name = "mnist-test".into();
        ds.num_classes = MNIST_CLASSES;
        Ok(ds)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
}

/// Seeded train/validation split of a training file. The validation set is
/// carved from the end of a seeded permutation; the test set is loaded from
/// its own file and does not pass through here.
pub fn split(dataset: &Dataset, train_size: usize, val_size: usize, seed: u64) -> Result<Split> {
    let requested = train_size + val_size;
    if requested > dataset.len() || train_size == 0 || val_size == 0 {
        return Err(Error::InsufficientExamples {
            requested,
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tail = &order[dataset.len() - val_size..];
    let head = &order[..train_size];
    Ok(Split {
        train: dataset.subset(head, format!("{}-train", dataset.name)),
        val: dataset.subset(tail, format!("{}-val", dataset.name)),
    })
}

/// Normalized Frobenius norm `sqrt((1/m) Σ x_ij²)` of the input matrix.
pub fn input_frobenius(train: &Dataset) -> f64 {
    let m = train.len() as f64;
    (train.images.iter().map(|v| v * v).sum::<f64>() / m).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
        // two 2×2 images
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 204]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn decodes_hand_built_fixture() {
        let (img, lab) = fixture_bytes();
        let ds = decode_idx(&img, &lab, "fixture").unwrap();
        assert_eq!(ds.images.shape(), &[2, 4]);
        let expected = [0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 0.8];
        for (got, want) in ds.images.iter().zip(expected) {
            assert_eq!(*got, want);
        }
        assert_eq!(ds.labels, vec![7, 3]);
    }

    #[test]
    fn rejects_bad_magic() {
        let (mut img, lab) = fixture_bytes();
        img[3] = 0x01;
        let err = decode_idx(&img, &lab, "x").unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        let (img, mut lab) = fixture_bytes();
        lab[3] = 0x03;
        assert!(matches!(
            decode_idx(&img, &lab, "x"),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_count_mismatch_and_truncation() {
        let (img, mut lab) = fixture_bytes();
        lab[7] = 1;
        lab.pop();
        assert!(matches!(
            decode_idx(&img, &lab, "x"),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
        let (mut img, lab) = fixture_bytes();
        img.truncate(20);
        assert!(matches!(decode_idx(&img, &lab, "x"), Err(Error::Truncated(_))));
        assert!(matches!(decode_idx(&img[..6], &lab, "x"), Err(Error::Truncated(_))));
    }

    fn toy(m: usize) -> Dataset {
        let images = Array2::from_shape_fn((m, 3), |(i, j)| ((i * 7 + j * 3) % 256) as f64 / 255.0);
        let labels = (0..m).map(|i| i % 10).collect();
        Dataset::new(images, labels, 10, "toy").unwrap()
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = toy(100);
        let a = split(&ds, 80, 20, 3).unwrap();
        let b = split(&ds, 80, 20, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.val.len(), 20);
        let c = split(&ds, 80, 20, 4).unwrap();
        assert_ne!(a.train.labels, c.train.labels);
    }

    #[test]
    fn split_rejects_oversized_request() {
        let ds = toy(10);
        assert!(matches!(
            split(&ds, 9, 2, 0),
            Err(Error::InsufficientExamples { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn frobenius_examples() {
        let zeros = Dataset::new(Array2::zeros((3, 4)), vec![0, 1, 2], 10, "z").unwrap();
        assert_eq!(input_frobenius(&zeros), 0.0);
        let ones = Dataset::new(Array2::ones((1, 4)), vec![0], 10, "o").unwrap();
        assert_eq!(input_frobenius(&ones), 2.0);
    }

    #[test]
    fn frobenius_is_replication_invariant() {
        let ds = toy(37);
        let base = input_frobenius(&ds);
        for n in [2, 3, 7] {
            let rep = input_frobenius(&ds.replicate(n));
            assert!((rep - base).abs() <= 1e-12 * base, "n={n}: {rep} vs {base}");
        }
    }

    #[test]
    fn dataset_rejects_out_of_range_pixels_and_labels() {
        let bad = Array2::from_elem((1, 2), 1.5);
        assert!(Dataset::new(bad, vec![0], 10, "b").is_err());
        let ok = Array2::zeros((1, 2));
        assert!(matches!(
            Dataset::new(ok, vec![10], 10, "b"),
            Err(Error::LabelOutOfRange { label: 10, classes: 10 })
        ));
    }
}
