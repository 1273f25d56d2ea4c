//! Datasets: seeded synthetic blob tasks, IDX ingestion, batching.
//!
//! The blob generator is the standard workload: class centers drawn
//! uniformly in `[-1, 1]^N` with Gaussian samples around them, so task
//! difficulty is one `spread` knob. The IDX reader admits small real image
//! sets in the common big-endian format. Everything is deterministic under
//! the experiment seed.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamKind};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled feature vectors of uniform dimension.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Row-major `[len, dim]`.
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Contract("dataset must be nonempty".into()));
        }
        if dim == 0 {
            return Err(Error::Contract("feature dimension must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Contract(format!(
                "dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Contract(format!(
                "{} feature values do not fill {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature at flat index {bad}")));
        }
        Ok(Dataset { features, labels, dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// All features as a `[len, dim]` tensor.
    pub fn features_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.features.clone())
            .expect("validated at construction")
    }

    /// Features of the given samples as a `[indices.len(), dim]` tensor.
    pub fn features_of(&self, indices: &[usize]) -> Result<Tensor> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            values.extend_from_slice(self.feature(i));
        }
        Tensor::new(vec![indices.len(), self.dim], values)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Seeded disjoint split; the first part receives
    /// `round(train_fraction * len)` samples, at least 1 on each side.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.len() < 2 {
            return Err(Error::Contract("cannot split fewer than 2 samples".into()));
        }
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::Contract(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream(seed, StreamKind::Split, 0));
        let n_train =
            ((self.len() as f64 * train_fraction).round() as usize).clamp(1, self.len() - 1);
        let take = |idx: &[usize]| {
            let mut features = Vec::with_capacity(idx.len() * self.dim);
            let mut labels = Vec::with_capacity(idx.len());
            for &i in idx {
                features.extend_from_slice(self.feature(i));
                labels.push(self.labels[i]);
            }
            Dataset::new(features, labels, self.dim, self.num_classes)
        };
        Ok((take(&order[..n_train])?, take(&order[n_train..])?))
    }

    /// Writes `label,f_0,...,f_{N-1}` rows, preceded by `# `-prefixed
    /// preamble lines (provenance comments).
    pub fn write_csv(&self, w: &mut impl Write, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        write!(w, "label")?;
        for d in 0..self.dim {
            write!(w, ",f_{d}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for v in self.feature(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`Dataset::write_csv`], skipping `#`
    /// comment lines. Classes are `max label + 1`.
    pub fn read_csv(r: &mut impl BufRead, source: &str) -> Result<Dataset> {
        let mut lines = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            lines.push((lineno + 1, line));
        }
        let Some((_, header)) = lines.first() else {
            return Err(Error::Ingest(format!("{source}: no header row")));
        };
        if !header.starts_with("label,f_0") {
            return Err(Error::Ingest(format!(
                "{source}: header {header:?} is not a dataset header"
            )));
        }
        let dim = header.split(',').count() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in &lines[1..] {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Ingest(format!(
                    "{source}:{lineno}: {} fields, expected {}",
                    fields.len(),
                    dim + 1
                )));
            }
            let label: usize = fields[0].parse().map_err(|_| {
                Error::Ingest(format!("{source}:{lineno}: bad label {:?}", fields[0]))
            })?;
            labels.push(label);
            for f in &fields[1..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::Ingest(format!("{source}:{lineno}: bad feature {f:?}")))?;
                features.push(v);
            }
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Dataset::new(features, labels, dim, num_classes)
    }
}

/// `num_classes` Gaussian blobs in `[-1, 1]^dim`: centers uniform, samples
/// at standard deviation `spread` around their center. Samples are ordered
/// class-major; batching reshuffles them anyway.
pub fn generate_blobs(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Contract(format!(
            "blob task needs at least 2 classes, got {num_classes}"
        )));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::Contract(format!("spread must be positive, got {spread}")));
    }
    if dim == 0 || samples_per_class == 0 {
        return Err(Error::Contract(
            "blob task needs positive dimension and samples per class".into(),
        ));
    }
    let mut rng = stream(seed, StreamKind::DataGen, 0);
    let centers: Vec<f64> = (0..num_classes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = Normal::new(0.0, spread).expect("spread validated");
    let mut features = Vec::with_capacity(num_classes * samples_per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for c in 0..num_classes {
        for _ in 0..samples_per_class {
            for d in 0..dim {
                features.push(centers[c * dim + d] + noise.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

fn be_u32(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    buf.get(offset..offset + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(
        || {
            Error::Ingest(format!(
                "{}: truncated at offset {offset} (need 4 bytes)",
                path.display()
            ))
        },
    )
}

/// Reads an IDX image/label file pair (big-endian, magic `0x00000803` /
/// `0x00000801`), scaling pixels to `[0, 1]` and flattening each image.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Ingest(format!(
            "{}: magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}",
            images_path.display()
        )));
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixel_bytes = count * rows * cols;
    if images.len() != 16 + pixel_bytes {
        return Err(Error::Ingest(format!(
            "{}: {} bytes, expected {} for {count} images of {rows}x{cols} \
             (truncated at offset {})",
            images_path.display(),
            images.len(),
            16 + pixel_bytes,
            images.len().min(16 + pixel_bytes)
        )));
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Ingest(format!(
            "{}: magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}",
            labels_path.display()
        )));
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() != 8 + label_count {
        return Err(Error::Ingest(format!(
            "{}: {} bytes, expected {} for {label_count} labels (truncated at offset {})",
            labels_path.display(),
            labels.len(),
            8 + label_count,
            labels.len().min(8 + label_count)
        )));
    }
    if label_count != count {
        return Err(Error::Ingest(format!(
            "{} has {count} images but {} has {label_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }

    let features: Vec<f64> = images[16..].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = labels[8..].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, rows * cols, num_classes)
}

/// Splits a seeded permutation of the dataset into `p` near-equal index
/// batches keyed by `(seed, epoch)`; every sample appears exactly once.
pub fn batches(ds: &Dataset, p: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if p == 0 || p > ds.len() {
        return Err(Error::Contract(format!(
            "cannot divide {} samples into {p} batches",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream(seed, StreamKind::Shuffle, epoch as u64));
    let base = ds.len() / p;
    let rem = ds.len() % p;
    let mut out = Vec::with_capacity(p);
    let mut at = 0;
    for i in 0..p {
        let size = base + usize::from(i < rem);
        out.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_spread_is_nearest_centroid_separable() {
        let ds = generate_blobs(4, 3, 50, 1e-6, 11).unwrap();
        let mut centroids = [0.0; 4 * 3];
        let mut counts = [0usize; 4];
        for i in 0..ds.len() {
            let c = ds.label(i);
            counts[c] += 1;
            for (d, v) in ds.feature(i).iter().enumerate() {
                centroids[c * 3 + d] += v;
            }
        }
        for c in 0..4 {
            for d in 0..3 {
                centroids[c * 3 + d] /= counts[c] as f64;
            }
        }
        for i in 0..ds.len() {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for c in 0..4 {
                let dist: f64 = ds
                    .feature(i)
                    .iter()
                    .zip(&centroids[c * 3..(c + 1) * 3])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_dist {
                    best = c;
                    best_dist = dist;
                }
            }
            assert_eq!(best, ds.label(i));
        }
    }

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = generate_blobs(3, 2, 10, 0.2, 5).unwrap();
        let b = generate_blobs(3, 2, 10, 0.2, 5).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let c = generate_blobs(3, 2, 10, 0.2, 6).unwrap();
        assert_ne!(a.features, c.features);
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        // 4 images of 2x2 pixels, then 4 labels
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&4u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend((0u8..16).map(|v| v * 16));
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&4u32.to_be_bytes());
        labels.extend_from_slice(&[0u8, 1, 1, 0]);
        (images, labels)
    }

    fn write_temp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn idx_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        let ip = write_temp(&dir, "images.idx", &images);
        let lp = write_temp(&dir, "labels.idx", &labels);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.labels(), &[0, 1, 1, 0]);
        assert_eq!(ds.feature(0)[1], 16.0 / 255.0);
        assert!(ds.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, mut labels) = idx_fixture();
        labels[7] = 3;
        labels.truncate(11);
        let ip = write_temp(&dir, "images.idx", &images);
        let lp = write_temp(&dir, "labels.idx", &labels);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Ingest(_)), "{err}");
        assert!(err.to_string().contains("3 labels"), "{err}");
    }

    #[test]
    fn idx_bad_magic_names_file_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (mut images, labels) = idx_fixture();
        images[2] = 0xFF;
        let ip = write_temp(&dir, "images.idx", &images);
        let lp = write_temp(&dir, "labels.idx", &labels);
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("images.idx") && err.contains("offset 0"), "{err}");
    }

    #[test]
    fn idx_dimensions_parse_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let (mut images, _) = idx_fixture();
        // rows field bytes [8..12] read as 2, not 2<<24
        images[8] = 0;
        images[11] = 2;
        let ip = write_temp(&dir, "images.idx", &images);
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&4u32.to_be_bytes());
        labels.extend_from_slice(&[0u8, 1, 1, 0]);
        let lp = write_temp(&dir, "labels.idx", &labels);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.feature_dim(), 4);
    }

    #[test]
    fn single_batch_is_a_permutation() {
        let ds = generate_blobs(2, 2, 10, 0.1, 1).unwrap();
        let b = batches(&ds, 1, 3, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mut seen = b[0].clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn batches_partition_the_dataset() {
        let ds = generate_blobs(2, 2, 17, 0.1, 1).unwrap();
        let bs = batches(&ds, 4, 3, 2).unwrap();
        assert_eq!(bs.len(), 4);
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![9, 9, 8, 8]);
        let mut seen: Vec<usize> = bs.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..34).collect::<Vec<_>>());
    }

    #[test]
    fn batches_keyed_by_seed_and_epoch() {
        let ds = generate_blobs(2, 2, 50, 0.1, 1).unwrap();
        assert_eq!(batches(&ds, 3, 7, 4).unwrap(), batches(&ds, 3, 7, 4).unwrap());
        assert_ne!(batches(&ds, 3, 7, 4).unwrap(), batches(&ds, 3, 7, 5).unwrap());
    }

    #[test]
    fn batches_reject_oversubscription() {
        let ds = generate_blobs(2, 2, 2, 0.1, 1).unwrap();
        assert!(batches(&ds, 5, 0, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let ds = generate_blobs(2, 2, 50, 0.1, 1).unwrap();
        let (tr, te) = ds.split(0.8, 9).unwrap();
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 20);
        let (tr2, te2) = ds.split(0.8, 9).unwrap();
        assert_eq!(tr.features, tr2.features);
        assert_eq!(te.labels, te2.labels);
        // Disjointness: every feature vector is unique under this spread,
        // so matching rows would mean leakage.
        for i in 0..tr.len() {
            for j in 0..te.len() {
                assert_ne!(tr.feature(i), te.feature(j));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_blobs(3, 4, 5, 0.3, 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &["mrtoc config_hash=test seed=2".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# mrtoc"));
        assert!(text.lines().nth(1).unwrap().starts_with("label,f_0,f_1,f_2,f_3"));
        let back = Dataset::read_csv(&mut &buf[..], "mem").unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features, ds.features);
        assert_eq!(back.num_classes(), 3);
    }

    #[test]
    fn csv_read_names_offending_line() {
        let text = "label,f_0\n0,1.0\nnope,2.0\n";
        let err = Dataset::read_csv(&mut text.as_bytes(), "bad.csv").unwrap_err().to_string();
        assert!(err.contains("bad.csv:3"), "{err}");
    }
}
