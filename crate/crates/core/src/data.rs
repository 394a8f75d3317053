//! Datasets: synthetic Gaussian blobs and pattern images, IDX ingestion,
//! forget/retain splits and pairwise label-flip poisoning.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
pub use crate::nn::InputShape;

/// Labelled samples with stable ids. Features are one flattened sample per
/// row (images in channel-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    ids: Vec<u64>,
    shape: InputShape,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        ids: Vec<u64>,
        shape: InputShape,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::validation(format!(
                "{} rows, {} labels, {} ids",
                n,
                labels.len(),
                ids.len()
            )));
        }
        if features.cols() != shape.len() {
            return Err(Error::validation(format!(
                "feature width {} does not match sample shape {:?}",
                features.cols(),
                shape
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::validation(format!("label {y} outside [0, {num_classes})")));
        }
        let unique: HashSet<u64> = ids.iter().copied().collect();
        if unique.len() != n {
            return Err(Error::validation("sample ids are not unique"));
        }
        Ok(Self { features, labels, num_classes, ids, shape })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    /// Rows at the given positions.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            shape: self.shape,
        }
    }

    /// Samples with the given ids, in id-list order.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Dataset> {
        let pos: HashMap<u64, usize> = self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let indices = ids
            .iter()
            .map(|id| pos.get(id).copied().ok_or_else(|| Error::validation(format!("unknown sample id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&indices))
    }

    /// Every sample whose id is not listed.
    pub fn without_ids(&self, ids: &[u64]) -> Dataset {
        let drop: HashSet<u64> = ids.iter().copied().collect();
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop.contains(&self.ids[i])).collect();
        self.subset(&keep)
    }

    /// Every sample whose label is not in `classes`.
    pub fn without_classes(&self, classes: &BTreeSet<usize>) -> Dataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !classes.contains(&self.labels[i])).collect();
        self.subset(&keep)
    }

    /// Same samples, new labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.features.clone(), labels, self.num_classes, self.ids.clone(), self.shape)
    }

    /// Relabels through `mapping[old] = Some(new)`; samples mapping to
    /// `None` are dropped.
    pub fn remap_labels(&self, mapping: &[Option<usize>]) -> Result<Dataset> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| mapping[self.labels[i]].is_some()).collect();
        let sub = self.subset(&keep);
        let classes = mapping.iter().flatten().max().map_or(0, |m| m + 1);
        let labels = sub.labels.iter().map(|&y| mapping[y].expect("filtered")).collect();
        Dataset::new(sub.features, labels, classes, sub.ids, sub.shape)
    }

    /// Concatenates two datasets with matching shapes and class counts.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.shape != other.shape || self.num_classes != other.num_classes {
            return Err(Error::validation("datasets differ in shape or class count"));
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let features = Matrix::new(self.len() + other.len(), self.shape.len(), data)?;
        let labels = [self.labels.clone(), other.labels.clone()].concat();
        let ids = [self.ids.clone(), other.ids.clone()].concat();
        Dataset::new(features, labels, self.num_classes, ids, self.shape)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Train/validation/test partition of a generated dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub classes: usize,
    /// Samples per class before the 60/20/20 train/val/test split.
    pub n_per_class: usize,
    pub dim: usize,
    /// Standard deviation of each cluster around its center.
    pub spread: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters around standard-normal centers.
pub fn make_blobs(cfg: &BlobsConfig) -> Result<Splits> {
    if cfg.classes < 2 || cfg.dim < 2 {
        return Err(Error::validation("blobs need at least 2 classes and 2 dimensions"));
    }
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) || cfg.n_per_class < 5 {
        return Err(Error::validation("blobs need spread >= 0 and at least 5 samples per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    split_generated(cfg.classes, cfg.n_per_class, InputShape::Flat(cfg.dim), |class| {
        centers[class].iter().map(|c| c + cfg.spread * rng.sample::<f64, _>(StandardNormal)).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternsConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub side: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Single-channel `side × side` images: a random template per class plus
/// Gaussian pixel noise, clipped to [0, 1].
pub fn make_patterns(cfg: &PatternsConfig) -> Result<Splits> {
    if cfg.classes < 2 || cfg.side < 3 || cfg.n_per_class < 5 || !(cfg.noise >= 0.0) {
        return Err(Error::validation("patterns need >= 2 classes, side >= 3, >= 5 samples per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels = cfg.side * cfg.side;
    let templates: Vec<Vec<f64>> =
        (0..cfg.classes).map(|_| (0..pixels).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let shape = InputShape::Image { channels: 1, height: cfg.side, width: cfg.side };
    split_generated(cfg.classes, cfg.n_per_class, shape, |class| {
        templates[class]
            .iter()
            .map(|t| (t + cfg.noise * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
            .collect()
    })
}

/// Generates `n_per_class` samples per class (class-interleaved) and
/// splits each class 60/20/20.
fn split_generated(
    classes: usize,
    n_per_class: usize,
    shape: InputShape,
    mut sample: impl FnMut(usize) -> Vec<f64>,
) -> Result<Splits> {
    let n_train = n_per_class * 3 / 5;
    let n_val = n_per_class / 5;
    let mut parts: [(Vec<Vec<f64>>, Vec<usize>); 3] = Default::default();
    for i in 0..n_per_class {
        let part = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        for class in 0..classes {
            parts[part].0.push(sample(class));
            parts[part].1.push(class);
        }
    }
    let mut next_id = 0u64;
    let mut build = |(rows, labels): (Vec<Vec<f64>>, Vec<usize>)| -> Result<Dataset> {
        let ids = (next_id..next_id + rows.len() as u64).collect();
        next_id += rows.len() as u64;
        let features = Matrix::new(rows.len(), shape.len(), rows.concat())?;
        Dataset::new(features, labels, classes, ids, shape)
    };
    let [train, val, test] = parts;
    Ok(Splits { train: build(train)?, val: build(val)?, test: build(test)? })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image/label file pair (MNIST layout).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset, message: format!("truncated {what}") })
}

/// Parses in-memory IDX containers; pixels are scaled to [0, 1].
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad image magic {magic:#010x}") });
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let magic = be_u32(labels, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad label magic {magic:#010x}") });
    }
    let n_labels = be_u32(labels, 4, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {n_labels} labels"),
        });
    }
    let pixels = n * rows * cols;
    if images.len() < 16 + pixels {
        return Err(Error::Format {
            offset: images.len(),
            message: format!("image data truncated: need {} bytes", 16 + pixels),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Format {
            offset: labels.len(),
            message: format!("label data truncated: need {} bytes", 8 + n),
        });
    }
    let data: Vec<f64> = images[16..16 + pixels].iter().map(|&p| f64::from(p) / 255.0).collect();
    let ys: Vec<usize> = labels[8..8 + n].iter().map(|&y| usize::from(y)).collect();
    let classes = ys.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::new(n, rows * cols, data)?;
    let shape = InputShape::Image { channels: 1, height: rows, width: cols };
    Dataset::new(features, ys, classes, (0..n as u64).collect(), shape)
}

/// How forget samples are chosen from a training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    PerClassRandom { n_per_class: usize },
    ClassRemoval { classes: BTreeSet<usize> },
    SubsetOfClass { class: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub mode: SplitMode,
    pub seed: u64,
}

/// Partition of training ids into forget and retain sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetSplit {
    pub forget: Vec<u64>,
    pub retain: Vec<u64>,
}

fn indices_by_class(data: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

fn take_random(pool: &[usize], n: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::validation(format!("{what}: requested {n}, only {} available", pool.len())));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    shuffled.truncate(n);
    Ok(shuffled)
}

/// Deterministic forget/retain partition; forget ids are sorted.
pub fn split_forget(data: &Dataset, spec: &SplitSpec) -> Result<ForgetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let by_class = indices_by_class(data);
    let mut forget_idx: Vec<usize> = match &spec.mode {
        SplitMode::PerClassRandom { n_per_class } => {
            let mut all = Vec::new();
            for (c, pool) in by_class.iter().enumerate() {
                all.extend(take_random(pool, *n_per_class, &mut rng, &format!("class {c}"))?);
            }
            all
        }
        SplitMode::ClassRemoval { classes } => {
            if let Some(&c) = classes.iter().find(|&&c| c >= data.num_classes()) {
                return Err(Error::validation(format!("class {c} does not exist")));
            }
            classes.iter().flat_map(|&c| by_class[c].iter().copied()).collect()
        }
        SplitMode::SubsetOfClass { class, n } => {
            let pool = by_class
                .get(*class)
                .ok_or_else(|| Error::validation(format!("class {class} does not exist")))?;
            take_random(pool, *n, &mut rng, &format!("class {class}"))?
        }
    };
    forget_idx.sort_unstable();
    let forget: Vec<u64> = forget_idx.iter().map(|&i| data.ids()[i]).collect();
    let forget_set: HashSet<u64> = forget.iter().copied().collect();
    let retain = data.ids().iter().copied().filter(|id| !forget_set.contains(id)).collect();
    Ok(ForgetSplit { forget, retain })
}

/// `rounds` pairwise-disjoint forget batches of `n_per_class` samples per
/// class, for sequential deletion requests.
pub fn incremental_batches(data: &Dataset, n_per_class: usize, rounds: usize, seed: u64) -> Result<Vec<Vec<u64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = vec![Vec::new(); rounds];
    for (c, pool) in indices_by_class(data).iter().enumerate() {
        let chosen = take_random(pool, n_per_class * rounds, &mut rng, &format!("class {c}"))?;
        for (r, chunk) in chosen.chunks(n_per_class.max(1)).enumerate().take(rounds) {
            batches[r].extend(chunk.iter().map(|&i| data.ids()[i]));
        }
    }
    for b in &mut batches {
        b.sort_unstable();
    }
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub class_pairs: Vec<(usize, usize)>,
    pub flip_fraction: f64,
    pub seed: u64,
}

/// Ground truth for a poisoning: which samples were flipped and their
/// original labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipMask {
    pub flipped_ids: Vec<u64>,
    pub true_labels: Vec<usize>,
}

impl FlipMask {
    pub fn is_empty(&self) -> bool {
        self.flipped_ids.is_empty()
    }
}

/// Within each pair (a, b), relabels `⌊fraction·n_a⌋` random a-samples as b
/// and `⌊fraction·n_b⌋` b-samples as a. Features are untouched.
pub fn poison_labels(data: &Dataset, spec: &PoisonSpec) -> Result<(Dataset, FlipMask)> {
    if !(spec.flip_fraction > 0.0 && spec.flip_fraction <= 1.0) {
        return Err(Error::validation("flip_fraction must lie in (0, 1]"));
    }
    let mut seen = BTreeSet::new();
    for &(a, b) in &spec.class_pairs {
        if a == b {
            return Err(Error::validation(format!("pair ({a}, {b}) flips a class onto itself")));
        }
        if a >= data.num_classes() || b >= data.num_classes() {
            return Err(Error::validation(format!("pair ({a}, {b}) references a missing class")));
        }
        if !seen.insert(a) || !seen.insert(b) {
            return Err(Error::validation("class pairs overlap"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let by_class = indices_by_class(data);
    let mut labels = data.labels().to_vec();
    let mut flipped = Vec::new();
    for &(a, b) in &spec.class_pairs {
        for (from, to) in [(a, b), (b, a)] {
            let n = (spec.flip_fraction * by_class[from].len() as f64).floor() as usize;
            for i in take_random(&by_class[from], n, &mut rng, "flip")? {
                labels[i] = to;
                flipped.push(i);
            }
        }
    }
    flipped.sort_unstable();
    let mask = FlipMask {
        flipped_ids: flipped.iter().map(|&i| data.ids()[i]).collect(),
        true_labels: flipped.iter().map(|&i| data.labels()[i]).collect(),
    };
    Ok((data.with_labels(labels)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(spread: f64, seed: u64) -> Splits {
        make_blobs(&BlobsConfig { classes: 4, n_per_class: 50, dim: 3, spread, seed }).unwrap()
    }

    #[test]
    fn blobs_are_deterministic_and_split_60_20_20() {
        let a = blobs(0.5, 1);
        let b = blobs(0.5, 1);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (120, 40, 40));
        assert_eq!(a.train.class_counts(), vec![30; 4]);
        assert_ne!(a.train, blobs(0.5, 2).train);
    }

    #[test]
    fn zero_spread_is_nearest_centroid_separable() {
        let s = blobs(0.0, 3);
        let centroid = |c: usize| s.train.features().row(s.train.labels().iter().position(|&y| y == c).unwrap()).to_vec();
        let centroids: Vec<Vec<f64>> = (0..4).map(centroid).collect();
        for i in 0..s.test.len() {
            let x = s.test.features().row(i);
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            assert_eq!(best, s.test.labels()[i]);
        }
    }

    #[test]
    fn degenerate_blobs_rejected() {
        assert!(make_blobs(&BlobsConfig { classes: 1, n_per_class: 10, dim: 2, spread: 1.0, seed: 0 }).is_err());
        assert!(make_blobs(&BlobsConfig { classes: 2, n_per_class: 10, dim: 1, spread: 1.0, seed: 0 }).is_err());
    }

    fn idx_pair() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend([0, 255, 51, 102, 255, 0, 0, 204]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn parses_hand_built_idx_pair() {
        let (images, labels) = idx_pair();
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[7, 3]);
        assert_eq!(d.shape(), InputShape::Image { channels: 1, height: 2, width: 2 });
        assert_eq!(d.features().row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.features().row(1), &[1.0, 0.0, 0.0, 0.8]);
    }

    #[test]
    fn idx_errors_name_offsets() {
        let (images, mut labels) = idx_pair();
        labels[7] = 3;
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format { offset: 4, .. })));
        let (mut images, labels) = idx_pair();
        images[3] = 0x01;
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format { offset: 0, .. })));
        let (images, labels) = idx_pair();
        assert!(matches!(parse_idx(&images[..20], &labels), Err(Error::Format { offset: 20, .. })));
    }

    #[test]
    fn split_regimes() {
        let s = blobs(1.0, 4);
        let empty = split_forget(&s.train, &SplitSpec { mode: SplitMode::PerClassRandom { n_per_class: 0 }, seed: 1 }).unwrap();
        assert!(empty.forget.is_empty());
        assert_eq!(empty.retain.len(), s.train.len());

        let class0 = split_forget(
            &s.train,
            &SplitSpec { mode: SplitMode::ClassRemoval { classes: BTreeSet::from([0]) }, seed: 0 },
        )
        .unwrap();
        assert_eq!(class0.forget.len(), 30);

        let sub = split_forget(&s.train, &SplitSpec { mode: SplitMode::SubsetOfClass { class: 2, n: 7 }, seed: 9 }).unwrap();
        let f = s.train.select_ids(&sub.forget).unwrap();
        assert!(f.labels().iter().all(|&y| y == 2));
        assert_eq!(f.len(), 7);

        let bad = SplitSpec { mode: SplitMode::PerClassRandom { n_per_class: 31 }, seed: 0 };
        assert!(matches!(split_forget(&s.train, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn incremental_batches_are_disjoint() {
        let s = blobs(1.0, 5);
        let batches = incremental_batches(&s.train, 5, 4, 11).unwrap();
        let mut all = HashSet::new();
        for b in &batches {
            assert_eq!(b.len(), 20);
            for id in b {
                assert!(all.insert(*id), "id {id} appears twice");
            }
        }
    }

    #[test]
    fn total_swap_and_zero_flip() {
        let s = blobs(1.0, 6);
        let spec = PoisonSpec { class_pairs: vec![(0, 1)], flip_fraction: 1.0, seed: 2 };
        let (p, mask) = poison_labels(&s.train, &spec).unwrap();
        for i in 0..p.len() {
            let expected = match s.train.labels()[i] {
                0 => 1,
                1 => 0,
                y => y,
            };
            assert_eq!(p.labels()[i], expected);
        }
        assert_eq!(mask.flipped_ids.len(), 60);
        assert_eq!(p.features(), s.train.features());

        let tiny = PoisonSpec { class_pairs: vec![(0, 1)], flip_fraction: 0.01, seed: 2 };
        let (p, mask) = poison_labels(&s.train, &tiny).unwrap();
        assert!(mask.is_empty());
        assert_eq!(p, s.train);
    }

    #[test]
    fn poison_rejects_bad_pairs() {
        let s = blobs(1.0, 6);
        let overlapping = PoisonSpec { class_pairs: vec![(0, 1), (1, 2)], flip_fraction: 0.5, seed: 0 };
        assert!(poison_labels(&s.train, &overlapping).is_err());
        let self_pair = PoisonSpec { class_pairs: vec![(2, 2)], flip_fraction: 0.5, seed: 0 };
        assert!(poison_labels(&s.train, &self_pair).is_err());
    }

    #[test]
    fn remap_drops_and_renumbers() {
        let s = blobs(1.0, 7);
        let d = s.test.remap_labels(&[None, Some(0), Some(1), Some(2)]).unwrap();
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.len(), 30);
        assert!(d.labels().iter().all(|&y| y < 3));
    }
}
