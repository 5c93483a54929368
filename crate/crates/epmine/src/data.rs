//! Synthetic multimodal-class data, feature-file ingestion, class-disjoint
//! splits, and the group-structured batch sampler.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Emb1,
}

impl FileFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "emb1" => Ok(FileFormat::Emb1),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// Parameters of the synthetic Gaussian-mixture generator. Each class gets
/// `modes_per_class` blob centers so a single label can cover several
/// well-separated regions of input space.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub modes_per_class: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub mode_separation: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1
            || self.modes_per_class < 1
            || self.samples_per_class < 1
            || self.input_dim < 1
        {
            return Err(Error::Config("all synthetic counts must be >= 1".into()));
        }
        if self.samples_per_class < self.modes_per_class {
            return Err(Error::Config(
                "samples_per_class must be >= modes_per_class".into(),
            ));
        }
        if self.mode_separation <= 0.0 || self.class_separation <= 0.0 {
            return Err(Error::Config("separations must be > 0".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Raw feature vectors with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<u32>,
    pub class_index: BTreeMap<u32, Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<u32>) -> Result<Self> {
        if features.rows == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.rows != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows,
                got: labels.len(),
            });
        }
        let mut class_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            class_index.entry(l).or_default().push(i);
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Feature rows for the given item indices, in order.
    pub fn features_of(&self, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.features.row(i));
        }
        m
    }

    /// Dataset restricted to the given item indices, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut m = Matrix::zeros(indices.len(), self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(m, labels)
    }
}

/// Draw `count` centers with pairwise distance >= `min_sep`, uniform in a box
/// centered on `origin`. Gives up after 1000 rejected candidates.
fn place_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    min_sep: f64,
    half_extent: f64,
    origin: &[f64],
    kind: &'static str,
) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut rejects = 0usize;
    while centers.len() < count {
        let cand: Vec<f64> = (0..dim)
            .map(|k| origin[k] + rng.random_range(-half_extent..half_extent))
            .collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            centers.push(cand);
        } else {
            rejects += 1;
            if rejects >= 1000 {
                return Err(Error::GenerationFailure(kind));
            }
        }
    }
    Ok(centers)
}

/// Generate a labeled Gaussian-mixture dataset. Samples of each class
/// round-robin across that class's mode centers.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let origin = vec![0.0; d];
    // Box sized so the rejection sampler has room even in low dimensions.
    let class_extent =
        spec.class_separation * (spec.num_classes as f64).powf(1.0 / d as f64).max(2.0);
    let class_centers = place_centers(
        &mut rng,
        spec.num_classes,
        d,
        spec.class_separation,
        class_extent,
        &origin,
        "class",
    )?;

    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0usize;
    for (class, center) in class_centers.iter().enumerate() {
        let mode_extent =
            spec.mode_separation * (spec.modes_per_class as f64).powf(1.0 / d as f64).max(1.5);
        let modes = place_centers(
            &mut rng,
            spec.modes_per_class,
            d,
            spec.mode_separation,
            mode_extent,
            center,
            "mode",
        )?;
        for s in 0..spec.samples_per_class {
            let mode = &modes[s % spec.modes_per_class];
            let out = features.row_mut(row);
            for (k, v) in out.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v = mode[k] + spec.noise_std * noise;
            }
            labels.push(class as u32);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels)
}

/// Which mode index a sample belongs to under the round-robin layout.
pub fn synthetic_mode_of(spec: &SyntheticSpec, item: usize) -> usize {
    (item % spec.samples_per_class) % spec.modes_per_class
}

pub fn load_features(path: &Path, format: FileFormat) -> Result<LabeledDataset> {
    match format {
        FileFormat::Csv => load_csv(path),
        FileFormat::Emb1 => load_emb1(path),
    }
}

fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("");
        let label: u32 = label_field.trim().parse().map_err(|_| Error::ParseError {
            path: path.into(),
            line: lineno + 1,
            msg: format!("bad label '{label_field}'"),
        })?;
        let feats: Vec<f64> = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::ParseError {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("bad feature value '{f}'"),
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: feats.len(),
                })
            }
            _ => {}
        }
        labels.push(label);
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    LabeledDataset::new(Matrix::from_rows(&rows), labels)
}

const EMB1_MAGIC: &[u8; 4] = b"EMB1";

fn load_emb1(path: &Path) -> Result<LabeledDataset> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != EMB1_MAGIC {
        return Err(Error::ParseError {
            path: path.into(),
            line: 0,
            msg: "bad magic, expected EMB1".into(),
        });
    }
    let count = read_u32(&mut file)? as usize;
    let dim = read_u32(&mut file)? as usize;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(read_u32(&mut file)?);
    }
    let mut data = Vec::with_capacity(count * dim);
    let mut buf = [0u8; 4];
    for _ in 0..count * dim {
        file.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    LabeledDataset::new(
        Matrix {
            rows: count,
            cols: dim,
            data,
        },
        labels,
    )
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Write a dataset in one of the documented interchange formats. CSV prints
/// features with 9 significant digits; EMB1 stores f32.
pub fn write_features(
    features: &Matrix,
    labels: &[u32],
    path: &Path,
    format: FileFormat,
) -> Result<()> {
    if features.rows == 0 {
        return Err(Error::EmptyDataset);
    }
    if features.rows != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.rows,
            got: labels.len(),
        });
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        FileFormat::Csv => {
            for i in 0..features.rows {
                write!(w, "{}", labels[i])?;
                for v in features.row(i) {
                    write!(w, ",{:.8e}", v)?;
                }
                writeln!(w)?;
            }
        }
        FileFormat::Emb1 => {
            w.write_all(EMB1_MAGIC)?;
            w.write_all(&(features.rows as u32).to_le_bytes())?;
            w.write_all(&(features.cols as u32).to_le_bytes())?;
            for &l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
            for v in &features.data {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Class-disjoint split. Train gets floor(train_fraction * num_classes)
/// classes (at least one), chosen by a seeded shuffle of the class list.
pub fn split_by_class(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if ds.num_classes() < 2 {
        return Err(Error::TooFewClasses(ds.num_classes()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must be in (0, 1)".into()));
    }
    let mut classes: Vec<u32> = ds.class_index.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let n_train = ((train_fraction * classes.len() as f64).floor() as usize)
        .clamp(1, classes.len() - 1);
    let train_classes: Vec<u32> = classes[..n_train].to_vec();
    let test_classes: Vec<u32> = classes[n_train..].to_vec();
    let collect = |cs: &[u32]| -> Vec<usize> {
        let mut idx: Vec<usize> = cs
            .iter()
            .flat_map(|c| ds.class_index[c].iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    };
    Ok((
        ds.subset(&collect(&train_classes))?,
        ds.subset(&collect(&test_classes))?,
    ))
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub group_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            batch_size: 128,
            group_size: 4,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 || self.group_size > self.batch_size {
            return Err(Error::Config(
                "group_size must satisfy 2 <= group_size <= batch_size".into(),
            ));
        }
        Ok(())
    }
}

/// One batch of dataset indices grouped by class.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<u32>,
}

impl GroupBatch {
    /// A usable batch spans >= 2 classes and contains at least one positive pair.
    pub fn validate(&self) -> Result<()> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_default() += 1;
        }
        if counts.len() < 2 || !counts.values().any(|&c| c >= 2) {
            return Err(Error::NoPositivePair);
        }
        Ok(())
    }
}

/// Fill a batch class by class: classes in random order without replacement,
/// up to `group_size` items per class, last class truncated to fit.
pub fn sample_group_batch(
    ds: &LabeledDataset,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GroupBatch> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let target = cfg.batch_size.min(ds.len());
    let mut classes: Vec<u32> = ds.class_index.keys().copied().collect();
    classes.shuffle(rng);
    let mut indices = Vec::with_capacity(target);
    let mut labels = Vec::with_capacity(target);
    for class in classes {
        if indices.len() >= target {
            break;
        }
        let mut items = ds.class_index[&class].clone();
        items.shuffle(rng);
        let take = cfg
            .group_size
            .min(items.len())
            .min(target - indices.len());
        for &i in &items[..take] {
            indices.push(i);
            labels.push(class);
        }
    }
    let batch = GroupBatch { indices, labels };
    batch.validate()?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 2,
            modes_per_class: 1,
            samples_per_class: 4,
            input_dim: 2,
            mode_separation: 1.0,
            class_separation: 4.0,
            noise_std: 0.1,
            seed,
        }
    }

    #[test]
    fn synthetic_counts() {
        let ds = generate_synthetic(&spec(7)).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.class_index[&0].len(), 4);
        assert_eq!(ds.class_index[&1].len(), 4);
    }

    #[test]
    fn synthetic_round_robin_modes() {
        let s = SyntheticSpec {
            num_classes: 1,
            modes_per_class: 2,
            samples_per_class: 10,
            input_dim: 3,
            mode_separation: 10.0,
            class_separation: 1.0,
            noise_std: 0.0,
            seed: 3,
        };
        let ds = generate_synthetic(&s).unwrap();
        // With zero noise, samples of one mode are identical points.
        let mut mode_counts = [0usize; 2];
        for i in 0..10 {
            mode_counts[synthetic_mode_of(&s, i)] += 1;
            let expect = ds.features.row(i % 2);
            assert_eq!(ds.features.row(i), expect);
        }
        assert_eq!(mode_counts, [5, 5]);
    }

    #[test]
    fn synthetic_deterministic() {
        let a = generate_synthetic(&spec(42)).unwrap();
        let b = generate_synthetic(&spec(42)).unwrap();
        assert_eq!(a.features.data, b.features.data);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn synthetic_separations_hold() {
        let s = SyntheticSpec {
            num_classes: 6,
            modes_per_class: 3,
            samples_per_class: 6,
            input_dim: 4,
            mode_separation: 1.0,
            class_separation: 3.0,
            noise_std: 0.0,
            seed: 9,
        };
        let ds = generate_synthetic(&s).unwrap();
        // Zero noise: with round-robin layout, rows 0..modes of each class are
        // the mode centers themselves.
        for c in 0..6 {
            let base = c * 6;
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let d: f64 = ds
                        .features
                        .row(base + a)
                        .iter()
                        .zip(ds.features.row(base + b))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    assert!(d.sqrt() >= 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn csv_parse_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0,1.0,0.0\n0,0.9,0.1\n1,0.0,1.0\n").unwrap();
        let ds = load_features(&path, FileFormat::Csv).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.features.row(1), &[0.9, 0.1]);
    }

    #[test]
    fn csv_bad_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0,1.0\n0,oops\n").unwrap();
        match load_features(&path, FileFormat::Csv) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emb1_empty_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.emb1");
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_features(&path, FileFormat::Emb1) {
            Err(Error::EmptyDataset) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emb1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.emb1");
        let ds = generate_synthetic(&spec(1)).unwrap();
        write_features(&ds.features, &ds.labels, &path, FileFormat::Emb1).unwrap();
        let back = load_features(&path, FileFormat::Emb1).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.data.iter().zip(&ds.features.data) {
            assert!((a - b).abs() <= (*b as f32).abs() as f64 * 1e-6 + 1e-6);
        }
    }

    fn many_class_ds(num_classes: usize, per_class: usize) -> LabeledDataset {
        let n = num_classes * per_class;
        let mut m = Matrix::zeros(n, 2);
        let mut labels = Vec::new();
        for c in 0..num_classes {
            for k in 0..per_class {
                m.set(c * per_class + k, 0, c as f64);
                m.set(c * per_class + k, 1, k as f64);
                labels.push(c as u32);
            }
        }
        LabeledDataset::new(m, labels).unwrap()
    }

    #[test]
    fn split_is_disjoint_partition() {
        let ds = many_class_ds(10, 3);
        let (tr, te) = split_by_class(&ds, 0.5, 1).unwrap();
        assert_eq!(tr.num_classes(), 5);
        assert_eq!(te.num_classes(), 5);
        for c in tr.class_index.keys() {
            assert!(!te.class_index.contains_key(c));
        }
        assert_eq!(tr.len() + te.len(), ds.len());
    }

    #[test]
    fn split_floor_rule() {
        let ds = many_class_ds(3, 2);
        let (tr, te) = split_by_class(&ds, 0.5, 0).unwrap();
        assert_eq!(tr.num_classes(), 1);
        assert_eq!(te.num_classes(), 2);

        let ds = many_class_ds(2, 2);
        let (tr, te) = split_by_class(&ds, 0.9, 0).unwrap();
        assert_eq!(tr.num_classes(), 1);
        assert_eq!(te.num_classes(), 1);
    }

    #[test]
    fn batch_full_groups() {
        let ds = many_class_ds(6, 5);
        let cfg = SamplerConfig {
            batch_size: 8,
            group_size: 4,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = sample_group_batch(&ds, &cfg, &mut rng).unwrap();
        assert_eq!(b.indices.len(), 8);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &b.labels {
            *counts.entry(l).or_default() += 1;
        }
        assert_eq!(counts.len(), 2);
        assert!(counts.values().all(|&c| c == 4));
    }

    #[test]
    fn batch_small_class_then_truncated() {
        // one class with 3 items, others with 4+
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4u32 {
            let n = if c == 0 { 3 } else { 6 };
            for k in 0..n {
                rows.push(vec![c as f64, k as f64]);
                labels.push(c);
            }
        }
        let ds = LabeledDataset::new(Matrix::from_rows(&rows), labels).unwrap();
        let cfg = SamplerConfig {
            batch_size: 8,
            group_size: 4,
            seed: 0,
        };
        // find a seed where the 3-item class is drawn first
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = sample_group_batch(&ds, &cfg, &mut rng).unwrap();
            assert_eq!(b.indices.len(), 8);
            let mut group_sizes = Vec::new();
            let mut last = None;
            for &l in &b.labels {
                if last == Some(l) {
                    *group_sizes.last_mut().unwrap() += 1;
                } else {
                    group_sizes.push(1usize);
                    last = Some(l);
                }
            }
            assert!(group_sizes.iter().all(|&g| g <= 4));
            if b.labels[0] == 0 {
                assert_eq!(group_sizes, vec![3, 4, 1]);
                return;
            }
        }
        panic!("no seed put the small class first");
    }

    #[test]
    fn batch_classes_per_batch() {
        let ds = many_class_ds(20, 32);
        let cfg = SamplerConfig {
            batch_size: 128,
            group_size: 16,
            seed: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = sample_group_batch(&ds, &cfg, &mut rng).unwrap();
        assert_eq!(b.indices.len(), 128);
        let distinct: std::collections::BTreeSet<u32> = b.labels.iter().copied().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn batch_deterministic_per_seed() {
        let ds = many_class_ds(8, 6);
        let cfg = SamplerConfig {
            batch_size: 16,
            group_size: 3,
            seed: 77,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        let a = sample_group_batch(&ds, &cfg, &mut r1).unwrap();
        let b = sample_group_batch(&ds, &cfg, &mut r2).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn batch_never_exceeds_group_size() {
        let ds = many_class_ds(7, 9);
        for seed in 0..50u64 {
            let cfg = SamplerConfig {
                batch_size: 20,
                group_size: 5,
                seed,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = sample_group_batch(&ds, &cfg, &mut rng).unwrap();
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &l in &b.labels {
                *counts.entry(l).or_default() += 1;
            }
            assert!(counts.values().all(|&c| c <= 5));
        }
    }
}
