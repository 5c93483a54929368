//! Retrieval evaluation (Recall@K) and embedding diagnostics: per-item
//! nearest-positive/negative similarities, intra-class similarity spread, and
//! a PCA 2-D projection for quick visualization exports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{write_features, FileFormat};
use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    /// Query set is the gallery; the query itself is excluded from retrieval.
    SelfQuery,
    /// Separate query and gallery sets.
    QueryGallery,
}

impl RetrievalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self_query" => Ok(RetrievalMode::SelfQuery),
            "query_gallery" => Ok(RetrievalMode::QueryGallery),
            other => Err(Error::Config(format!("unknown retrieval mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub k_values: Vec<usize>,
    pub mode: RetrievalMode,
    pub exclude_self: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_values: vec![1, 2, 4, 8],
            mode: RetrievalMode::SelfQuery,
            exclude_self: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values[0] < 1 {
            return Err(Error::Config("k_values must be non-empty, all >= 1".into()));
        }
        if !self.k_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("k_values must be strictly increasing".into()));
        }
        Ok(())
    }

    fn excludes_self(&self) -> bool {
        // self-query always excludes the query itself
        self.mode == RetrievalMode::SelfQuery || self.exclude_self
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalReport {
    pub recall_at_k: Vec<(usize, f64)>,
    pub num_queries: usize,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at_k.iter().find(|&&(kk, _)| kk == k).map(|&(_, r)| r)
    }

    /// Flat `key=value` text block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("num_queries={}\n", self.num_queries));
        for &(k, r) in &self.recall_at_k {
            out.push_str(&format!("recall_at_{k}={r:.6}\n"));
        }
        out
    }
}

fn top_k_hits(
    q_row: &[f64],
    q_label: u32,
    q_index: usize,
    gallery: &EmbeddingMatrix,
    gallery_labels: &[u32],
    exclude_self: bool,
    ks: &[usize],
) -> Vec<bool> {
    let g = gallery.rows();
    let mut sims: Vec<(usize, f64)> = (0..g)
        .filter(|&j| !(exclude_self && j == q_index))
        .map(|j| (j, dot(q_row, gallery.row(j))))
        .collect();
    // descending similarity, ties to the lower gallery index
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let max_k = *ks.last().unwrap();
    let mut hits = Vec::with_capacity(ks.len());
    let mut any = false;
    let mut ki = 0;
    for (rank, &(j, _)) in sims.iter().take(max_k).enumerate() {
        if gallery_labels[j] == q_label {
            any = true;
        }
        while ki < ks.len() && rank + 1 == ks[ki] {
            hits.push(any);
            ki += 1;
        }
    }
    while ki < ks.len() {
        hits.push(any);
        ki += 1;
    }
    hits
}

/// Recall@K: fraction of queries whose top-K retrieved gallery items contain
/// at least one item of the query's class.
pub fn recall_at_k(
    query: &EmbeddingMatrix,
    query_labels: &[u32],
    gallery: &EmbeddingMatrix,
    gallery_labels: &[u32],
    cfg: &RetrievalConfig,
) -> Result<RetrievalReport> {
    cfg.validate()?;
    if query.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            expected: gallery.dim(),
            got: query.dim(),
        });
    }
    let exclude = cfg.excludes_self();
    let effective = gallery.rows() - usize::from(exclude);
    let max_k = *cfg.k_values.last().unwrap();
    if max_k >= effective {
        return Err(Error::KTooLarge {
            k: max_k,
            gallery: effective,
        });
    }

    let n = query.rows();
    let per_query: Vec<Vec<bool>>;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        per_query = (0..n)
            .into_par_iter()
            .map(|i| {
                top_k_hits(
                    query.row(i),
                    query_labels[i],
                    i,
                    gallery,
                    gallery_labels,
                    exclude,
                    &cfg.k_values,
                )
            })
            .collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        per_query = (0..n)
            .map(|i| {
                top_k_hits(
                    query.row(i),
                    query_labels[i],
                    i,
                    gallery,
                    gallery_labels,
                    exclude,
                    &cfg.k_values,
                )
            })
            .collect();
    }

    let mut recall_at_k = Vec::with_capacity(cfg.k_values.len());
    for (ki, &k) in cfg.k_values.iter().enumerate() {
        let hits = per_query.iter().filter(|h| h[ki]).count();
        recall_at_k.push((k, hits as f64 / n as f64));
    }
    Ok(RetrievalReport {
        recall_at_k,
        num_queries: n,
    })
}

/// Per-item nearest-neighbor similarities (self excluded).
#[derive(Debug, Clone)]
pub struct ItemNeighborStat {
    pub index: usize,
    pub label: u32,
    /// Absent when the item's class has no other member.
    pub nearest_pos_sim: Option<f64>,
    pub nearest_neg_sim: f64,
    /// nearest positive strictly more similar than nearest negative;
    /// ties count as incorrect.
    pub correct_at_1: bool,
}

#[derive(Debug, Clone)]
pub struct NeighborStats {
    pub items: Vec<ItemNeighborStat>,
}

impl NeighborStats {
    /// Mean correct-at-1 flag over items that have a positive; equals
    /// Recall@1 in self-query mode.
    pub fn accuracy_at_1(&self) -> f64 {
        let eligible: Vec<_> = self
            .items
            .iter()
            .filter(|s| s.nearest_pos_sim.is_some())
            .collect();
        if eligible.is_empty() {
            return 0.0;
        }
        eligible.iter().filter(|s| s.correct_at_1).count() as f64 / eligible.len() as f64
    }

    /// CSV rows: `index,label,nearest_pos_sim,nearest_neg_sim,correct_at_1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label,nearest_pos_sim,nearest_neg_sim,correct_at_1\n");
        for s in &self.items {
            let pos = s
                .nearest_pos_sim
                .map_or_else(|| "".to_string(), |v| format!("{v:.8e}"));
            out.push_str(&format!(
                "{},{},{},{:.8e},{}\n",
                s.index, s.label, pos, s.nearest_neg_sim, u8::from(s.correct_at_1)
            ));
        }
        out
    }
}

pub fn neighbor_stats(e: &EmbeddingMatrix, labels: &[u32]) -> NeighborStats {
    let b = e.rows();
    let mut items = Vec::with_capacity(b);
    for i in 0..b {
        let mut best_pos: Option<f64> = None;
        let mut best_neg = f64::NEG_INFINITY;
        for j in 0..b {
            if j == i {
                continue;
            }
            let s = dot(e.row(i), e.row(j));
            if labels[j] == labels[i] {
                if best_pos.is_none_or(|p| s > p) {
                    best_pos = Some(s);
                }
            } else if s > best_neg {
                best_neg = s;
            }
        }
        let correct = best_pos.is_some_and(|p| p > best_neg);
        items.push(ItemNeighborStat {
            index: i,
            label: labels[i],
            nearest_pos_sim: best_pos,
            nearest_neg_sim: best_neg,
            correct_at_1: correct,
        });
    }
    NeighborStats { items }
}

/// Summary of a set of same-class pairwise similarities.
#[derive(Debug, Clone)]
pub struct SpreadSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// 10th..90th percentiles.
    pub deciles: [f64; 9],
}

fn summarize(values: &mut Vec<f64>) -> SpreadSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut deciles = [0.0; 9];
    for (i, d) in deciles.iter_mut().enumerate() {
        // nearest-rank percentile on the sorted list
        let q = (i + 1) as f64 / 10.0;
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        *d = values[idx];
    }
    SpreadSummary {
        count: n,
        mean,
        std: var.sqrt(),
        deciles,
    }
}

#[derive(Debug, Clone)]
pub struct IntraClassSpread {
    pub per_class: Vec<(u32, SpreadSummary)>,
    /// Summary over all same-class pairs pooled across classes.
    pub pooled: SpreadSummary,
}

impl IntraClassSpread {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,mean,std\n");
        for (c, s) in &self.per_class {
            out.push_str(&format!("{},{},{:.8e},{:.8e}\n", c, s.count, s.mean, s.std));
        }
        out.push_str(&format!(
            "pooled,{},{:.8e},{:.8e}\n",
            self.pooled.count, self.pooled.mean, self.pooled.std
        ));
        out
    }
}

/// Distribution of similarities over same-class pairs (i < j), per class and
/// pooled. Classes with fewer than 2 items contribute no pairs.
pub fn intra_class_spread(e: &EmbeddingMatrix, labels: &[u32]) -> Result<IntraClassSpread> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut pooled = Vec::new();
    let mut per_class = Vec::new();
    for (&c, idx) in &by_class {
        if idx.len() < 2 {
            continue;
        }
        let mut sims = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                sims.push(dot(e.row(i), e.row(j)));
            }
        }
        pooled.extend_from_slice(&sims);
        per_class.push((c, summarize(&mut sims)));
    }
    if pooled.is_empty() {
        return Err(Error::NoPositivePair);
    }
    Ok(IntraClassSpread {
        per_class,
        pooled: summarize(&mut pooled),
    })
}

/// Jacobi eigendecomposition of a symmetric matrix; returns eigenvalues in
/// descending order with matching eigenvector columns.
fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).partial_cmp(&m.get(i, i)).unwrap());
    let evals = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs.set(row, col, v.get(row, src));
        }
    }
    (evals, vecs)
}

/// Project the centered embedding onto its top-2 principal components. The
/// sign of each component is fixed so its first nonzero loading is positive.
pub fn pca_project_2d(e: &EmbeddingMatrix) -> Result<Matrix> {
    let (b, d) = (e.rows(), e.dim());
    if b < 3 {
        return Err(Error::Config("PCA needs at least 3 points".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..b {
        for (k, m) in mean.iter_mut().enumerate() {
            *m += e.row(i)[k];
        }
    }
    for m in &mut mean {
        *m /= b as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..b {
        let row = e.row(i);
        for p in 0..d {
            let xp = row[p] - mean[p];
            for q in p..d {
                let add = xp * (row[q] - mean[q]) / b as f64;
                cov.data[p * d + q] += add;
            }
        }
    }
    for p in 0..d {
        for q in (p + 1)..d {
            cov.set(q, p, cov.get(p, q));
        }
    }
    let (evals, evecs) = symmetric_eigen(&cov);
    if evals.len() < 2 || evals[1] <= 1e-12 * evals[0].max(1e-300) {
        return Err(Error::DegenerateCovariance);
    }
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for (c, comp) in components.iter_mut().enumerate() {
        for k in 0..d {
            comp[k] = evecs.get(k, c);
        }
        let sign = comp
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map_or(1.0, |v| v.signum());
        for v in comp.iter_mut() {
            *v *= sign;
        }
    }
    let mut out = Matrix::zeros(b, 2);
    for i in 0..b {
        let row = e.row(i);
        for (c, comp) in components.iter().enumerate() {
            let proj: f64 = row
                .iter()
                .zip(&mean)
                .zip(comp)
                .map(|((x, m), w)| (x - m) * w)
                .sum();
            out.set(i, c, proj);
        }
    }
    Ok(out)
}

/// Write embeddings in one of the interchange formats; round-trips through
/// the feature loader.
pub fn export_embeddings(
    e: &EmbeddingMatrix,
    labels: &[u32],
    path: &Path,
    format: FileFormat,
) -> Result<()> {
    write_features(e.as_matrix(), labels, path, format)
}
