//! NCA-based loss family over mined triplets (EP, EPHN, EPSHN, HP, HPHN,
//! N-pair, batch-all) plus a margin triplet baseline. Every loss returns the
//! scalar value and the analytic gradient with respect to the normalized
//! embeddings; mined selections are treated as constants under
//! differentiation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity_matrix, EmbeddingMatrix, Matrix, SimilarityMatrix};
use crate::mining;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossStrategy {
    Ep,
    Ephn,
    Epshn,
    Hp,
    Hphn,
    Npair,
    BatchAll,
    TripletMargin,
}

impl LossStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EP" => Ok(LossStrategy::Ep),
            "EPHN" => Ok(LossStrategy::Ephn),
            "EPSHN" => Ok(LossStrategy::Epshn),
            "HP" => Ok(LossStrategy::Hp),
            "HPHN" => Ok(LossStrategy::Hphn),
            "NPAIR" => Ok(LossStrategy::Npair),
            "BATCH_ALL" | "BATCHALL" | "BA" => Ok(LossStrategy::BatchAll),
            "TRIPLET_MARGIN" | "TRIPLET" => Ok(LossStrategy::TripletMargin),
            other => Err(Error::Config(format!("unknown loss strategy '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossStrategy::Ep => "EP",
            LossStrategy::Ephn => "EPHN",
            LossStrategy::Epshn => "EPSHN",
            LossStrategy::Hp => "HP",
            LossStrategy::Hphn => "HPHN",
            LossStrategy::Npair => "NPAIR",
            LossStrategy::BatchAll => "BATCH_ALL",
            LossStrategy::TripletMargin => "TRIPLET_MARGIN",
        }
    }
}

/// What to do when semi-hard mining finds no feasible negative for an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShnFallback {
    /// Use the hardest negative overall so the anchor still contributes.
    Hardest,
    /// Drop the anchor from the loss.
    Skip,
}

impl ShnFallback {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hardest" => Ok(ShnFallback::Hardest),
            "skip" => Ok(ShnFallback::Skip),
            other => Err(Error::Config(format!("unknown shn_fallback '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub strategy: LossStrategy,
    pub temperature: f64,
    pub margin: f64,
    pub shn_fallback: ShnFallback,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            strategy: LossStrategy::Epshn,
            temperature: 0.1,
            margin: 0.1,
            shn_fallback: ShnFallback::Hardest,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// d(loss)/d(normalized embeddings), B x D.
    pub grad: Matrix,
    pub num_anchors: usize,
}

/// One softmax-ratio term: -log( e^{s_pos/t} / (e^{s_pos/t} + sum_i e^{s_neg_i/t}) ),
/// evaluated through a shifted log-sum-exp. Returns the loss together with
/// d/ds_pos and d/ds_neg_i.
pub fn nca_term(s_pos: f64, s_negs: &[f64], temperature: f64) -> Result<(f64, f64, Vec<f64>)> {
    if s_negs.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let t = temperature;
    let a_pos = s_pos / t;
    let scaled: Vec<f64> = s_negs.iter().map(|s| s / t).collect();
    let m = scaled.iter().copied().fold(a_pos, f64::max);
    let e_pos = (a_pos - m).exp();
    let e_negs: Vec<f64> = scaled.iter().map(|a| (a - m).exp()).collect();
    let z = e_pos + e_negs.iter().sum::<f64>();
    let p_pos = e_pos / z;
    let loss = -(p_pos.ln());
    let d_pos = -(1.0 - p_pos) / t;
    let d_negs = e_negs.iter().map(|e| (e / z) / t).collect();
    Ok((loss, d_pos, d_negs))
}

/// One selected loss term: an anchor, its positive, and the negative index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossTerm {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

fn different_label(labels: &[u32], anchor: usize) -> Vec<usize> {
    (0..labels.len())
        .filter(|&j| labels[j] != labels[anchor])
        .collect()
}

fn positives_of(labels: &[u32], anchor: usize) -> Vec<usize> {
    (0..labels.len())
        .filter(|&j| j != anchor && labels[j] == labels[anchor])
        .collect()
}

/// Resolve a strategy to its concrete (anchor, positive, negatives) terms on a
/// given similarity matrix. Exposed so gradient checks can verify that a
/// perturbation left the selection unchanged.
pub fn loss_terms(s: &SimilarityMatrix, labels: &[u32], cfg: &LossConfig) -> Result<Vec<LossTerm>> {
    cfg.validate()?;
    let b = s.size();
    let mut terms = Vec::new();
    match cfg.strategy {
        LossStrategy::Ep | LossStrategy::Hp | LossStrategy::Ephn | LossStrategy::Hphn
        | LossStrategy::Epshn => {
            let easy = matches!(cfg.strategy, LossStrategy::Ep | LossStrategy::Ephn | LossStrategy::Epshn);
            for anchor in 0..b {
                let pos = if easy {
                    mining::mine_easy_positive(s, labels, anchor)
                } else {
                    mining::mine_hard_positive(s, labels, anchor)
                };
                let Some(p) = pos else { continue };
                let negatives = match cfg.strategy {
                    LossStrategy::Ep | LossStrategy::Hp => different_label(labels, anchor),
                    LossStrategy::Ephn | LossStrategy::Hphn => {
                        match mining::mine_hard_negative(s, labels, anchor) {
                            Some(n) => vec![n],
                            None => continue,
                        }
                    }
                    LossStrategy::Epshn => {
                        let ps = s.get(anchor, p);
                        match mining::mine_semi_hard_negative(s, labels, anchor, ps) {
                            Some(n) => vec![n],
                            None => match cfg.shn_fallback {
                                ShnFallback::Hardest => {
                                    match mining::mine_hard_negative(s, labels, anchor) {
                                        Some(n) => vec![n],
                                        None => continue,
                                    }
                                }
                                ShnFallback::Skip => continue,
                            },
                        }
                    }
                    _ => unreachable!(),
                };
                if negatives.is_empty() {
                    continue;
                }
                terms.push(LossTerm {
                    anchor,
                    positive: p,
                    negatives,
                });
            }
        }
        LossStrategy::Npair => {
            for anchor in 0..b {
                let pos = positives_of(labels, anchor);
                if pos.is_empty() {
                    continue;
                }
                if pos.len() > 1 {
                    return Err(Error::Config(
                        "NPAIR requires group size 2 (exactly one positive per anchor)".into(),
                    ));
                }
                let negatives = different_label(labels, anchor);
                if negatives.is_empty() {
                    continue;
                }
                terms.push(LossTerm {
                    anchor,
                    positive: pos[0],
                    negatives,
                });
            }
        }
        LossStrategy::BatchAll => {
            for anchor in 0..b {
                let negatives = different_label(labels, anchor);
                if negatives.is_empty() {
                    continue;
                }
                for p in positives_of(labels, anchor) {
                    terms.push(LossTerm {
                        anchor,
                        positive: p,
                        negatives: negatives.clone(),
                    });
                }
            }
        }
        LossStrategy::TripletMargin => {
            return Err(Error::Config(
                "TRIPLET_MARGIN needs an RNG; use triplet_margin_loss".into(),
            ))
        }
    }
    if terms.is_empty() {
        return Err(Error::NoValidTriplet);
    }
    Ok(terms)
}

/// Evaluate the configured NCA-family loss on a batch. The scalar is the mean
/// over contributing terms; the gradient flows through every similarity that
/// appears in a term via d(s_ij)/d(e_i) = e_j.
pub fn compute_loss(e: &EmbeddingMatrix, labels: &[u32], cfg: &LossConfig) -> Result<LossOutput> {
    let s = cosine_similarity_matrix(e);
    let terms = loss_terms(&s, labels, cfg)?;
    accumulate_nca(e, &s, &terms, cfg.temperature)
}

fn accumulate_nca(
    e: &EmbeddingMatrix,
    s: &SimilarityMatrix,
    terms: &[LossTerm],
    temperature: f64,
) -> Result<LossOutput> {
    let (b, d) = (e.rows(), e.dim());
    let mut grad = Matrix::zeros(b, d);
    let w = 1.0 / terms.len() as f64;
    let mut total = 0.0;
    let mut anchors = std::collections::BTreeSet::new();
    for term in terms {
        let a = term.anchor;
        let s_pos = s.get(a, term.positive);
        let s_negs: Vec<f64> = term.negatives.iter().map(|&n| s.get(a, n)).collect();
        let (loss, d_pos, d_negs) = nca_term(s_pos, &s_negs, temperature)?;
        total += w * loss;
        anchors.insert(a);
        // d(s_ap)/d(e_a) = e_p and symmetrically for every pair in the term
        for k in 0..d {
            grad.data[a * d + k] += w * d_pos * e.row(term.positive)[k];
            grad.data[term.positive * d + k] += w * d_pos * e.row(a)[k];
        }
        for (&n, &dn) in term.negatives.iter().zip(&d_negs) {
            for k in 0..d {
                grad.data[a * d + k] += w * dn * e.row(n)[k];
                grad.data[n * d + k] += w * dn * e.row(a)[k];
            }
        }
    }
    Ok(LossOutput {
        loss: total,
        grad,
        num_anchors: anchors.len(),
    })
}

/// Margin triplet baseline: random positive, semi-hard negative (with the
/// configured fallback), hinge on Euclidean distances derived from
/// similarities.
pub fn triplet_margin_loss(
    e: &EmbeddingMatrix,
    labels: &[u32],
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossOutput> {
    cfg.validate()?;
    let s = cosine_similarity_matrix(e);
    let terms = triplet_margin_terms(&s, labels, cfg, rng)?;
    triplet_margin_from_terms(e, &s, &terms, cfg.margin)
}

/// Selection step of the margin baseline, split out so gradient checks can
/// pin the random positives across perturbed evaluations.
pub fn triplet_margin_terms(
    s: &SimilarityMatrix,
    labels: &[u32],
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossTerm>> {
    let b = s.size();
    let mut terms = Vec::new();
    for anchor in 0..b {
        let pos = positives_of(labels, anchor);
        if pos.is_empty() {
            continue;
        }
        let p = pos[rng.random_range(0..pos.len())];
        let ps = s.get(anchor, p);
        let neg = match mining::mine_semi_hard_negative(s, labels, anchor, ps) {
            Some(n) => Some(n),
            None => match cfg.shn_fallback {
                ShnFallback::Hardest => mining::mine_hard_negative(s, labels, anchor),
                ShnFallback::Skip => None,
            },
        };
        let Some(n) = neg else { continue };
        terms.push(LossTerm {
            anchor,
            positive: p,
            negatives: vec![n],
        });
    }
    if terms.is_empty() {
        return Err(Error::NoValidTriplet);
    }
    Ok(terms)
}

pub fn triplet_margin_from_terms(
    e: &EmbeddingMatrix,
    s: &SimilarityMatrix,
    terms: &[LossTerm],
    margin: f64,
) -> Result<LossOutput> {
    let (b, d) = (e.rows(), e.dim());
    let mut grad = Matrix::zeros(b, d);
    let w = 1.0 / terms.len() as f64;
    let mut total = 0.0;
    let mut anchors = std::collections::BTreeSet::new();
    for term in terms {
        let a = term.anchor;
        let p = term.positive;
        let n = term.negatives[0];
        let d_ap = (2.0 - 2.0 * s.get(a, p)).max(0.0).sqrt();
        let d_an = (2.0 - 2.0 * s.get(a, n)).max(0.0).sqrt();
        let value = d_ap - d_an + margin;
        anchors.insert(a);
        if value <= 0.0 {
            continue;
        }
        total += w * value;
        // d(d)/d(s) = -1/d, so d(term)/d(s_ap) = -1/d_ap and
        // d(term)/d(s_an) = +1/d_an; subgradient 0 where a distance vanishes
        let g_ap = if d_ap > 1e-12 { -1.0 / d_ap } else { 0.0 };
        let g_an = if d_an > 1e-12 { 1.0 / d_an } else { 0.0 };
        for k in 0..d {
            grad.data[a * d + k] += w * (g_ap * e.row(p)[k] + g_an * e.row(n)[k]);
            grad.data[p * d + k] += w * g_ap * e.row(a)[k];
            grad.data[n * d + k] += w * g_an * e.row(a)[k];
        }
    }
    Ok(LossOutput {
        loss: total,
        grad,
        num_anchors: anchors.len(),
    })
}
