//! In-batch example selection over a similarity matrix: easy/hard positives,
//! hard/semi-hard/easy negatives. All selection runs in similarity space;
//! argmax over similarity equals argmin over distance on the unit sphere.
//! Ties break toward the lowest index.

use crate::linalg::SimilarityMatrix;

/// Which positive to pair with each anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveStrategy {
    Easy,
    Hard,
}

/// How negatives are chosen for each anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeStrategy {
    /// Loss layer consumes every different-label item; no single negative mined.
    All,
    Hard,
    SemiHard,
}

/// One anchor's mined pair. `negative` stays `None` under `All` strategies
/// and when semi-hard mining finds no feasible negative.
#[derive(Debug, Clone, Copy)]
pub struct MiningSelection {
    pub anchor: usize,
    pub positive: Option<usize>,
    pub positive_sim: f64,
    pub negative: Option<usize>,
    pub negative_sim: f64,
}

fn argext<F>(s: &SimilarityMatrix, anchor: usize, mut keep: F, max: bool) -> Option<usize>
where
    F: FnMut(usize, f64) -> bool,
{
    let row = s.row(anchor);
    let mut best: Option<(usize, f64)> = None;
    for (j, &sim) in row.iter().enumerate() {
        if j == anchor || !keep(j, sim) {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                if max {
                    sim > b
                } else {
                    sim < b
                }
            }
        };
        if better {
            best = Some((j, sim));
        }
    }
    best.map(|(j, _)| j)
}

/// Most similar same-label item.
pub fn mine_easy_positive(s: &SimilarityMatrix, labels: &[u32], anchor: usize) -> Option<usize> {
    argext(s, anchor, |j, _| labels[j] == labels[anchor], true)
}

/// Least similar same-label item.
pub fn mine_hard_positive(s: &SimilarityMatrix, labels: &[u32], anchor: usize) -> Option<usize> {
    argext(s, anchor, |j, _| labels[j] == labels[anchor], false)
}

/// Most similar different-label item.
pub fn mine_hard_negative(s: &SimilarityMatrix, labels: &[u32], anchor: usize) -> Option<usize> {
    argext(s, anchor, |j, _| labels[j] != labels[anchor], true)
}

/// Least similar different-label item.
pub fn mine_easy_negative(s: &SimilarityMatrix, labels: &[u32], anchor: usize) -> Option<usize> {
    argext(s, anchor, |j, _| labels[j] != labels[anchor], false)
}

/// Most similar different-label item that is still less similar than the
/// chosen positive. `None` when no negative lies below `positive_sim`.
pub fn mine_semi_hard_negative(
    s: &SimilarityMatrix,
    labels: &[u32],
    anchor: usize,
    positive_sim: f64,
) -> Option<usize> {
    argext(
        s,
        anchor,
        |j, sim| labels[j] != labels[anchor] && sim < positive_sim,
        true,
    )
}

/// Mine one selection per anchor that has at least one in-batch positive.
/// Anchors without positives are skipped; their items still appear as
/// negatives for other anchors.
pub fn mine_batch(
    s: &SimilarityMatrix,
    labels: &[u32],
    positive: PositiveStrategy,
    negative: NegativeStrategy,
) -> Vec<MiningSelection> {
    let b = s.size();
    let mut out = Vec::with_capacity(b);
    for anchor in 0..b {
        let pos = match positive {
            PositiveStrategy::Easy => mine_easy_positive(s, labels, anchor),
            PositiveStrategy::Hard => mine_hard_positive(s, labels, anchor),
        };
        let Some(p) = pos else { continue };
        let positive_sim = s.get(anchor, p);
        let neg = match negative {
            NegativeStrategy::All => None,
            NegativeStrategy::Hard => mine_hard_negative(s, labels, anchor),
            NegativeStrategy::SemiHard => mine_semi_hard_negative(s, labels, anchor, positive_sim),
        };
        let negative_sim = neg.map_or(f64::NAN, |n| s.get(anchor, n));
        out.push(MiningSelection {
            anchor,
            positive: Some(p),
            positive_sim,
            negative: neg,
            negative_sim,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim(rows: &[&[f64]]) -> SimilarityMatrix {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n);
            data.extend_from_slice(r);
        }
        SimilarityMatrix::from_raw(n, data)
    }

    fn random_instance(rng: &mut ChaCha8Rng, b: usize, classes: u32) -> (SimilarityMatrix, Vec<u32>) {
        let mut data = vec![0.0; b * b];
        for i in 0..b {
            data[i * b + i] = 1.0;
            for j in (i + 1)..b {
                let v = rng.random_range(-1.0..1.0);
                data[i * b + j] = v;
                data[j * b + i] = v;
            }
        }
        let labels = (0..b).map(|_| rng.random_range(0..classes)).collect();
        (SimilarityMatrix::from_raw(b, data), labels)
    }

    // Exhaustive-scan oracles, independent of the argext implementation.
    pub fn oracle(
        s: &SimilarityMatrix,
        labels: &[u32],
        anchor: usize,
        same: bool,
        max: bool,
        bound: Option<f64>,
    ) -> Option<usize> {
        let mut cands: Vec<(usize, f64)> = (0..s.size())
            .filter(|&j| j != anchor && (labels[j] == labels[anchor]) == same)
            .map(|j| (j, s.get(anchor, j)))
            .filter(|&(_, v)| bound.is_none_or(|b| v < b))
            .collect();
        cands.sort_by(|a, b| {
            let ord = a.1.partial_cmp(&b.1).unwrap();
            (if max { ord.reverse() } else { ord }).then(a.0.cmp(&b.0))
        });
        cands.first().map(|&(j, _)| j)
    }

    #[test]
    fn easy_positive_basic() {
        let s = sim(&[
            &[1.0, 0.9, 0.4, 0.7],
            &[0.9, 1.0, 0.5, 0.1],
            &[0.4, 0.5, 1.0, 0.2],
            &[0.7, 0.1, 0.2, 1.0],
        ]);
        let labels = [0, 0, 0, 1];
        assert_eq!(mine_easy_positive(&s, &labels, 0), Some(1));
        assert_eq!(mine_hard_positive(&s, &labels, 0), Some(2));
    }

    #[test]
    fn no_positive_is_absent() {
        let s = sim(&[&[1.0, 0.5], &[0.5, 1.0]]);
        assert_eq!(mine_easy_positive(&s, &[0, 1], 0), None);
        assert_eq!(mine_hard_negative(&s, &[0, 0], 0), None);
        assert_eq!(mine_easy_negative(&s, &[0, 0], 0), None);
    }

    #[test]
    fn group_of_two_ep_equals_hp() {
        let s = sim(&[
            &[1.0, 0.3, 0.8, 0.1],
            &[0.3, 1.0, 0.2, 0.9],
            &[0.8, 0.2, 1.0, 0.4],
            &[0.1, 0.9, 0.4, 1.0],
        ]);
        let labels = [0, 0, 1, 1];
        for a in 0..4 {
            assert_eq!(
                mine_easy_positive(&s, &labels, a),
                mine_hard_positive(&s, &labels, a)
            );
        }
    }

    #[test]
    fn negatives_basic() {
        let s = sim(&[
            &[1.0, 0.9, 0.8, 0.2],
            &[0.9, 1.0, 0.1, 0.3],
            &[0.8, 0.1, 1.0, 0.5],
            &[0.2, 0.3, 0.5, 1.0],
        ]);
        let labels = [0, 0, 1, 1];
        assert_eq!(mine_hard_negative(&s, &labels, 0), Some(2));
        assert_eq!(mine_easy_negative(&s, &labels, 0), Some(3));
    }

    #[test]
    fn semi_hard_below_positive() {
        let s = sim(&[
            &[1.0, 0.9, 0.95, 0.8, 0.7],
            &[0.9, 1.0, 0.0, 0.0, 0.0],
            &[0.95, 0.0, 1.0, 0.0, 0.0],
            &[0.8, 0.0, 0.0, 1.0, 0.0],
            &[0.7, 0.0, 0.0, 0.0, 1.0],
        ]);
        let labels = [0, 0, 1, 1, 1];
        assert_eq!(mine_semi_hard_negative(&s, &labels, 0, 0.9), Some(3));
    }

    #[test]
    fn semi_hard_infeasible() {
        let s = sim(&[
            &[1.0, 0.9, 0.95, 0.92],
            &[0.9, 1.0, 0.0, 0.0],
            &[0.95, 0.0, 1.0, 0.0],
            &[0.92, 0.0, 0.0, 1.0],
        ]);
        let labels = [0, 0, 1, 1];
        assert_eq!(mine_semi_hard_negative(&s, &labels, 0, 0.9), None);
    }

    #[test]
    fn miners_match_oracles_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..200 {
            let b = rng.random_range(2..=32);
            let classes = rng.random_range(1..=5);
            let (s, labels) = random_instance(&mut rng, b, classes);
            for a in 0..b {
                assert_eq!(
                    mine_easy_positive(&s, &labels, a),
                    oracle(&s, &labels, a, true, true, None)
                );
                assert_eq!(
                    mine_hard_positive(&s, &labels, a),
                    oracle(&s, &labels, a, true, false, None)
                );
                assert_eq!(
                    mine_hard_negative(&s, &labels, a),
                    oracle(&s, &labels, a, false, true, None)
                );
                assert_eq!(
                    mine_easy_negative(&s, &labels, a),
                    oracle(&s, &labels, a, false, false, None)
                );
                if let Some(p) = mine_easy_positive(&s, &labels, a) {
                    let ps = s.get(a, p);
                    assert_eq!(
                        mine_semi_hard_negative(&s, &labels, a, ps),
                        oracle(&s, &labels, a, false, true, Some(ps))
                    );
                }
            }
        }
    }

    #[test]
    fn ep_at_least_as_similar_as_hp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (s, labels) = random_instance(&mut rng, 16, 3);
            for a in 0..16 {
                if let (Some(ep), Some(hp)) = (
                    mine_easy_positive(&s, &labels, a),
                    mine_hard_positive(&s, &labels, a),
                ) {
                    assert!(s.get(a, ep) >= s.get(a, hp));
                }
            }
        }
    }

    #[test]
    fn mine_batch_skips_singletons() {
        let s = sim(&[
            &[1.0, 0.5, 0.2],
            &[0.5, 1.0, 0.8],
            &[0.2, 0.8, 1.0],
        ]);
        let labels = [0, 0, 1];
        let sel = mine_batch(&s, &labels, PositiveStrategy::Easy, NegativeStrategy::Hard);
        assert_eq!(sel.len(), 2);
        assert!(sel.iter().all(|m| m.anchor != 2));
        // singleton still serves as negative
        assert_eq!(sel[0].negative, Some(2));
    }

    #[test]
    fn mine_batch_all_leaves_negative_absent() {
        let s = sim(&[
            &[1.0, 0.5, 0.2, 0.1],
            &[0.5, 1.0, 0.8, 0.3],
            &[0.2, 0.8, 1.0, 0.6],
            &[0.1, 0.3, 0.6, 1.0],
        ]);
        let labels = [0, 0, 1, 1];
        let sel = mine_batch(&s, &labels, PositiveStrategy::Easy, NegativeStrategy::All);
        assert_eq!(sel.len(), 4);
        assert!(sel.iter().all(|m| m.negative.is_none()));
    }

    #[test]
    fn selection_invariant_under_monotone_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..50 {
            let (s, labels) = random_instance(&mut rng, 12, 3);
            let scaled = SimilarityMatrix::from_raw(
                12,
                (0..144).map(|k| {
                    let (i, j) = (k / 12, k % 12);
                    // strictly increasing map
                    (s.get(i, j) * 0.5).tanh() * 3.0 + 0.25 * s.get(i, j)
                }).collect(),
            );
            for a in 0..12 {
                assert_eq!(
                    mine_easy_positive(&s, &labels, a),
                    mine_easy_positive(&scaled, &labels, a)
                );
                assert_eq!(
                    mine_hard_negative(&s, &labels, a),
                    mine_hard_negative(&scaled, &labels, a)
                );
            }
        }
    }
}
