use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euclidean distances from a descriptor to its nearest and second-nearest
/// neighbor in the opposite set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborDistances {
    pub first: f64,
    pub second: Option<f64>,
}

impl NeighborDistances {
    /// Ratio `d1 / d2`, or `None` when there is no second neighbor.
    pub fn ratio(&self) -> Option<f64> {
        let second = self.second?;
        if second > 0.0 {
            Some(self.first / second)
        } else {
            // Two neighbors at distance zero: maximally ambiguous.
            Some(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub index_a: usize,
    pub index_b: usize,
    /// Cosine similarity (dot product of the unit descriptors).
    pub similarity: f64,
    /// Neighbor distances of `a` among the descriptors of `b`.
    pub neighbors_a: NeighborDistances,
    /// Neighbor distances of `b` among the descriptors of `a`.
    pub neighbors_b: NeighborDistances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Ratio,
    Similarity,
}

#[inline]
fn unit_distance(similarity: f64) -> f64 {
    (2.0 - 2.0 * similarity).max(0.0).sqrt()
}

/// Best and second-best similarity, first index wins ties.
#[derive(Clone, Copy)]
struct Best {
    index: usize,
    first: f64,
    second: Option<f64>,
}

impl Best {
    fn push(slot: &mut Option<Best>, index: usize, sim: f64) {
        match slot {
            None => {
                *slot = Some(Best {
                    index,
                    first: sim,
                    second: None,
                })
            }
            Some(best) => {
                if sim > best.first {
                    best.second = Some(best.first);
                    best.first = sim;
                    best.index = index;
                } else if best.second.is_none_or(|s| sim > s) {
                    best.second = Some(sim);
                }
            }
        }
    }

    fn distances(&self) -> NeighborDistances {
        NeighborDistances {
            first: unit_distance(self.first),
            second: self.second.map(unit_distance),
        }
    }
}

/// Mutual nearest neighbors between two sets of L2-normalized descriptors.
pub fn mutual_match<D: AsRef<[f64]>>(desc_a: &[D], desc_b: &[D]) -> Result<Vec<MatchCandidate>> {
    let dim = desc_a.first().or(desc_b.first()).map(|d| d.as_ref().len()).unwrap_or(0);
    for d in desc_a.iter().chain(desc_b) {
        if d.as_ref().len() != dim {
            return Err(Error::DimensionMismatch(dim, d.as_ref().len()));
        }
    }

    let mut best_for_a: Vec<Option<Best>> = vec![None; desc_a.len()];
    let mut best_for_b: Vec<Option<Best>> = vec![None; desc_b.len()];
    for (i, a) in desc_a.iter().enumerate() {
        for (j, b) in desc_b.iter().enumerate() {
            let sim: f64 = a.as_ref().iter().zip(b.as_ref()).map(|(x, y)| x * y).sum();
            Best::push(&mut best_for_a[i], j, sim);
            Best::push(&mut best_for_b[j], i, sim);
        }
    }

    let mut out = Vec::new();
    for (i, slot) in best_for_a.iter().enumerate() {
        let Some(ba) = slot else { continue };
        let Some(bb) = best_for_b[ba.index] else { continue };
        if bb.index == i {
            out.push(MatchCandidate {
                index_a: i,
                index_b: ba.index,
                similarity: ba.first,
                neighbors_a: ba.distances(),
                neighbors_b: bb.distances(),
            });
        }
    }
    Ok(out)
}

/// Keeps candidates passing a symmetric ratio test or a similarity floor.
///
/// In ratio mode a direction without a second neighbor passes.
pub fn filter_matches(candidates: &[MatchCandidate], mode: FilterMode, threshold: f64) -> Result<Vec<MatchCandidate>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "filter threshold {threshold} outside (0, 1]"
        )));
    }
    let keep = |c: &MatchCandidate| match mode {
        FilterMode::Similarity => c.similarity >= threshold,
        FilterMode::Ratio => [c.neighbors_a, c.neighbors_b]
            .iter()
            .all(|n| n.ratio().is_none_or(|r| r < threshold)),
    };
    Ok(candidates.iter().copied().filter(keep).collect())
}
