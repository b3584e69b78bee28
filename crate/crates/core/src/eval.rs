//! Mean matching accuracy over image pairs and its normalized area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MatchGraph;
use crate::synth::{apply_homography, SyntheticScene};
use crate::Point2;

/// Cutoffs at which the normalized area under the curve is reported.
pub const AUC_CUTOFFS: [f64; 3] = [2.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmaCurve {
    pub thresholds: Vec<f64>,
    /// Mean over pairs of the fraction of matches within each threshold.
    pub accuracy: Vec<f64>,
    /// `(cutoff, area / cutoff)`.
    pub auc: Vec<(f64, f64)>,
    pub num_pairs: usize,
    /// Pairs without matches, left out of the mean.
    pub excluded_pairs: usize,
}

/// Mean accuracy at `threshold` over the non-empty pairs.
fn mean_accuracy(pairs: &[&Vec<f64>], threshold: f64) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|errors| errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64)
        .sum();
    total / pairs.len() as f64
}

/// `errors[pair]` holds the pixel errors of that pair's matches.
pub fn evaluate_mma(errors: &[Vec<f64>], thresholds: &[f64]) -> Result<MmaCurve> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidInput(
            "thresholds must be non-negative and strictly ascending".into(),
        ));
    }
    if errors.iter().flatten().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidInput("match errors must be non-negative".into()));
    }
    let pairs: Vec<&Vec<f64>> = errors.iter().filter(|e| !e.is_empty()).collect();
    let excluded_pairs = errors.len() - pairs.len();
    if pairs.is_empty() {
        return Ok(MmaCurve {
            thresholds: thresholds.to_vec(),
            accuracy: vec![0.0; thresholds.len()],
            auc: AUC_CUTOFFS.iter().map(|&c| (c, 0.0)).collect(),
            num_pairs: 0,
            excluded_pairs,
        });
    }
    let accuracy = thresholds.iter().map(|&t| mean_accuracy(&pairs, t)).collect();
    let auc = AUC_CUTOFFS
        .iter()
        .map(|&cutoff| {
            // The curve is sampled at 0, at every threshold below the cutoff,
            // and at the cutoff itself.
            let mut xs = vec![0.0];
            xs.extend(thresholds.iter().copied().filter(|&t| t > 0.0 && t < cutoff));
            xs.push(cutoff);
            let ys: Vec<f64> = xs.iter().map(|&t| mean_accuracy(&pairs, t)).collect();
            let area: f64 = xs
                .windows(2)
                .zip(ys.windows(2))
                .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
                .sum();
            (cutoff, area / cutoff)
        })
        .collect();
    Ok(MmaCurve {
        thresholds: thresholds.to_vec(),
        accuracy,
        auc,
        num_pairs: pairs.len(),
        excluded_pairs,
    })
}

/// Errors of the matches between view 0 and every other view, measured by
/// mapping the view-0 keypoint with the true homography.
pub fn scene_match_errors(scene: &SyntheticScene, graph: &MatchGraph, positions: &[Point2]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); scene.num_views().saturating_sub(1)];
    let to_view: Vec<_> = (0..scene.num_views()).map(|j| scene.homography_between(0, j)).collect();
    for e in (0..graph.num_edges()).step_by(2) {
        let edge = graph.edge(e);
        let (mut a, mut b) = (edge.from_node, edge.to_node);
        if graph.node(b).image_id == 0 {
            std::mem::swap(&mut a, &mut b);
        }
        if graph.node(a).image_id != 0 {
            continue;
        }
        let j = graph.node(b).image_id as usize;
        let err = (apply_homography(&to_view[j], positions[a]) - positions[b]).norm();
        out[j - 1].push(err);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thresholds() -> Vec<f64> {
        (1..=10).map(f64::from).collect()
    }

    #[test]
    fn counts() {
        let c = evaluate_mma(&[vec![0.5, 3.0]], &[1.0]).unwrap();
        assert_eq!(c.accuracy, vec![0.5]);
    }

    #[test]
    fn perfect_matches() {
        let c = evaluate_mma(&[vec![0.0; 5], vec![0.0; 2]], &thresholds()).unwrap();
        assert!(c.accuracy.iter().all(|&a| a == 1.0));
        assert!(c.auc.iter().all(|&(_, a)| a == 1.0));
    }

    #[test]
    fn hand_trapezoid() {
        // One pair with errors 0.5, 1.5, 2.5, 6: step curve sampled at 0..=10.
        let c = evaluate_mma(&[vec![0.5, 1.5, 2.5, 6.0]], &thresholds()).unwrap();
        // acc(0)=0, acc(1)=.25, acc(2)=.5 -> area (0+.25)/2 + (.25+.5)/2 = 0.5
        assert!((c.auc[0].1 - 0.5 / 2.0).abs() < 1e-12);
        // acc(3)=acc(4)=acc(5)=.75: + (.5+.75)/2 + .75 + .75 = 2.625
        assert!((c.auc[1].1 - 2.625 / 5.0).abs() < 1e-12);
        // acc(6..=10)=1: + (.75+1)/2 + 4 = 7.5
        assert!((c.auc[2].1 - 7.5 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pairs_excluded() {
        let c = evaluate_mma(&[vec![], vec![0.2]], &[1.0]).unwrap();
        assert_eq!((c.num_pairs, c.excluded_pairs), (1, 1));
        assert_eq!(c.accuracy, vec![1.0]);
        assert!(evaluate_mma(&[vec![1.0]], &[2.0, 1.0]).is_err());
    }
}
