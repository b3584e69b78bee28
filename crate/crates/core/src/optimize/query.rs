use crate::error::{Error, Result};
use crate::Point2;

/// One query-to-3D-point hypothesis: `(similarity, flow)` per database
/// keypoint observing that point.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHypothesis {
    pub id: u64,
    pub observations: Vec<(f64, Point2)>,
}

/// Closed-form refinement of a query keypoint against each hypothesis:
/// the similarity-weighted mean flow, added to the initial location.
pub fn refine_query(query: Point2, hypotheses: &[QueryHypothesis]) -> Result<Vec<(Point2, u64)>> {
    hypotheses
        .iter()
        .map(|h| {
            if h.observations.is_empty() {
                return Err(Error::InvalidInput(format!("hypothesis {} has no observations", h.id)));
            }
            let mut num = Point2::zeros();
            let mut den = 0.0;
            for &(s, d) in &h.observations {
                if !(s > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "similarity {s} in hypothesis {} must be positive",
                        h.id
                    )));
                }
                num += s * d;
                den += s;
            }
            Ok((query + num / den, h.id))
        })
        .collect()
}
