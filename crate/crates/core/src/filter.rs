//! Outlier removal applied to every batch before estimation.
//!
//! Two rules, in order: responses whose reach lies above the upper Tukey
//! fence of the batch, then responses whose symptomatic ratio exceeds a
//! cap. The fence is computed once over the whole batch.

use thiserror::Error;

use crate::model::SurveyResponse;

pub const DEFAULT_RATIO_CAP: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("cannot filter an empty batch")]
    Empty,
    #[error("ratio cap must lie in (0, 1], got {0}")]
    InvalidCap(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub kept: Vec<SurveyResponse>,
    pub removed_reach: Vec<SurveyResponse>,
    pub removed_ratio: Vec<SurveyResponse>,
    pub reach_fence: f64,
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be ascending and non-empty.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `Q3 + 1.5 * (Q3 - Q1)` over the given reaches.
pub fn reach_fence(reaches: &[u32]) -> Result<f64, FilterError> {
    if reaches.is_empty() {
        return Err(FilterError::Empty);
    }
    let mut sorted: Vec<f64> = reaches.iter().map(|&r| f64::from(r)).collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(q3 + 1.5 * (q3 - q1))
}

pub fn apply_filters(
    responses: &[SurveyResponse],
    ratio_cap: f64,
) -> Result<FilterReport, FilterError> {
    if !(ratio_cap > 0.0 && ratio_cap <= 1.0) {
        return Err(FilterError::InvalidCap(ratio_cap));
    }
    let reaches: Vec<u32> = responses.iter().map(SurveyResponse::reach).collect();
    let fence = reach_fence(&reaches)?;
    let mut report = FilterReport {
        kept: Vec::new(),
        removed_reach: Vec::new(),
        removed_ratio: Vec::new(),
        reach_fence: fence,
    };
    for r in responses {
        if f64::from(r.reach()) > fence {
            report.removed_reach.push(r.clone());
        } else if r.ratio() > ratio_cap {
            report.removed_ratio.push(r.clone());
        } else {
            report.kept.push(r.clone());
        }
    }
    Ok(report)
}
