//! Incidence estimators over indirect-reporting survey responses.
//!
//! * Region-stratified: per-region ratio of sums, combined with population
//!   weights, with a post-stratified variance and normal interval.
//! * Country-pooled: one ratio of sums over all responses with a binomial
//!   normal interval on the total reach.
//!
//! Both come with the rolling aggregation used to produce daily series.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::model::{CountryInfo, EstimateResult, Method, RegionCode, SurveyResponse};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;
/// Minimum responses per region-mode window.
pub const DEFAULT_REGION_MIN_RESPONSES: usize = 300;
/// Minimum responses per country-mode block.
pub const DEFAULT_COUNTRY_MIN_RESPONSES: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("no responses to estimate from")]
    Empty,
    #[error("responses mix regions {0} and {1}")]
    MixedRegions(String, String),
    #[error("country-wide response in a region-stratified batch")]
    CountryWideResponse,
    #[error("region {0} is not in the region table")]
    UnknownRegion(RegionCode),
    #[error("no region has the two responses needed for a variance")]
    NoQualifyingRegion,
}

/// Per-region summary of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAggregate {
    /// `None` for country-wide responses.
    pub region: Option<RegionCode>,
    pub n: usize,
    pub reach_sum: u64,
    pub count_sum: u64,
    /// `count_sum / reach_sum`.
    pub p_hat: f64,
    /// Sample variance of the individual ratios around `p_hat`; zero when
    /// `n == 1`.
    pub s_sq: f64,
}

/// A stratum together with its (renormalised) population weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStratum {
    pub aggregate: RegionAggregate,
    pub population: u64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedEstimate {
    pub result: EstimateResult,
    pub variance: f64,
    pub strata: Vec<WeightedStratum>,
}

/// Ratio of sums over the responses of a single region (or of a single
/// country-wide group).
pub fn region_ratio(responses: &[SurveyResponse]) -> Result<RegionAggregate, EstimateError> {
    let first = responses.first().ok_or(EstimateError::Empty)?;
    if let Some(other) = responses.iter().find(|r| r.region() != first.region()) {
        let name = |r: &SurveyResponse| r.region().map_or("<country>".into(), |c| c.to_string());
        return Err(EstimateError::MixedRegions(name(first), name(other)));
    }
    let reach_sum: u64 = responses.iter().map(|r| u64::from(r.reach())).sum();
    let count_sum: u64 = responses.iter().map(|r| u64::from(r.count())).sum();
    let p_hat = count_sum as f64 / reach_sum as f64;
    let n = responses.len();
    let s_sq = if n >= 2 {
        responses
            .iter()
            .map(|r| (r.ratio() - p_hat).powi(2))
            .sum::<f64>()
            / (n - 1) as f64
    } else {
        0.0
    };
    Ok(RegionAggregate {
        region: first.region().cloned(),
        n,
        reach_sum,
        count_sum,
        p_hat,
        s_sq,
    })
}

fn latest_date(responses: &[SurveyResponse]) -> NaiveDate {
    responses
        .iter()
        .map(SurveyResponse::date)
        .max()
        .expect("non-empty")
}

/// Post-stratified estimate over regional responses.
///
/// Weights are `N_i / sum(N_k)` over the regions present in the batch, so
/// they always sum to one. The variance is
///
/// ```text
/// V = (1 - f)/n * sum(w_i S_i^2) + (1 - f)/n^2 * sum((1 - w_i) S_i^2)
/// ```
///
/// with `n` the number of responses and `f = n / N` against the national
/// population. Singleton regions enter the point estimate but contribute
/// no variance, so `V` is understated when many regions have one response.
pub fn stratified_estimate(
    responses: &[SurveyResponse],
    country: &CountryInfo,
    z: f64,
) -> Result<StratifiedEstimate, EstimateError> {
    if responses.is_empty() {
        return Err(EstimateError::Empty);
    }
    let mut groups: BTreeMap<&RegionCode, Vec<SurveyResponse>> = BTreeMap::new();
    for r in responses {
        let code = r.region().ok_or(EstimateError::CountryWideResponse)?;
        groups.entry(code).or_default().push(r.clone());
    }
    let mut strata = Vec::with_capacity(groups.len());
    for (code, group) in &groups {
        let info = country
            .region(code)
            .ok_or_else(|| EstimateError::UnknownRegion((*code).clone()))?;
        strata.push(WeightedStratum {
            aggregate: region_ratio(group)?,
            population: info.population,
            omega: 0.0,
        });
    }
    if strata.iter().all(|s| s.aggregate.n < 2) {
        return Err(EstimateError::NoQualifyingRegion);
    }
    let represented: u64 = strata.iter().map(|s| s.population).sum();
    for s in &mut strata {
        s.omega = s.population as f64 / represented as f64;
    }

    let point: f64 = strata.iter().map(|s| s.omega * s.aggregate.p_hat).sum();
    let n = responses.len() as f64;
    let f = n / country.population() as f64;
    let weighted: f64 = strata.iter().map(|s| s.omega * s.aggregate.s_sq).sum();
    let complement: f64 = strata
        .iter()
        .map(|s| (1.0 - s.omega) * s.aggregate.s_sq)
        .sum();
    let variance = (1.0 - f) / n * weighted + (1.0 - f) / (n * n) * complement;
    let total_reach = strata.iter().map(|s| s.aggregate.reach_sum).sum();

    Ok(StratifiedEstimate {
        result: EstimateResult::from_normal_interval(
            latest_date(responses),
            point,
            z * variance.max(0.0).sqrt(),
            responses.len(),
            total_reach,
            Method::RegionStratified,
        ),
        variance,
        strata,
    })
}

/// Ratio of sums over every response, regional and country-wide alike,
/// with interval `p +- z sqrt(p (1 - p) / r)` where `r` is the total reach.
pub fn pooled_estimate(
    responses: &[SurveyResponse],
    z: f64,
) -> Result<EstimateResult, EstimateError> {
    if responses.is_empty() {
        return Err(EstimateError::Empty);
    }
    let reach: u64 = responses.iter().map(|r| u64::from(r.reach())).sum();
    let count: u64 = responses.iter().map(|r| u64::from(r.count())).sum();
    let p = count as f64 / reach as f64;
    let half = z * (p * (1.0 - p) / reach as f64).sqrt();
    Ok(EstimateResult::from_normal_interval(
        latest_date(responses),
        p,
        half,
        responses.len(),
        reach,
        Method::CountryPooled,
    ))
}

/// The responses behind one emitted estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub anchor_date: NaiveDate,
    pub min_responses: usize,
    pub responses_used: Vec<SurveyResponse>,
    /// Calendar days from the earliest response in the window to the anchor,
    /// inclusive.
    pub span_days: i64,
}

fn by_day(responses: &[SurveyResponse]) -> BTreeMap<NaiveDate, Vec<SurveyResponse>> {
    let mut days: BTreeMap<NaiveDate, Vec<SurveyResponse>> = BTreeMap::new();
    for r in responses {
        days.entry(r.date()).or_default().push(r.clone());
    }
    days
}

fn window(days: &[(&NaiveDate, &Vec<SurveyResponse>)], min_responses: usize) -> Window {
    let first = *days.first().expect("non-empty").0;
    let last = *days.last().expect("non-empty").0;
    Window {
        anchor_date: last,
        min_responses,
        responses_used: days.iter().flat_map(|(_, v)| v.iter().cloned()).collect(),
        span_days: (last - first).num_days() + 1,
    }
}

/// Backward windows: for every day with responses, whole days are added
/// going back in time until at least `min_responses` are collected. Days
/// whose full history is still short get no window. Windows may overlap.
pub fn region_windows(responses: &[SurveyResponse], min_responses: usize) -> Vec<Window> {
    let days = by_day(responses);
    let days: Vec<_> = days.iter().collect();
    let mut out = Vec::new();
    for end in 0..days.len() {
        let mut total = 0;
        for start in (0..=end).rev() {
            total += days[start].1.len();
            if total >= min_responses.max(1) {
                out.push(window(&days[start..=end], min_responses));
                break;
            }
        }
    }
    out
}

/// Forward, disjoint blocks: days are accumulated from the first
/// unassigned day until the block holds at least `min_responses`; the block
/// is dated at its last day. A trailing short block is dropped.
pub fn country_blocks(responses: &[SurveyResponse], min_responses: usize) -> Vec<Window> {
    let days = by_day(responses);
    let days: Vec<_> = days.iter().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut total = 0;
    for end in 0..days.len() {
        total += days[end].1.len();
        if total >= min_responses.max(1) {
            out.push(window(&days[start..=end], min_responses));
            start = end + 1;
            total = 0;
        }
    }
    out
}

/// Daily region-stratified series for one country.
///
/// Windows count every response of the country; country-wide responses are
/// dropped afterwards, before stratification. Days where the stratified
/// estimate is undefined (no region with two responses, say) emit nothing.
pub fn rolling_region_series(
    responses: &[SurveyResponse],
    country: &CountryInfo,
    min_responses: usize,
    z: f64,
) -> Vec<EstimateResult> {
    let own: Vec<SurveyResponse> = responses
        .iter()
        .filter(|r| r.country() == country.country())
        .cloned()
        .collect();
    region_windows(&own, min_responses)
        .into_iter()
        .filter_map(|w| {
            let regional: Vec<SurveyResponse> = w
                .responses_used
                .into_iter()
                .filter(|r| !r.is_country_wide())
                .collect();
            stratified_estimate(&regional, country, z)
                .ok()
                .map(|mut e| {
                    e.result.date = w.anchor_date;
                    e.result
                })
        })
        .collect()
}

/// Pooled series over disjoint forward blocks of at least `min_responses`.
pub fn rolling_country_series(
    responses: &[SurveyResponse],
    min_responses: usize,
    z: f64,
) -> Vec<EstimateResult> {
    country_blocks(responses, min_responses)
        .into_iter()
        .map(|w| pooled_estimate(&w.responses_used, z).expect("blocks are non-empty"))
        .collect()
}
