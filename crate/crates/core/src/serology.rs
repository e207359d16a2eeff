//! Arithmetic that turns a seroprevalence survey into reference numbers
//! (infections, IFR, symptomatic CFR) and rescales symptomatic-case
//! estimates so they can be compared with it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{CountryInfo, EstimateResult, RegionCode};

/// Share of seropositives with at least one symptom, used when deriving
/// the symptomatic CFR.
pub const SYMPTOMATIC_FRACTION_CFR: f64 = 0.6627;
/// Rounded share used to scale symptomatic estimates to total infections.
pub const SYMPTOMATIC_FRACTION_SCALING: f64 = 0.66;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SerologyError {
    #[error("sensitivity must lie in (0, 1], got {0}")]
    InvalidSensitivity(f64),
    #[error("prevalence must lie in [0, 1], got {0}")]
    InvalidPrevalence(f64),
    #[error("corrected prevalence {0} exceeds 1")]
    CorrectedAboveOne(f64),
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("no infections to divide by")]
    ZeroInfections,
    #[error("zero symptomatic cases")]
    ZeroSymptomatic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerologyInputs {
    /// Fraction of the sample testing IgG positive.
    pub raw_prevalence: f64,
    pub sensitivity: f64,
    /// Accepted for completeness; with perfect specificity there are no
    /// false positives to remove, and it does not enter the arithmetic.
    pub specificity: f64,
    pub population: u64,
    /// Cumulative deaths at the date matching the infection window.
    pub cum_deaths_at_lag: u64,
    pub symptomatic_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerologyReport {
    pub prevalence: f64,
    pub infections: f64,
    pub ifr: f64,
    pub symptomatic_cases: f64,
    pub symptomatic_cfr: f64,
}

fn check_fraction(f: f64) -> Result<f64, SerologyError> {
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(SerologyError::InvalidFraction(f))
    }
}

/// Corrects for false negatives: `raw / sensitivity`.
pub fn correct_prevalence(raw: f64, sensitivity: f64) -> Result<f64, SerologyError> {
    if !(sensitivity > 0.0 && sensitivity <= 1.0) {
        return Err(SerologyError::InvalidSensitivity(sensitivity));
    }
    if !(0.0..=1.0).contains(&raw) {
        return Err(SerologyError::InvalidPrevalence(raw));
    }
    let corrected = raw / sensitivity;
    if corrected > 1.0 {
        return Err(SerologyError::CorrectedAboveOne(corrected));
    }
    Ok(corrected)
}

pub fn prevalence_to_cases(prevalence: f64, population: u64) -> Result<f64, SerologyError> {
    if !(0.0..=1.0).contains(&prevalence) {
        return Err(SerologyError::InvalidPrevalence(prevalence));
    }
    Ok(prevalence * population as f64)
}

pub fn infer_ifr(cum_deaths: u64, total_infections: f64) -> Result<f64, SerologyError> {
    if total_infections <= 0.0 {
        return Err(SerologyError::ZeroInfections);
    }
    Ok(cum_deaths as f64 / total_infections)
}

/// Returns `(symptomatic cases, deaths / symptomatic cases)`.
pub fn infer_symptomatic_cfr(
    total_infections: f64,
    symptomatic_fraction: f64,
    cum_deaths: u64,
) -> Result<(f64, f64), SerologyError> {
    let symptomatic = total_infections * check_fraction(symptomatic_fraction)?;
    if symptomatic <= 0.0 {
        return Err(SerologyError::ZeroSymptomatic);
    }
    Ok((symptomatic, cum_deaths as f64 / symptomatic))
}

impl SerologyInputs {
    pub fn calibrate(&self) -> Result<SerologyReport, SerologyError> {
        let prevalence = correct_prevalence(self.raw_prevalence, self.sensitivity)?;
        let infections = prevalence_to_cases(prevalence, self.population)?;
        let ifr = infer_ifr(self.cum_deaths_at_lag, infections)?;
        let (symptomatic_cases, symptomatic_cfr) = infer_symptomatic_cfr(
            infections,
            self.symptomatic_fraction,
            self.cum_deaths_at_lag,
        )?;
        Ok(SerologyReport {
            prevalence,
            infections,
            ifr,
            symptomatic_cases,
            symptomatic_cfr,
        })
    }
}

/// Rescales a symptomatic-case estimate to all infections by dividing the
/// point and both bounds by `symptomatic_fraction`. The upper bound is
/// capped at 1.
pub fn scale_symptomatic_to_total(
    estimate: &EstimateResult,
    symptomatic_fraction: f64,
) -> Result<EstimateResult, SerologyError> {
    let f = check_fraction(symptomatic_fraction)?;
    Ok(EstimateResult {
        point: (estimate.point / f).min(1.0),
        ci_low: (estimate.ci_low / f).min(1.0),
        ci_high: (estimate.ci_high / f).min(1.0),
        ..*estimate
    })
}

/// One plot point: how well a region is covered by the survey against how
/// far its estimate is from the serology value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachErrorRow {
    pub region: RegionCode,
    /// Total reach divided by the region's population.
    pub relative_reach: f64,
    /// `|estimate - truth| / truth`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    MissingTruth,
    MissingPopulation,
    ZeroTruth,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReachErrorTable {
    pub rows: Vec<ReachErrorRow>,
    pub skipped: Vec<(RegionCode, SkipReason)>,
}

pub fn reach_error_table(
    per_region_estimates: &[(RegionCode, f64, u64)],
    serology_truth: &[(RegionCode, f64)],
    region_table: &CountryInfo,
) -> ReachErrorTable {
    let truth: BTreeMap<&RegionCode, f64> = serology_truth.iter().map(|(r, p)| (r, *p)).collect();
    let mut table = ReachErrorTable::default();
    for (region, estimate, reach_sum) in per_region_estimates {
        let Some(&t) = truth.get(region) else {
            table
                .skipped
                .push((region.clone(), SkipReason::MissingTruth));
            continue;
        };
        let Some(info) = region_table.region(region) else {
            table
                .skipped
                .push((region.clone(), SkipReason::MissingPopulation));
            continue;
        };
        if t <= 0.0 {
            table.skipped.push((region.clone(), SkipReason::ZeroTruth));
            continue;
        }
        table.rows.push(ReachErrorRow {
            region: region.clone(),
            relative_reach: *reach_sum as f64 / info.population as f64,
            relative_error: (estimate - t).abs() / t,
        });
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountryCode, Method, RegionInfo};
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn sensitivity_correction() {
        assert_abs_diff_eq!(
            correct_prevalence(0.05, 0.79).unwrap(),
            0.0632911,
            epsilon = 1e-6
        );
        assert_eq!(correct_prevalence(0.05, 1.0).unwrap(), 0.05);
        assert_abs_diff_eq!(
            correct_prevalence(0.10, 0.80).unwrap(),
            0.125,
            epsilon = 1e-15
        );
        assert!(matches!(
            correct_prevalence(0.9, 0.5),
            Err(SerologyError::CorrectedAboveOne(_))
        ));
        assert!(correct_prevalence(0.1, 0.0).is_err());
    }

    #[test]
    fn spain_chain() {
        let infections = prevalence_to_cases(0.05 / 0.79, 46_934_628).unwrap();
        assert!((infections - 2_970_546.0).abs() <= 1.0);
        let ifr = infer_ifr(26_744, infections).unwrap();
        assert_abs_diff_eq!(ifr, 0.009, epsilon = 1e-5);
        let (sympt, cfr) = infer_symptomatic_cfr(infections, 0.6627, 26_744).unwrap();
        assert!((sympt - 1_968_550.0).abs() <= 100.0, "{sympt}");
        assert_abs_diff_eq!(cfr, 0.01359, epsilon = 1e-4);
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(prevalence_to_cases(0.0, 1000).unwrap(), 0.0);
        assert_eq!(prevalence_to_cases(0.01, 1_000_000).unwrap(), 10_000.0);
        assert_eq!(infer_ifr(0, 1000.0).unwrap(), 0.0);
        assert_eq!(infer_ifr(10, 1000.0).unwrap(), 0.01);
        assert_eq!(infer_symptomatic_cfr(1000.0, 1.0, 5).unwrap().0, 1000.0);
        assert_eq!(
            infer_symptomatic_cfr(1000.0, 0.5, 10).unwrap(),
            (500.0, 0.02)
        );
        assert_eq!(
            infer_symptomatic_cfr(0.0, 0.5, 10),
            Err(SerologyError::ZeroSymptomatic)
        );
    }

    #[test]
    fn calibrate_runs_whole_chain() {
        let report = SerologyInputs {
            raw_prevalence: 0.05,
            sensitivity: 0.79,
            specificity: 1.0,
            population: 46_934_628,
            cum_deaths_at_lag: 26_744,
            symptomatic_fraction: SYMPTOMATIC_FRACTION_CFR,
        }
        .calibrate()
        .unwrap();
        assert_abs_diff_eq!(report.ifr, 0.009, epsilon = 1e-5);
        assert_abs_diff_eq!(report.symptomatic_cfr, 0.0136, epsilon = 1e-4);
    }

    fn estimate(point: f64, lo: f64, hi: f64) -> EstimateResult {
        EstimateResult {
            date: NaiveDate::from_ymd_opt(2020, 4, 20).unwrap(),
            point,
            ci_low: lo,
            ci_high: hi,
            n_responses: 300,
            total_reach: 30_000,
            method: Method::RegionStratified,
        }
    }

    #[test]
    fn scaling_to_total_infections() {
        let scaled = scale_symptomatic_to_total(&estimate(0.0409, 0.03, 0.05), 0.66).unwrap();
        assert_abs_diff_eq!(scaled.point, 0.0620, epsilon = 1e-4);
        assert_eq!(scaled.method, Method::RegionStratified);
        let same = scale_symptomatic_to_total(&estimate(0.02, 0.01, 0.03), 1.0).unwrap();
        assert_eq!(same, estimate(0.02, 0.01, 0.03));
        let doubled = scale_symptomatic_to_total(&estimate(0.01, 0.0, 0.02), 0.5).unwrap();
        assert_eq!(doubled.point, 0.02);
        let capped = scale_symptomatic_to_total(&estimate(0.4, 0.3, 0.8), 0.5).unwrap();
        assert_eq!(capped.ci_high, 1.0);
        assert!(scale_symptomatic_to_total(&estimate(0.1, 0.0, 0.2), 0.0).is_err());
    }

    #[test]
    fn reach_error_rows() {
        let es = CountryCode::parse("ES").unwrap();
        let code = |s: &str| RegionCode::parse(s).unwrap();
        let info = CountryInfo::new(
            es,
            3_000_000,
            vec![
                RegionInfo {
                    region: code("A"),
                    country: es,
                    population: 1_000_000,
                },
                RegionInfo {
                    region: code("B"),
                    country: es,
                    population: 1_000_000,
                },
            ],
        )
        .unwrap();
        let table = reach_error_table(
            &[
                (code("A"), 0.05, 10_000),
                (code("B"), 0.04, 5_000),
                (code("C"), 0.04, 5_000),
            ],
            &[(code("A"), 0.04), (code("B"), 0.04)],
            &info,
        );
        assert_eq!(table.rows.len(), 2);
        assert_abs_diff_eq!(table.rows[0].relative_error, 0.25, epsilon = 1e-12);
        assert_eq!(table.rows[0].relative_reach, 0.01);
        assert_eq!(table.rows[1].relative_error, 0.0);
        assert_eq!(table.skipped, vec![(code("C"), SkipReason::MissingTruth)]);
    }

    proptest! {
        #[test]
        fn composition_matches_closed_form(
            p in 0.001f64..0.5,
            s in 0.5f64..=1.0,
            n in 1_000u64..100_000_000,
            d in 0u64..100_000,
        ) {
            let ifr = infer_ifr(d, prevalence_to_cases(correct_prevalence(p, s).unwrap(), n).unwrap()).unwrap();
            let closed = d as f64 * s / (p * n as f64);
            prop_assert!((ifr - closed).abs() <= 1e-12 * closed.max(1e-300) + 1e-18);
        }

        #[test]
        fn correction_is_linear(p in 0.0f64..0.4, k in 0.0f64..1.0, s in 0.5f64..=1.0) {
            let a = correct_prevalence(p * k, s).unwrap();
            let b = correct_prevalence(p, s).unwrap();
            prop_assert!((a - k * b).abs() < 1e-15);
            let half = correct_prevalence(p * 0.5, s).unwrap();
            prop_assert!((half * s - p * 0.5).abs() < 1e-15);
        }

        #[test]
        fn scaling_multiplies_width(lo in 0.0f64..0.2, w in 0.0f64..0.1, f in 0.3f64..=1.0) {
            let e = estimate(lo + w / 2.0, lo, lo + w);
            let s = scale_symptomatic_to_total(&e, f).unwrap();
            prop_assert!(s.ci_low <= s.point && s.point <= s.ci_high);
            prop_assert!(((s.ci_high - s.ci_low) - w / f).abs() < 1e-12);
        }
    }
}
