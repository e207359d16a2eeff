//! Delay-corrected case fatality ratio and the under-reporting estimate
//! derived from it.
//!
//! Cases confirmed recently have not had time to die yet, so deaths are
//! divided by the cases whose outcome should by now be known: daily
//! incidence convolved with the cumulative confirmation-to-death delay.
//! Comparing that corrected ratio with a baseline from a fully observed
//! outbreak gives the factor by which reported cases undercount infections.

use chrono::NaiveDate;
use thiserror::Error;

use crate::model::{Baseline, DelayModel, OfficialSeriesPoint};

pub const DEFAULT_DELAY_MEAN: f64 = 13.0;
pub const DEFAULT_DELAY_SD: f64 = 12.7;
pub const DEFAULT_DELAY_HORIZON: usize = 120;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CcfrError {
    #[error("delay mean and sd must be positive and finite (mean={mean}, sd={sd})")]
    InvalidDelay { mean: f64, sd: f64 },
    #[error("delay horizon must be at least one day")]
    ZeroHorizon,
    #[error("official series is empty")]
    EmptySeries,
    #[error("official series is not a contiguous daily grid at {0}")]
    NotDense(NaiveDate),
    #[error("cCFR is undefined or negative ({0})")]
    UndefinedCcfr(f64),
    #[error("Ln-method needs d >= 1 and c > d (d={deaths}, c={cases})")]
    OutsideLnDomain { deaths: u64, cases: f64 },
    #[error("estimated log-ratio variance is negative ({0})")]
    NegativeVariance(f64),
}

/// Log-normal CDF at `x` for log-scale location `mu` and shape `sigma`.
fn lognormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    0.5 * libm::erfc(-(x.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// Log-scale parameters `(mu, sigma)` of the log-normal with the given
/// mean and standard deviation.
pub fn lognormal_params(mean: f64, sd: f64) -> (f64, f64) {
    let m2 = mean * mean;
    let mu = (m2 / (m2 + sd * sd).sqrt()).ln();
    let sigma = (1.0 + sd * sd / m2).ln().sqrt();
    (mu, sigma)
}

/// Interval masses `F(j + 1) - F(j)` for `j` in `0..horizon`, renormalised
/// after truncation.
pub fn discretize_delay(mean: f64, sd: f64, horizon: usize) -> Result<DelayModel, CcfrError> {
    if !(mean > 0.0 && sd > 0.0 && mean.is_finite() && sd.is_finite()) {
        return Err(CcfrError::InvalidDelay { mean, sd });
    }
    if horizon == 0 {
        return Err(CcfrError::ZeroHorizon);
    }
    let (mu, sigma) = lognormal_params(mean, sd);
    let cdf: Vec<f64> = (0..=horizon)
        .map(|j| lognormal_cdf(j as f64, mu, sigma))
        .collect();
    let mut pmf: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let mass: f64 = pmf.iter().sum();
    if mass > 0.0 {
        pmf.iter_mut().for_each(|p| *p /= mass);
    } else {
        // All mass beyond the horizon; the last bin absorbs it.
        pmf.iter_mut().for_each(|p| *p = 0.0);
        pmf[horizon - 1] = 1.0;
    }
    Ok(DelayModel::from_parts(mean, sd, pmf))
}

fn check_dense(series: &[OfficialSeriesPoint]) -> Result<(), CcfrError> {
    for w in series.windows(2) {
        if w[0].date.succ_opt() != Some(w[1].date) {
            return Err(CcfrError::NotDense(w[1].date));
        }
    }
    Ok(())
}

/// Cumulative cases with a known outcome on each day:
/// `known(t) = sum over tau <= t of cases(tau) * P(delay <= t - tau)`.
pub fn known_outcome_cases(
    series: &[OfficialSeriesPoint],
    delay: &DelayModel,
) -> Result<Vec<f64>, CcfrError> {
    if series.is_empty() {
        return Err(CcfrError::EmptySeries);
    }
    check_dense(series)?;
    let mut cdf: Vec<f64> = delay
        .pmf()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    // Rounding can leave the tail a hair under one.
    *cdf.last_mut().expect("pmf is non-empty") = 1.0;
    let horizon = cdf.len();

    let cases: Vec<f64> = series.iter().map(|p| p.new_cases as f64).collect();
    let mut known = Vec::with_capacity(cases.len());
    // Cases older than the horizon are fully resolved.
    let mut settled = 0.0;
    for t in 0..cases.len() {
        if t >= horizon {
            settled += cases[t - horizon];
        }
        let recent: f64 = (t.saturating_sub(horizon - 1)..=t)
            .map(|tau| cases[tau] * cdf[t - tau])
            .sum();
        known.push(settled + recent);
    }
    Ok(known)
}

/// Corrected CFR on one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcfrState {
    pub date: NaiveDate,
    pub cum_cases: u64,
    pub cum_deaths: u64,
    pub known_outcome_cases: f64,
    pub ccfr: f64,
    /// `ccfr / baseline cfr`.
    pub ratio: f64,
    /// Standard error of the log ratio, when the Ln-method applies.
    pub sigma_hat: Option<f64>,
}

impl CcfrState {
    pub fn ratio_ci(&self, baseline: &Baseline, z: f64) -> Option<(f64, f64)> {
        ln_method_ci(self.cum_deaths, self.known_outcome_cases, baseline, z).ok()
    }
}

/// cCFR for every day with known-outcome cases and no more deaths than
/// known outcomes. Other days are skipped; an empty series yields nothing.
pub fn ccfr_series(
    series: &[OfficialSeriesPoint],
    delay: &DelayModel,
    baseline: &Baseline,
) -> Result<Vec<CcfrState>, CcfrError> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let known = known_outcome_cases(series, delay)?;
    let mut cum_cases = 0u64;
    let mut cum_deaths = 0u64;
    let mut out = Vec::new();
    for (point, &c) in series.iter().zip(&known) {
        cum_cases += point.new_cases;
        cum_deaths += point.new_deaths;
        let d = cum_deaths as f64;
        if c <= 0.0 || d > c {
            continue;
        }
        let ccfr = d / c;
        out.push(CcfrState {
            date: point.date,
            cum_cases,
            cum_deaths,
            known_outcome_cases: c,
            ccfr,
            ratio: ccfr / baseline.cfr(),
            sigma_hat: log_ratio_variance(cum_deaths, c, baseline)
                .ok()
                .map(f64::sqrt),
        });
    }
    Ok(out)
}

pub fn underreporting_ratio(ccfr: f64, baseline: &Baseline) -> Result<f64, CcfrError> {
    if !ccfr.is_finite() || ccfr < 0.0 {
        return Err(CcfrError::UndefinedCcfr(ccfr));
    }
    Ok(ccfr / baseline.cfr())
}

pub fn true_cases_estimate(reported_cum_cases: u64, ratio: f64) -> f64 {
    reported_cum_cases as f64 * ratio
}

/// `1/d - 1/c + 1/d_b - 1/c_b`, the estimated variance of the log ratio.
fn log_ratio_variance(deaths: u64, cases: f64, baseline: &Baseline) -> Result<f64, CcfrError> {
    if deaths == 0 || cases <= deaths as f64 {
        return Err(CcfrError::OutsideLnDomain { deaths, cases });
    }
    let var = 1.0 / deaths as f64 - 1.0 / cases + 1.0 / baseline.deaths() as f64
        - 1.0 / baseline.cases() as f64;
    if var < 0.0 {
        return Err(CcfrError::NegativeVariance(var));
    }
    Ok(var)
}

/// Interval for `r = (d/c) / (d_b/c_b)` built on the log scale:
/// `(r exp(-z sigma), r exp(z sigma))`.
pub fn ln_method_ci(
    deaths: u64,
    cases: f64,
    baseline: &Baseline,
    z: f64,
) -> Result<(f64, f64), CcfrError> {
    let sigma = log_ratio_variance(deaths, cases, baseline)?.sqrt();
    let r = (deaths as f64 / cases) / baseline.cfr();
    Ok((r * (-z * sigma).exp(), r * (z * sigma).exp()))
}

/// One output row: the cCFR, the under-reporting ratio with its interval,
/// and the implied true case count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcfrEstimate {
    pub date: NaiveDate,
    pub ccfr: f64,
    pub ratio: f64,
    pub ratio_ci: Option<(f64, f64)>,
    pub reported_cases: u64,
    pub true_cases: f64,
    pub true_cases_ci: Option<(f64, f64)>,
}

/// Runs the whole correction over a dense official series.
pub fn estimate_true_cases(
    series: &[OfficialSeriesPoint],
    delay: &DelayModel,
    baseline: &Baseline,
    z: f64,
) -> Result<Vec<CcfrEstimate>, CcfrError> {
    Ok(ccfr_series(series, delay, baseline)?
        .into_iter()
        .map(|s| {
            let ratio_ci = s.ratio_ci(baseline, z);
            CcfrEstimate {
                date: s.date,
                ccfr: s.ccfr,
                ratio: s.ratio,
                ratio_ci,
                reported_cases: s.cum_cases,
                true_cases: true_cases_estimate(s.cum_cases, s.ratio),
                true_cases_ci: ratio_ci.map(|(lo, hi)| {
                    (
                        true_cases_estimate(s.cum_cases, lo),
                        true_cases_estimate(s.cum_cases, hi),
                    )
                }),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::densify;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series(cases: &[u64], deaths: &[u64]) -> Vec<OfficialSeriesPoint> {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        cases
            .iter()
            .zip(deaths)
            .enumerate()
            .map(|(i, (&c, &d))| OfficialSeriesPoint {
                date: start + chrono::Days::new(i as u64),
                new_cases: c,
                new_deaths: d,
            })
            .collect()
    }

    #[test]
    fn lognormal_parameters_match_moments() {
        let (mu, sigma) = lognormal_params(13.0, 12.7);
        // Reference values from scipy.
        assert_abs_diff_eq!(mu, 2.229913186707415, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma, 0.8185794656038248, epsilon = 1e-12);
        let mean = (mu + sigma * sigma / 2.0).exp();
        assert_abs_diff_eq!(mean, 13.0, epsilon = 1e-9);
    }

    #[test]
    fn discretised_delay_matches_reference_cdf() {
        // Frozen from scipy.stats.lognorm: np.diff(cdf(0..=60)) / sum.
        let d = discretize_delay(13.0, 12.7, 60).unwrap();
        assert_eq!(d.max_horizon(), 60);
        assert_abs_diff_eq!(d.pmf().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let want = [
            0.0032606871006505478,
            0.02732173630556367,
            0.053859347616415615,
            0.06866652024980949,
            0.07369981355927491,
        ];
        for (got, want) in d.pmf().iter().zip(want) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(d.pmf()[13], 0.03293800091397318, epsilon = 1e-10);
        assert_abs_diff_eq!(d.pmf()[59], 0.0006338535202239227, epsilon = 1e-10);

        let d = discretize_delay(13.0, 12.7, 120).unwrap();
        assert_abs_diff_eq!(d.pmf()[13], 0.03259239951530586, epsilon = 1e-10);
    }

    #[test]
    fn discretised_mode_and_mean() {
        let d = discretize_delay(13.0, 12.7, 60).unwrap();
        let mode = d
            .pmf()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // exp(mu - sigma^2) = 4.76 days.
        assert_eq!(mode, 4);
        // Without the tail cut the bin midpoints recover the continuous mean.
        let wide = discretize_delay(13.0, 12.7, 5000).unwrap();
        let mid_mean: f64 = wide
            .pmf()
            .iter()
            .enumerate()
            .map(|(j, p)| (j as f64 + 0.5) * p)
            .sum();
        assert!((mid_mean - 13.0).abs() < 0.5, "{mid_mean}");
    }

    #[test]
    fn degenerate_delays() {
        assert_eq!(discretize_delay(13.0, 12.7, 1).unwrap().pmf(), &[1.0]);
        let narrow = discretize_delay(13.0, 0.001, 60).unwrap();
        assert_abs_diff_eq!(narrow.pmf()[12], 0.50001534, epsilon = 1e-6);
        assert_abs_diff_eq!(narrow.pmf()[13], 0.49998466, epsilon = 1e-6);
        assert!(matches!(
            discretize_delay(0.0, 1.0, 10),
            Err(CcfrError::InvalidDelay { .. })
        ));
        assert!(matches!(
            discretize_delay(1.0, -1.0, 10),
            Err(CcfrError::InvalidDelay { .. })
        ));
        assert_eq!(discretize_delay(1.0, 1.0, 0), Err(CcfrError::ZeroHorizon));
    }

    #[test]
    fn known_outcomes_by_hand() {
        let s = series(&[3, 0, 4, 1], &[0, 0, 0, 0]);
        let known = known_outcome_cases(&s, &DelayModel::identity()).unwrap();
        assert_eq!(known, [3.0, 3.0, 7.0, 8.0]);

        let uniform = DelayModel::from_pmf(vec![1.0; 4]).unwrap();
        let s = series(&[1, 0, 0, 0, 0, 0], &[0; 6]);
        let known = known_outcome_cases(&s, &uniform).unwrap();
        assert_eq!(known, [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);

        let s = series(&[0; 5], &[0; 5]);
        assert_eq!(known_outcome_cases(&s, &uniform).unwrap(), [0.0; 5]);
        assert_eq!(
            known_outcome_cases(&[], &uniform),
            Err(CcfrError::EmptySeries)
        );
    }

    #[test]
    fn sparse_series_rejected() {
        let mut s = series(&[1, 2, 3], &[0, 0, 0]);
        s.remove(1);
        assert!(matches!(
            known_outcome_cases(&s, &DelayModel::identity()),
            Err(CcfrError::NotDense(_))
        ));
        assert_eq!(
            known_outcome_cases(&densify(s), &DelayModel::identity()).unwrap(),
            [1.0, 1.0, 4.0]
        );
    }

    #[test]
    fn identity_delay_gives_naive_cfr() {
        let s = series(&[60, 40], &[0, 1]);
        let out = ccfr_series(&s, &DelayModel::identity(), &Baseline::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].ccfr, 0.01);
        assert_eq!(out[0].ccfr, 0.0);
    }

    #[test]
    fn delay_raises_ccfr_above_naive() {
        let cases = [10, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120];
        let deaths = [0, 0, 0, 1, 1, 2, 4, 8, 16, 32];
        let s = series(&cases, &deaths);
        let delay = discretize_delay(13.0, 12.7, 120).unwrap();
        let out = ccfr_series(&s, &delay, &Baseline::default()).unwrap();
        let last = out.last().unwrap();
        let naive = last.cum_deaths as f64 / last.cum_cases as f64;
        assert!(last.ccfr > naive, "{} vs {naive}", last.ccfr);
        assert!(last.known_outcome_cases < last.cum_cases as f64);
    }

    #[test]
    fn zero_deaths_zero_ccfr() {
        let s = series(&[5, 5, 5], &[0, 0, 0]);
        let out = ccfr_series(&s, &DelayModel::identity(), &Baseline::default()).unwrap();
        assert!(out
            .iter()
            .all(|st| st.ccfr == 0.0 && st.sigma_hat.is_none()));
        assert!(
            ccfr_series(&[], &DelayModel::identity(), &Baseline::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn ratio_examples() {
        let one_pct = Baseline::new(1, 100).unwrap();
        assert_abs_diff_eq!(
            underreporting_ratio(0.02, &one_pct).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        let b = Baseline::default();
        assert_abs_diff_eq!(
            underreporting_ratio(b.cfr(), &b).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            underreporting_ratio(0.0276, &b).unwrap(),
            2.0,
            epsilon = 1e-4
        );
        assert!(underreporting_ratio(f64::NAN, &b).is_err());
        assert_eq!(true_cases_estimate(7603, 1.0), 7603.0);
        assert_eq!(true_cases_estimate(100, 2.5), 250.0);
    }

    #[test]
    fn ln_method_examples() {
        let b = Baseline::default();
        let (lo, hi) = ln_method_ci(100, 10_000.0, &b, 1.96).unwrap();
        assert_abs_diff_eq!(lo, 0.5907387374848523, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 0.8888762089341526, epsilon = 1e-12);

        let (lo, hi) = ln_method_ci(1023, 74130.0, &b, 1.96).unwrap();
        assert_abs_diff_eq!(lo.ln(), -hi.ln(), epsilon = 1e-12);

        let (lo, hi) = ln_method_ci(100, 10_000.0, &b, 0.0).unwrap();
        assert_eq!(lo, hi);

        assert!(matches!(
            ln_method_ci(0, 10.0, &b, 1.96),
            Err(CcfrError::OutsideLnDomain { .. })
        ));
        assert!(matches!(
            ln_method_ci(10, 10.0, &b, 1.96),
            Err(CcfrError::OutsideLnDomain { .. })
        ));
    }

    fn arb_series() -> impl Strategy<Value = Vec<OfficialSeriesPoint>> {
        prop::collection::vec((0u64..500, 0u64..20), 1..80).prop_map(|v| {
            let (c, d): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            series(&c, &d)
        })
    }

    proptest! {
        #[test]
        fn known_outcomes_monotone_and_bounded(s in arb_series(), horizon in 1usize..40) {
            let delay = discretize_delay(13.0, 12.7, horizon).unwrap();
            let known = known_outcome_cases(&s, &delay).unwrap();
            let mut cum = 0.0;
            for (i, k) in known.iter().enumerate() {
                cum += s[i].new_cases as f64;
                prop_assert!(*k <= cum + 1e-9);
                if i > 0 {
                    prop_assert!(*k >= known[i - 1] - 1e-9);
                }
            }
        }

        #[test]
        fn ln_interval_contains_ratio(d in 1u64..10_000, extra in 1.0f64..1e6, z in 0.0f64..4.0) {
            let b = Baseline::default();
            let c = d as f64 + extra;
            let (lo, hi) = ln_method_ci(d, c, &b, z).unwrap();
            let r = (d as f64 / c) / b.cfr();
            prop_assert!(lo <= r * (1.0 + 1e-12) && r <= hi * (1.0 + 1e-12));
            let sigma = (1.0 / d as f64 - 1.0 / c + 1.0 / 1023.0 - 1.0 / 74130.0).sqrt();
            prop_assert!(((hi / lo).ln() - 2.0 * z * sigma).abs() < 1e-9);
        }

        #[test]
        fn ccfr_is_scale_free(s in arb_series(), k in 1u64..20) {
            let delay = discretize_delay(13.0, 12.7, 30).unwrap();
            let scaled: Vec<_> = s.iter().map(|p| OfficialSeriesPoint {
                date: p.date,
                new_cases: p.new_cases * k,
                new_deaths: p.new_deaths * k,
            }).collect();
            let a = ccfr_series(&s, &delay, &Baseline::default()).unwrap();
            let b = ccfr_series(&scaled, &delay, &Baseline::default()).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.ccfr - y.ccfr).abs() <= 1e-12 * x.ccfr.max(1.0));
                prop_assert!((x.ratio - y.ratio).abs() <= 1e-12 * x.ratio.max(1.0));
            }
        }
    }
}
