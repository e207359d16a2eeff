//! Synthetic epidemics and survey respondents with known ground truth.
//!
//! Used as the oracle for the estimators: interval coverage, the effect of
//! geographically biased sampling, and contact overlap between respondents.
//! Every draw comes from a ChaCha stream seeded from the world's seed, so a
//! seed fully determines the output. Trial `i` of an experiment uses a
//! sub-seed derived from `(seed, i)` and does not depend on other trials.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, LogNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::model::{CountryCode, CountryInfo, ModelError, RegionCode, RegionInfo, SurveyResponse};
use crate::survey::{pooled_estimate, stratified_estimate, Z_95};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("scenario: {0}")]
    Model(#[from] ModelError),
    #[error("experiments need at least {min} trials, got {got}")]
    TooFewTrials { min: usize, got: usize },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// A country with a fixed true prevalence per region.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub country: CountryInfo,
    pub true_prevalence: BTreeMap<RegionCode, f64>,
    pub rng_seed: u64,
}

impl SyntheticWorld {
    pub fn new(
        country: CountryInfo,
        true_prevalence: BTreeMap<RegionCode, f64>,
        rng_seed: u64,
    ) -> Result<Self, ScenarioError> {
        if true_prevalence.is_empty() {
            return Err(invalid("world needs at least one region"));
        }
        for (code, p) in &true_prevalence {
            if country.region(code).is_none() {
                return Err(invalid(format!(
                    "prevalence given for unknown region {code}"
                )));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(invalid(format!("prevalence {p} of {code} outside [0, 1]")));
            }
        }
        Ok(Self {
            country,
            true_prevalence,
            rng_seed,
        })
    }

    /// Population-weighted prevalence over the simulated regions.
    pub fn truth(&self) -> f64 {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for (code, p) in &self.true_prevalence {
            let n = self.country.region(code).expect("validated").population as f64;
            weighted += n * p;
            total += n;
        }
        weighted / total
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }
}

/// How respondents are drawn and what they see.
#[derive(Debug, Clone, PartialEq)]
pub struct RespondentModel {
    /// Median of the log-normal reach distribution.
    pub reach_median: f64,
    /// Log-scale standard deviation of reach.
    pub reach_sigma: f64,
    /// Relative probability that a respondent comes from each region.
    pub region_bias: BTreeMap<RegionCode, f64>,
    /// Probability that any one contact is drawn from the region's shared
    /// contact pool rather than being a fresh individual.
    pub overlap_factor: f64,
    /// Size of each region's shared contact pool.
    pub pool_size: u32,
}

impl RespondentModel {
    pub const DEFAULT_REACH_MEDIAN: f64 = 100.0;
    pub const DEFAULT_REACH_SIGMA: f64 = 0.5;
    pub const DEFAULT_POOL_SIZE: u32 = 1000;

    /// Sampling proportional to regional population, independent contacts.
    pub fn unbiased(world: &SyntheticWorld) -> Self {
        let region_bias = world
            .true_prevalence
            .keys()
            .map(|code| {
                let pop = world.country.region(code).expect("validated").population;
                (code.clone(), pop as f64)
            })
            .collect();
        Self {
            reach_median: Self::DEFAULT_REACH_MEDIAN,
            reach_sigma: Self::DEFAULT_REACH_SIGMA,
            region_bias,
            overlap_factor: 0.0,
            pool_size: Self::DEFAULT_POOL_SIZE,
        }
    }

    /// Same model with the weight of `region` multiplied by `factor`.
    pub fn biased_toward(&self, region: &RegionCode, factor: f64) -> Self {
        let mut out = self.clone();
        if let Some(w) = out.region_bias.get_mut(region) {
            *w *= factor;
        }
        out
    }

    fn validate(&self, world: &SyntheticWorld) -> Result<(), ScenarioError> {
        if !(self.reach_median >= 1.0 && self.reach_median.is_finite()) {
            return Err(invalid("reach median must be at least 1"));
        }
        if !(self.reach_sigma >= 0.0 && self.reach_sigma.is_finite()) {
            return Err(invalid("reach sigma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.overlap_factor) {
            return Err(invalid("overlap factor must lie in [0, 1)"));
        }
        if self.overlap_factor > 0.0 && self.pool_size == 0 {
            return Err(invalid("overlap needs a non-empty contact pool"));
        }
        if self
            .region_bias
            .values()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(invalid("bias weights must be non-negative"));
        }
        if self.region_bias.values().all(|w| *w == 0.0) {
            return Err(invalid("bias weights are all zero"));
        }
        for code in self.region_bias.keys() {
            if !world.true_prevalence.contains_key(code) {
                return Err(invalid(format!(
                    "bias weight for unsimulated region {code}"
                )));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for trial `index` of an experiment run under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

fn draw_responses<R: Rng>(
    rng: &mut R,
    world: &SyntheticWorld,
    model: &RespondentModel,
    n: usize,
    date: NaiveDate,
) -> Vec<SurveyResponse> {
    let regions: Vec<(&RegionCode, f64, f64)> = world
        .true_prevalence
        .iter()
        .map(|(code, p)| {
            (
                code,
                *p,
                model.region_bias.get(code).copied().unwrap_or(0.0),
            )
        })
        .collect();
    let picker =
        WeightedIndex::new(regions.iter().map(|r| r.2)).expect("weights validated non-zero");
    let reach_dist =
        LogNormal::new(model.reach_median.ln(), model.reach_sigma).expect("validated sigma");

    // One shared pool of contacts per region; true = symptomatic.
    let pools: Vec<Vec<bool>> = if model.overlap_factor > 0.0 {
        regions
            .iter()
            .map(|(_, p, _)| (0..model.pool_size).map(|_| rng.random_bool(*p)).collect())
            .collect()
    } else {
        Vec::new()
    };

    (0..n)
        .map(|_| {
            let k = picker.sample(rng);
            let (code, p, _) = regions[k];
            let reach = reach_dist.sample(rng).round().clamp(1.0, u32::MAX as f64) as u32;
            let count = if pools.is_empty() {
                binomial(rng, u64::from(reach), p)
            } else {
                let pool = &pools[k];
                let shared = binomial(rng, u64::from(reach), model.overlap_factor)
                    .min(pool.len() as u64) as usize;
                let from_pool = rand::seq::index::sample(rng, pool.len(), shared)
                    .iter()
                    .filter(|&i| pool[i])
                    .count() as u64;
                from_pool + binomial(rng, u64::from(reach) - shared as u64, p)
            };
            SurveyResponse::new(
                date,
                world.country.country(),
                Some(code.clone()),
                reach,
                count as u32,
            )
            .expect("count <= reach by construction")
        })
        .collect()
}

/// `n` synthetic responses dated `date`, fully determined by the world seed.
pub fn simulate_responses(
    world: &SyntheticWorld,
    model: &RespondentModel,
    n: usize,
    date: NaiveDate,
) -> Result<Vec<SurveyResponse>, ScenarioError> {
    model.validate(world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(world.rng_seed);
    Ok(draw_responses(&mut rng, world, model, n, date))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Stratified,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub trials: usize,
    pub covered: usize,
    /// Trials where the estimator produced no interval at all.
    pub undefined: usize,
    pub coverage: f64,
    pub truth: f64,
}

const MIN_TRIALS: usize = 100;
const SIM_DATE: (i32, u32, u32) = (2020, 4, 15);

fn sim_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(SIM_DATE.0, SIM_DATE.1, SIM_DATE.2).expect("valid date")
}

fn estimate(
    kind: EstimatorKind,
    responses: &[SurveyResponse],
    country: &CountryInfo,
) -> Option<crate::model::EstimateResult> {
    match kind {
        EstimatorKind::Stratified => stratified_estimate(responses, country, Z_95)
            .ok()
            .map(|e| e.result),
        EstimatorKind::Pooled => pooled_estimate(responses, Z_95).ok(),
    }
}

/// Fraction of trials whose 95% interval contains the population-weighted
/// truth.
pub fn coverage_experiment(
    world: &SyntheticWorld,
    model: &RespondentModel,
    n_per_trial: usize,
    trials: usize,
    kind: EstimatorKind,
) -> Result<CoverageReport, ScenarioError> {
    if trials < MIN_TRIALS {
        return Err(ScenarioError::TooFewTrials {
            min: MIN_TRIALS,
            got: trials,
        });
    }
    model.validate(world)?;
    let truth = world.truth();
    let mut covered = 0;
    let mut undefined = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(world.rng_seed, t as u64));
        let responses = draw_responses(&mut rng, world, model, n_per_trial, sim_date());
        match estimate(kind, &responses, &world.country) {
            Some(e) if e.ci_low <= truth && truth <= e.ci_high => covered += 1,
            Some(_) => {}
            None => undefined += 1,
        }
    }
    Ok(CoverageReport {
        trials,
        covered,
        undefined,
        coverage: covered as f64 / trials as f64,
        truth,
    })
}

/// Mean absolute errors of both estimators under a biased and an unbiased
/// respondent model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    pub trials: usize,
    pub truth: f64,
    pub pooled_biased: f64,
    pub pooled_unbiased: f64,
    pub stratified_biased: f64,
    pub stratified_unbiased: f64,
}

fn mean_abs_error(
    world: &SyntheticWorld,
    model: &RespondentModel,
    n: usize,
    trials: usize,
    stream: u64,
) -> (f64, f64) {
    let truth = world.truth();
    let (mut pooled, mut strat, mut strat_n) = (0.0, 0.0, 0usize);
    for t in 0..trials {
        let seed = derive_seed(derive_seed(world.rng_seed, stream), t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let responses = draw_responses(&mut rng, world, model, n, sim_date());
        let p = estimate(EstimatorKind::Pooled, &responses, &world.country)
            .expect("pooled is defined for n >= 1");
        pooled += (p.point - truth).abs();
        if let Some(s) = estimate(EstimatorKind::Stratified, &responses, &world.country) {
            strat += (s.point - truth).abs();
            strat_n += 1;
        }
    }
    let strat = if strat_n == 0 {
        f64::NAN
    } else {
        strat / strat_n as f64
    };
    (pooled / trials as f64, strat)
}

pub fn bias_experiment(
    world: &SyntheticWorld,
    biased_model: &RespondentModel,
    unbiased_model: &RespondentModel,
    n: usize,
    trials: usize,
) -> Result<BiasReport, ScenarioError> {
    if trials < MIN_TRIALS {
        return Err(ScenarioError::TooFewTrials {
            min: MIN_TRIALS,
            got: trials,
        });
    }
    if n == 0 {
        return Err(invalid("need at least one response per trial"));
    }
    biased_model.validate(world)?;
    unbiased_model.validate(world)?;
    let (pooled_biased, stratified_biased) = mean_abs_error(world, biased_model, n, trials, 1);
    let (pooled_unbiased, stratified_unbiased) =
        mean_abs_error(world, unbiased_model, n, trials, 2);
    Ok(BiasReport {
        trials,
        truth: world.truth(),
        pooled_biased,
        pooled_unbiased,
        stratified_biased,
        stratified_unbiased,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    country: String,
    population: Option<u64>,
    responses: Option<usize>,
    date: Option<String>,
    #[serde(default)]
    reach: ReachSection,
    #[serde(default)]
    overlap: OverlapSection,
    region: Vec<RegionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReachSection {
    median: f64,
    sigma: f64,
}

impl Default for ReachSection {
    fn default() -> Self {
        Self {
            median: RespondentModel::DEFAULT_REACH_MEDIAN,
            sigma: RespondentModel::DEFAULT_REACH_SIGMA,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OverlapSection {
    factor: f64,
    pool_size: u32,
}

impl Default for OverlapSection {
    fn default() -> Self {
        Self {
            factor: 0.0,
            pool_size: RespondentModel::DEFAULT_POOL_SIZE,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSection {
    code: String,
    population: u64,
    prevalence: f64,
    bias: Option<f64>,
}

/// A parsed scenario file.
///
/// ```toml
/// seed = 42
/// country = "ES"
/// population = 2000000   # optional, defaults to the sum of regions
/// responses = 300        # optional
/// date = "2020-04-15"    # optional
///
/// [reach]                # optional
/// median = 100.0
/// sigma = 0.5
///
/// [overlap]              # optional
/// factor = 0.0
/// pool_size = 1000
///
/// [[region]]
/// code = "MD"
/// population = 1000000
/// prevalence = 0.05
/// bias = 1.0             # optional; all or none
/// ```
///
/// Without `bias` entries respondents are drawn in proportion to regional
/// population.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: SyntheticWorld,
    pub model: RespondentModel,
    pub responses: Option<usize>,
    pub date: Option<NaiveDate>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        let country = CountryCode::parse(&file.country).map_err(|e| invalid(e.to_string()))?;
        if file.region.is_empty() {
            return Err(invalid("at least one [[region]] is required"));
        }
        let with_bias = file.region.iter().filter(|r| r.bias.is_some()).count();
        if with_bias != 0 && with_bias != file.region.len() {
            return Err(invalid("give a bias for every region or for none"));
        }
        let mut regions = Vec::new();
        let mut prevalence = BTreeMap::new();
        let mut bias = BTreeMap::new();
        for r in &file.region {
            let code = RegionCode::parse(&r.code).map_err(|e| invalid(e.to_string()))?;
            regions.push(RegionInfo {
                region: code.clone(),
                country,
                population: r.population,
            });
            prevalence.insert(code.clone(), r.prevalence);
            bias.insert(code, r.bias.unwrap_or(r.population as f64));
        }
        let national = file
            .population
            .unwrap_or_else(|| regions.iter().map(|r| r.population).sum());
        let info = CountryInfo::new(country, national, regions)?;
        let world = SyntheticWorld::new(info, prevalence, file.seed)?;
        let model = RespondentModel {
            reach_median: file.reach.median,
            reach_sigma: file.reach.sigma,
            region_bias: bias,
            overlap_factor: file.overlap.factor,
            pool_size: file.overlap.pool_size,
        };
        model.validate(&world)?;
        let date = file
            .date
            .map(|d| crate::model::parse_date(&d).map_err(|e| invalid(e.to_string())))
            .transpose()?;
        Ok(Self {
            world,
            model,
            responses: file.responses,
            date,
        })
    }
}

/// Writes `region,population,prevalence`, closing with an empty-region row
/// for the population-weighted national value.
pub fn write_truth<W: Write>(mut out: W, world: &SyntheticWorld) -> std::io::Result<()> {
    writeln!(out, "region,population,prevalence")?;
    let mut total = 0;
    for (code, p) in &world.true_prevalence {
        let pop = world.country.region(code).expect("validated").population;
        total += pop;
        writeln!(out, "{code},{pop},{p}")?;
    }
    writeln!(out, ",{total},{}", world.truth())
}
