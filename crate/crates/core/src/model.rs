//! Shared domain types.
//!
//! Everything here is an immutable value object. Constructors enforce the
//! invariants, so any `SurveyResponse`, `CountryInfo`, `DelayModel` or
//! `Baseline` that exists is valid.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

/// ISO 3166-1 alpha-2 codes accepted as countries (plus `XK`, which case
/// data publishers use for Kosovo).
const ISO_ALPHA2: &str = "\
AD AE AF AG AI AL AM AO AQ AR AS AT AU AW AX AZ BA BB BD BE BF BG BH BI BJ BL \
BM BN BO BQ BR BS BT BV BW BY BZ CA CC CD CF CG CH CI CK CL CM CN CO CR CU CV \
CW CX CY CZ DE DJ DK DM DO DZ EC EE EG EH ER ES ET FI FJ FK FM FO FR GA GB GD \
GE GF GG GH GI GL GM GN GP GQ GR GS GT GU GW GY HK HM HN HR HT HU ID IE IL IM \
IN IO IQ IR IS IT JE JM JO JP KE KG KH KI KM KN KP KR KW KY KZ LA LB LC LI LK \
LR LS LT LU LV LY MA MC MD ME MF MG MH MK ML MM MN MO MP MQ MR MS MT MU MV MW \
MX MY MZ NA NC NE NF NG NI NL NO NP NR NU NZ OM PA PE PF PG PH PK PL PM PN PR \
PS PT PW PY QA RE RO RS RU RW SA SB SC SD SE SG SH SI SJ SK SL SM SN SO SR SS \
ST SV SX SY SZ TC TD TF TG TH TJ TK TL TM TN TO TR TT TV TW TZ UA UG UM US UY \
UZ VA VC VE VG VI VN VU WF WS YE YT ZA ZM ZW XK";

/// Why a candidate survey record was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("count {count} exceeds reach {reach}")]
    CountExceedsReach { count: u32, reach: u32 },
    #[error("zero reach carries no information")]
    ZeroReach,
    #[error("{field} is negative ({value})")]
    Negative { field: &'static str, value: i64 },
    #[error("{field} is not a non-negative integer: {value:?}")]
    InvalidNumber { field: &'static str, value: String },
    #[error("unparseable date {0:?} (expected YYYY-MM-DD)")]
    InvalidDate(String),
    #[error("unknown country code {0:?}")]
    UnknownCountry(String),
    #[error("invalid region code {0:?}")]
    InvalidRegion(String),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
}

/// Invariant violations for the aggregate model types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("population must be at least 1")]
    NonPositivePopulation,
    #[error("duplicate region {0}")]
    DuplicateRegion(RegionCode),
    #[error("region {region} belongs to {found}, not {expected}")]
    ForeignRegion {
        region: RegionCode,
        expected: CountryCode,
        found: CountryCode,
    },
    #[error("regional populations sum to {regions}, more than the national {national}")]
    RegionsExceedNation { regions: u64, national: u64 },
    #[error("series dates must be strictly increasing ({0} follows a later or equal date)")]
    UnorderedSeries(NaiveDate),
    #[error("delay pmf must be non-empty with non-negative entries and positive mass")]
    InvalidPmf,
    #[error("baseline needs 1 <= deaths <= cases, got deaths={deaths}, cases={cases}")]
    InvalidBaseline { deaths: u64, cases: u64 },
}

/// Two-letter ISO 3166-1 country code, stored upper-case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn parse(s: &str) -> Result<Self, Rejection> {
        let upper = s.trim().to_ascii_uppercase();
        let bytes = upper.as_bytes();
        if bytes.len() == 2
            && bytes.iter().all(u8::is_ascii_uppercase)
            && ISO_ALPHA2.split_ascii_whitespace().any(|c| c == upper)
        {
            Ok(Self([bytes[0], bytes[1]]))
        } else {
            Err(Rejection::UnknownCountry(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII upper-case letters are ever stored.
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Opaque region code, scoped by country.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionCode(String);

impl RegionCode {
    /// Accepts any non-empty code without separators or surrounding space.
    pub fn parse(s: &str) -> Result<Self, Rejection> {
        let t = s.trim();
        if t.is_empty() || t.contains([',', '"', '\n', '\r']) {
            return Err(Rejection::InvalidRegion(s.to_string()));
        }
        Ok(Self(t.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One participant's answers: how many people they know in an area (reach)
/// and how many of those show compatible symptoms (count).
///
/// A response without a region refers to the whole country.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SurveyResponse {
    date: NaiveDate,
    country: CountryCode,
    region: Option<RegionCode>,
    reach: u32,
    count: u32,
}

impl SurveyResponse {
    pub fn new(
        date: NaiveDate,
        country: CountryCode,
        region: Option<RegionCode>,
        reach: u32,
        count: u32,
    ) -> Result<Self, Rejection> {
        if reach == 0 {
            return Err(Rejection::ZeroReach);
        }
        if count > reach {
            return Err(Rejection::CountExceedsReach { count, reach });
        }
        Ok(Self {
            date,
            country,
            region,
            reach,
            count,
        })
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn region(&self) -> Option<&RegionCode> {
        self.region.as_ref()
    }

    pub fn is_country_wide(&self) -> bool {
        self.region.is_none()
    }

    pub fn reach(&self) -> u32 {
        self.reach
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Individual symptomatic ratio `count / reach`.
    pub fn ratio(&self) -> f64 {
        f64::from(self.count) / f64::from(self.reach)
    }
}

/// Untyped response record as it arrives from a file or form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawResponse {
    pub date: String,
    pub country: String,
    pub region: String,
    pub reach: String,
    pub count: String,
}

fn parse_count(field: &'static str, value: &str) -> Result<u32, Rejection> {
    let v = value.trim();
    match v.parse::<i64>() {
        Ok(n) if n < 0 => Err(Rejection::Negative { field, value: n }),
        Ok(n) => u32::try_from(n).map_err(|_| Rejection::InvalidNumber {
            field,
            value: v.to_string(),
        }),
        Err(_) => Err(Rejection::InvalidNumber {
            field,
            value: v.to_string(),
        }),
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, Rejection> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| Rejection::InvalidDate(s.into()))
}

/// Turns a raw record into a `SurveyResponse`, or names the violated rule.
pub fn validate_response(raw: &RawResponse) -> Result<SurveyResponse, Rejection> {
    let date = parse_date(&raw.date)?;
    let country = CountryCode::parse(&raw.country)?;
    let region = if raw.region.trim().is_empty() {
        None
    } else {
        Some(RegionCode::parse(&raw.region)?)
    };
    let reach = parse_count("reach", &raw.reach)?;
    let count = parse_count("count", &raw.count)?;
    SurveyResponse::new(date, country, region, reach, count)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionInfo {
    pub region: RegionCode,
    pub country: CountryCode,
    pub population: u64,
}

/// A country with its national population and (possibly partial) list of
/// regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryInfo {
    country: CountryCode,
    population: u64,
    regions: Vec<RegionInfo>,
}

impl CountryInfo {
    pub fn new(
        country: CountryCode,
        population: u64,
        regions: Vec<RegionInfo>,
    ) -> Result<Self, ModelError> {
        if population == 0 {
            return Err(ModelError::NonPositivePopulation);
        }
        let mut seen = BTreeSet::new();
        let mut total: u64 = 0;
        for r in &regions {
            if r.population == 0 {
                return Err(ModelError::NonPositivePopulation);
            }
            if r.country != country {
                return Err(ModelError::ForeignRegion {
                    region: r.region.clone(),
                    expected: country,
                    found: r.country,
                });
            }
            if !seen.insert(&r.region) {
                return Err(ModelError::DuplicateRegion(r.region.clone()));
            }
            total = total.saturating_add(r.population);
        }
        if total > population {
            return Err(ModelError::RegionsExceedNation {
                regions: total,
                national: population,
            });
        }
        Ok(Self {
            country,
            population,
            regions,
        })
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn regions(&self) -> &[RegionInfo] {
        &self.regions
    }

    pub fn region(&self, code: &RegionCode) -> Option<&RegionInfo> {
        self.regions.iter().find(|r| &r.region == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OfficialSeriesPoint {
    pub date: NaiveDate,
    pub new_cases: u64,
    pub new_deaths: u64,
}

/// Which estimator produced an [`EstimateResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    RegionStratified,
    CountryPooled,
    Ccfr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::RegionStratified => "region-stratified",
            Method::CountryPooled => "country-pooled",
            Method::Ccfr => "ccfr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "region-stratified" => Some(Method::RegionStratified),
            "country-pooled" => Some(Method::CountryPooled),
            "ccfr" => Some(Method::Ccfr),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dated point estimate with its confidence interval. Values are
/// fractions of the population; scaling to case counts happens at the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub date: NaiveDate,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_responses: usize,
    pub total_reach: u64,
    pub method: Method,
}

impl EstimateResult {
    /// Builds a result from a symmetric normal interval, clamping every
    /// endpoint into `[0, 1]`.
    pub fn from_normal_interval(
        date: NaiveDate,
        point: f64,
        half_width: f64,
        n_responses: usize,
        total_reach: u64,
        method: Method,
    ) -> Self {
        let point = point.clamp(0.0, 1.0);
        Self {
            date,
            point,
            ci_low: (point - half_width).clamp(0.0, 1.0),
            ci_high: (point + half_width).clamp(0.0, 1.0),
            n_responses,
            total_reach,
            method,
        }
    }
}

/// Discretised confirmation-to-death delay distribution.
///
/// `pmf[j]` is the probability that the outcome arrives `j` days after
/// confirmation; the vector always sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    mean_days: f64,
    sd_days: f64,
    pmf: Vec<f64>,
}

impl DelayModel {
    pub(crate) fn from_parts(mean_days: f64, sd_days: f64, pmf: Vec<f64>) -> Self {
        Self {
            mean_days,
            sd_days,
            pmf,
        }
    }

    /// Wraps an arbitrary mass function, renormalising it. The reported
    /// mean and sd are those of the discrete distribution itself.
    pub fn from_pmf(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidPmf);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ModelError::InvalidPmf);
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = pmf.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
        let var: f64 = pmf
            .iter()
            .enumerate()
            .map(|(j, p)| (j as f64 - mean).powi(2) * p)
            .sum();
        Ok(Self::from_parts(mean, var.sqrt(), pmf))
    }

    /// All outcomes on the day of confirmation.
    pub fn identity() -> Self {
        Self::from_parts(0.0, 0.0, vec![1.0])
    }

    pub fn mean_days(&self) -> f64 {
        self.mean_days
    }

    pub fn sd_days(&self) -> f64 {
        self.sd_days
    }

    /// Number of delay days covered by the pmf.
    pub fn max_horizon(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }
}

/// Reference cCFR taken from a population where outcomes are fully known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Baseline {
    deaths_b: u64,
    cases_b: u64,
}

impl Baseline {
    pub const DEFAULT_DEATHS: u64 = 1023;
    pub const DEFAULT_CASES: u64 = 74130;

    pub fn new(deaths_b: u64, cases_b: u64) -> Result<Self, ModelError> {
        if deaths_b == 0 || cases_b < deaths_b {
            return Err(ModelError::InvalidBaseline {
                deaths: deaths_b,
                cases: cases_b,
            });
        }
        Ok(Self { deaths_b, cases_b })
    }

    pub fn deaths(&self) -> u64 {
        self.deaths_b
    }

    pub fn cases(&self) -> u64 {
        self.cases_b
    }

    pub fn cfr(&self) -> f64 {
        self.deaths_b as f64 / self.cases_b as f64
    }
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            deaths_b: Self::DEFAULT_DEATHS,
            cases_b: Self::DEFAULT_CASES,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(date: &str, country: &str, region: &str, reach: &str, count: &str) -> RawResponse {
        RawResponse {
            date: date.into(),
            country: country.into(),
            region: region.into(),
            reach: reach.into(),
            count: count.into(),
        }
    }

    #[test]
    fn accepts_well_formed_response() {
        let r = validate_response(&raw("2020-04-15", "ES", "M", "100", "2")).unwrap();
        assert_eq!(r.reach(), 100);
        assert_eq!(r.count(), 2);
        assert_eq!(r.region().unwrap().as_str(), "M");
        assert_eq!(r.country().as_str(), "ES");
    }

    #[test]
    fn rejects_count_above_reach() {
        assert_eq!(
            validate_response(&raw("2020-04-15", "ES", "M", "10", "12")),
            Err(Rejection::CountExceedsReach {
                count: 12,
                reach: 10
            })
        );
    }

    #[test]
    fn rejects_zero_reach() {
        assert_eq!(
            validate_response(&raw("2020-04-15", "ES", "M", "0", "0")),
            Err(Rejection::ZeroReach)
        );
    }

    #[test]
    fn rejects_negative_bad_date_unknown_country() {
        assert!(matches!(
            validate_response(&raw("2020-04-15", "ES", "", "-3", "0")),
            Err(Rejection::Negative { field: "reach", .. })
        ));
        assert!(matches!(
            validate_response(&raw("15/04/2020", "ES", "", "3", "0")),
            Err(Rejection::InvalidDate(_))
        ));
        assert!(matches!(
            validate_response(&raw("2020-04-15", "QQ", "", "3", "0")),
            Err(Rejection::UnknownCountry(_))
        ));
        assert!(matches!(
            validate_response(&raw("2020-04-15", "ES", "", "3.5", "0")),
            Err(Rejection::InvalidNumber { field: "reach", .. })
        ));
    }

    #[test]
    fn country_list_is_complete() {
        let codes: BTreeSet<&str> = ISO_ALPHA2.split_ascii_whitespace().collect();
        // 249 assigned codes plus XK.
        assert_eq!(codes.len(), 250);
        assert_eq!(ISO_ALPHA2.split_ascii_whitespace().count(), 250);
        assert_eq!(CountryCode::parse("ua").unwrap().as_str(), "UA");
    }

    #[test]
    fn country_info_checks_populations() {
        let es = CountryCode::parse("ES").unwrap();
        let region = |code: &str, pop| RegionInfo {
            region: RegionCode::parse(code).unwrap(),
            country: es,
            population: pop,
        };
        assert!(CountryInfo::new(es, 100, vec![region("A", 40), region("B", 60)]).is_ok());
        assert_eq!(
            CountryInfo::new(es, 100, vec![region("A", 40), region("A", 10)]),
            Err(ModelError::DuplicateRegion(RegionCode::parse("A").unwrap()))
        );
        assert!(matches!(
            CountryInfo::new(es, 100, vec![region("A", 80), region("B", 60)]),
            Err(ModelError::RegionsExceedNation { .. })
        ));
        assert_eq!(
            CountryInfo::new(es, 0, vec![]),
            Err(ModelError::NonPositivePopulation)
        );
    }

    #[test]
    fn baseline_default_ratio() {
        let b = Baseline::default();
        assert_eq!(b.cfr(), 1023.0 / 74130.0);
        assert!((b.cfr() - 0.0138).abs() < 1e-4);
        assert!(Baseline::new(0, 10).is_err());
        assert!(Baseline::new(11, 10).is_err());
    }

    #[test]
    fn normal_interval_is_clamped() {
        let d = NaiveDate::from_ymd_opt(2020, 4, 1).unwrap();
        let e = EstimateResult::from_normal_interval(d, 0.01, 0.05, 3, 30, Method::CountryPooled);
        assert_eq!(e.ci_low, 0.0);
        assert!((e.ci_high - 0.06).abs() < 1e-15);
        let e = EstimateResult::from_normal_interval(d, 0.99, 0.05, 3, 30, Method::CountryPooled);
        assert_eq!(e.ci_high, 1.0);
    }

    #[test]
    fn pmf_wrapper_normalises() {
        let d = DelayModel::from_pmf(vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.pmf(), &[0.25, 0.25, 0.5]);
        assert!((d.mean_days() - 1.25).abs() < 1e-12);
        assert!(DelayModel::from_pmf(vec![]).is_err());
        assert!(DelayModel::from_pmf(vec![0.0, 0.0]).is_err());
        assert!(DelayModel::from_pmf(vec![1.0, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn constructed_responses_satisfy_invariants(
            reach in -5i64..500,
            count in -5i64..500,
        ) {
            let r = validate_response(&raw("2020-05-01", "BR", "SP", &reach.to_string(), &count.to_string()));
            match r {
                Ok(resp) => {
                    prop_assert!(resp.reach() >= 1);
                    prop_assert!(resp.count() <= resp.reach());
                }
                Err(_) => prop_assert!(reach <= 0 || count < 0 || count > reach),
            }
        }
    }
}
