//! Output tables: estimate series, cCFR series and the date-aligned
//! comparison of both. Floats are written with six significant digits so
//! output is byte-stable.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Trim};
use thiserror::Error;

use crate::ccfr::CcfrEstimate;
use crate::model::{parse_date, EstimateResult, Method, OfficialSeriesPoint};

pub const ESTIMATE_COLUMNS: [&str; 7] = [
    "date",
    "method",
    "point",
    "ci_low",
    "ci_high",
    "n_responses",
    "total_reach",
];
pub const CCFR_COLUMNS: [&str; 8] = [
    "date",
    "ccfr",
    "ratio",
    "ratio_low",
    "ratio_high",
    "true_cases",
    "true_cases_low",
    "true_cases_high",
];
pub const COMPARE_COLUMNS: [&str; 9] = [
    "date",
    "survey",
    "survey_low",
    "survey_high",
    "ccfr",
    "ccfr_low",
    "ccfr_high",
    "official",
    "serology",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros
/// trimmed, exponent form outside `[1e-4, 1e6)`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

pub fn write_estimates<W: Write>(out: W, rows: &[EstimateResult]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_COLUMNS)?;
    for e in rows {
        w.write_record([
            e.date.to_string(),
            e.method.to_string(),
            fmt_sig6(e.point),
            fmt_sig6(e.ci_low),
            fmt_sig6(e.ci_high),
            e.n_responses.to_string(),
            e.total_reach.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ccfr<W: Write>(out: W, rows: &[CcfrEstimate]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CCFR_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            fmt_sig6(r.ccfr),
            fmt_sig6(r.ratio),
            opt(r.ratio_ci.map(|c| c.0)),
            opt(r.ratio_ci.map(|c| c.1)),
            fmt_sig6(r.true_cases),
            opt(r.true_cases_ci.map(|c| c.0)),
            opt(r.true_cases_ci.map(|c| c.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Table {
    rdr: csv::Reader<Box<dyn Read>>,
    index: BTreeMap<String, usize>,
}

impl Table {
    fn open<R: Read + 'static>(input: R) -> Result<Self, ReportError> {
        let mut rdr = ReaderBuilder::new()
            .trim(Trim::All)
            .from_reader(Box::new(input) as Box<dyn Read>);
        let index = rdr
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        Ok(Self { rdr, index })
    }

    fn require(&self, name: &'static str) -> Result<usize, ReportError> {
        self.index
            .get(name)
            .copied()
            .ok_or(ReportError::MissingColumn(name))
    }
}

fn parse_err(record: &StringRecord, message: impl Into<String>) -> ReportError {
    ReportError::Parse {
        line: record.position().map_or(0, |p| p.line()),
        message: message.into(),
    }
}

fn get_f64(record: &StringRecord, idx: usize, name: &str) -> Result<Option<f64>, ReportError> {
    let raw = record.get(idx).unwrap_or("");
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| parse_err(record, format!("{name}: not a number: {raw:?}")))
}

fn get_date(record: &StringRecord, idx: usize) -> Result<NaiveDate, ReportError> {
    parse_date(record.get(idx).unwrap_or("")).map_err(|e| parse_err(record, e.to_string()))
}

/// Reads back a table written by [`write_estimates`].
pub fn read_estimates<R: Read + 'static>(input: R) -> Result<Vec<EstimateResult>, ReportError> {
    let mut t = Table::open(input)?;
    let idx: Vec<usize> = ESTIMATE_COLUMNS
        .iter()
        .map(|c| t.require(c))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for record in t.rdr.records() {
        let record = record?;
        let num = |i: usize| -> Result<f64, ReportError> {
            get_f64(&record, idx[i], ESTIMATE_COLUMNS[i])?
                .ok_or_else(|| parse_err(&record, format!("{} is empty", ESTIMATE_COLUMNS[i])))
        };
        let int = |i: usize| -> Result<u64, ReportError> {
            record.get(idx[i]).unwrap_or("").parse().map_err(|_| {
                parse_err(
                    &record,
                    format!("{} is not an integer", ESTIMATE_COLUMNS[i]),
                )
            })
        };
        let method = Method::parse(record.get(idx[1]).unwrap_or(""))
            .ok_or_else(|| parse_err(&record, "unknown method"))?;
        out.push(EstimateResult {
            date: get_date(&record, idx[0])?,
            method,
            point: num(2)?,
            ci_low: num(3)?,
            ci_high: num(4)?,
            n_responses: int(5)? as usize,
            total_reach: int(6)?,
        });
    }
    Ok(out)
}

/// The parts of a cCFR row needed for comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcfrRow {
    pub date: NaiveDate,
    pub true_cases: f64,
    pub true_cases_ci: Option<(f64, f64)>,
}

impl From<&CcfrEstimate> for CcfrRow {
    fn from(e: &CcfrEstimate) -> Self {
        Self {
            date: e.date,
            true_cases: e.true_cases,
            true_cases_ci: e.true_cases_ci,
        }
    }
}

/// Reads back a table written by [`write_ccfr`].
pub fn read_ccfr<R: Read + 'static>(input: R) -> Result<Vec<CcfrRow>, ReportError> {
    let mut t = Table::open(input)?;
    let date = t.require("date")?;
    let cases = t.require("true_cases")?;
    let low = t.require("true_cases_low")?;
    let high = t.require("true_cases_high")?;
    let mut out = Vec::new();
    for record in t.rdr.records() {
        let record = record?;
        let true_cases = get_f64(&record, cases, "true_cases")?
            .ok_or_else(|| parse_err(&record, "true_cases is empty"))?;
        let ci = match (
            get_f64(&record, low, "true_cases_low")?,
            get_f64(&record, high, "true_cases_high")?,
        ) {
            (Some(l), Some(h)) => Some((l, h)),
            _ => None,
        };
        out.push(CcfrRow {
            date: get_date(&record, date)?,
            true_cases,
            true_cases_ci: ci,
        });
    }
    Ok(out)
}

/// One date of the comparison table; every value is a fraction of the
/// national population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub date: NaiveDate,
    pub survey: f64,
    pub survey_ci: (f64, f64),
    pub ccfr: f64,
    pub ccfr_ci: Option<(f64, f64)>,
    pub official: Option<f64>,
    pub serology: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub population: u64,
    /// Divide survey and cCFR values by this symptomatic share.
    pub symptomatic_fraction: Option<f64>,
    pub serology_reference: Option<f64>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

/// Joins the survey and cCFR series on the dates they share, adding the
/// cumulative official count where available.
pub fn compare(
    survey: &[EstimateResult],
    ccfr: &[CcfrRow],
    official: Option<&[OfficialSeriesPoint]>,
    opts: &CompareOptions,
) -> Vec<CompareRow> {
    let n = opts.population as f64;
    let scale = opts.symptomatic_fraction.unwrap_or(1.0);
    let ccfr_by_date: BTreeMap<NaiveDate, &CcfrRow> = ccfr.iter().map(|r| (r.date, r)).collect();
    let mut cumulative = BTreeMap::new();
    if let Some(points) = official {
        let mut total = 0u64;
        for p in points {
            total += p.new_cases;
            cumulative.insert(p.date, total as f64 / n);
        }
    }
    let in_range =
        |d: NaiveDate| opts.from.is_none_or(|f| d >= f) && opts.to.is_none_or(|t| d <= t);
    let survey_by_date: BTreeMap<NaiveDate, &EstimateResult> =
        survey.iter().map(|e| (e.date, e)).collect();
    survey_by_date
        .into_iter()
        .filter(|(d, _)| in_range(*d))
        .filter_map(|(date, s)| {
            let c = ccfr_by_date.get(&date)?;
            Some(CompareRow {
                date,
                survey: s.point / scale,
                survey_ci: (s.ci_low / scale, s.ci_high / scale),
                ccfr: c.true_cases / n / scale,
                ccfr_ci: c.true_cases_ci.map(|(l, h)| (l / n / scale, h / n / scale)),
                official: cumulative.get(&date).copied(),
                serology: opts.serology_reference,
            })
        })
        .collect()
}

/// Mean survey and cCFR values over the rows, `None` when empty.
pub fn window_means(rows: &[CompareRow]) -> Option<(f64, f64)> {
    if rows.is_empty() {
        return None;
    }
    let k = rows.len() as f64;
    Some((
        rows.iter().map(|r| r.survey).sum::<f64>() / k,
        rows.iter().map(|r| r.ccfr).sum::<f64>() / k,
    ))
}

pub fn write_compare<W: Write>(out: W, rows: &[CompareRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            fmt_sig6(r.survey),
            fmt_sig6(r.survey_ci.0),
            fmt_sig6(r.survey_ci.1),
            fmt_sig6(r.ccfr),
            opt(r.ccfr_ci.map(|c| c.0)),
            opt(r.ccfr_ci.map(|c| c.1)),
            opt(r.official),
            opt(r.serology),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_significant_digits() {
        let cases = [
            (0.0, "0"),
            (0.035, "0.035"),
            (0.003362185877496777, "0.00336219"),
            (2139681.23, "2.13968e+06"),
            (53435.4, "53435.4"),
            (999999.5, "1e+06"),
            (123456.0, "123456"),
            (0.00001234567, "1.23457e-05"),
            (0.0001, "0.0001"),
            (1.0, "1"),
            (-0.5, "-0.5"),
            (0.7246334, "0.724633"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_sig6(x), want, "{x}");
        }
    }

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 4, d).unwrap()
    }

    fn est(d: u32, p: f64) -> EstimateResult {
        EstimateResult {
            date: day(d),
            point: p,
            ci_low: p / 2.0,
            ci_high: p * 1.5,
            n_responses: 300,
            total_reach: 30000,
            method: Method::RegionStratified,
        }
    }

    #[test]
    fn estimate_table_round_trip() {
        let rows = vec![est(1, 0.035), est(2, 0.04)];
        let mut buf = Vec::new();
        write_estimates(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,method,point,ci_low,ci_high,n_responses,total_reach\n"));
        assert!(text.contains("2020-04-01,region-stratified,0.035,0.0175,0.0525,300,30000"));
        let back = read_estimates(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(
                (a.date, a.method, a.n_responses, a.total_reach),
                (b.date, b.method, b.n_responses, b.total_reach)
            );
            for (x, y) in [
                (a.point, b.point),
                (a.ci_low, b.ci_low),
                (a.ci_high, b.ci_high),
            ] {
                assert!((x - y).abs() <= y.abs() * 5e-6);
            }
        }
    }

    #[test]
    fn comparison_join() {
        let survey = [est(1, 0.04), est(2, 0.05), est(3, 0.06)];
        let ccfr = [
            CcfrRow {
                date: day(2),
                true_cases: 500.0,
                true_cases_ci: Some((400.0, 600.0)),
            },
            CcfrRow {
                date: day(3),
                true_cases: 700.0,
                true_cases_ci: None,
            },
            CcfrRow {
                date: day(4),
                true_cases: 900.0,
                true_cases_ci: None,
            },
        ];
        let official = [
            OfficialSeriesPoint {
                date: day(1),
                new_cases: 10,
                new_deaths: 0,
            },
            OfficialSeriesPoint {
                date: day(2),
                new_cases: 20,
                new_deaths: 0,
            },
        ];
        let opts = CompareOptions {
            population: 10_000,
            symptomatic_fraction: Some(0.5),
            serology_reference: Some(0.0633),
            from: None,
            to: None,
        };
        let rows = compare(&survey, &ccfr, Some(&official), &opts);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].date, day(2));
        assert_eq!(rows[0].survey, 0.1);
        assert_eq!(rows[0].ccfr, 0.1);
        assert_eq!(rows[0].ccfr_ci, Some((0.08, 0.12)));
        assert_eq!(rows[0].official, Some(0.003));
        assert_eq!(rows[1].official, None);
        assert!(rows.iter().all(|r| r.serology == Some(0.0633)));

        let mut buf = Vec::new();
        write_compare(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(2).unwrap(),
            "2020-04-03,0.12,0.06,0.18,0.14,,,,0.0633"
        );

        let windowed = compare(
            &survey,
            &ccfr,
            None,
            &CompareOptions {
                from: Some(day(3)),
                ..opts
            },
        );
        assert_eq!(windowed.len(), 1);
        let (s, c) = window_means(&rows).unwrap();
        assert!((s - 0.11).abs() < 1e-12 && (c - 0.12).abs() < 1e-12);

        let disjoint = compare(&survey[..1], &ccfr, None, &opts);
        assert!(disjoint.is_empty());
        assert!(window_means(&disjoint).is_none());
    }

    proptest! {
        #[test]
        fn formatted_value_keeps_six_digits(x in -1e12f64..1e12) {
            let s = fmt_sig6(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= x.abs() * 5e-6 + 1e-300);
        }
    }
}
