//! CSV readers (and the one writer needed for round trips) for survey
//! responses, official case/death series and region population tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Trim};
use thiserror::Error;

use crate::model::{
    parse_date, validate_response, CountryCode, CountryInfo, ModelError, OfficialSeriesPoint,
    RawResponse, RegionCode, RegionInfo, Rejection, SurveyResponse,
};

pub const RESPONSE_COLUMNS: [&str; 5] = ["date", "country", "region", "reach", "count"];
pub const SERIES_COLUMNS: [&str; 4] = ["date", "country", "new_cases", "new_deaths"];
pub const REGION_COLUMNS: [&str; 3] = ["country", "region", "population"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("duplicate column {0:?} in header")]
    DuplicateColumn(String),
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: Rejection },
    #[error("line {line}: negative {field} ({value})")]
    NegativeCount {
        line: u64,
        field: &'static str,
        value: i64,
    },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: u64, date: NaiveDate },
    #[error("line {line}: country {found} differs from {expected}; one country per file")]
    MixedCountries {
        line: u64,
        expected: CountryCode,
        found: CountryCode,
    },
    #[error("region table has no national row (empty region)")]
    MissingNational,
    #[error("line {line}: second national row")]
    DuplicateNational { line: u64 },
    #[error("line {line}: duplicate region {region}")]
    DuplicateRegion { line: u64, region: RegionCode },
    #[error("line {line}: population must be a positive integer, got {value:?}")]
    NonPositivePopulation { line: u64, value: String },
    #[error("region table: {0}")]
    Model(#[from] ModelError),
}

/// A row that could not become a `SurveyResponse`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowReject {
    pub line: u64,
    pub reason: Rejection,
}

/// Parsed responses plus every row that was refused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponseFile {
    pub rows: Vec<SurveyResponse>,
    pub rejects: Vec<RowReject>,
}

/// Maps each required column to its index. Extra columns are ignored.
fn column_index<const N: usize>(
    headers: &StringRecord,
    wanted: [&'static str; N],
) -> Result<[usize; N], IngestError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim_start_matches('\u{feff}');
        if seen.insert(h, i).is_some() {
            return Err(IngestError::DuplicateColumn(h.to_string()));
        }
    }
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(wanted) {
        *slot = *seen.get(name).ok_or(IngestError::MissingColumn(name))?;
    }
    Ok(out)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(input)
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn field(record: &StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("")
}

/// Reads a `date,country,region,reach,count` file.
///
/// In strict mode the first bad row aborts parsing; otherwise it lands in
/// `rejects` with its line number.
pub fn parse_responses<R: Read>(input: R, strict: bool) -> Result<ResponseFile, IngestError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let idx = column_index(&headers, RESPONSE_COLUMNS)?;
    let mut out = ResponseFile::default();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let parsed = if record.len() != headers.len() {
            Err(Rejection::FieldCount {
                expected: headers.len(),
                found: record.len(),
            })
        } else {
            validate_response(&RawResponse {
                date: field(&record, idx[0]).into(),
                country: field(&record, idx[1]).into(),
                region: field(&record, idx[2]).into(),
                reach: field(&record, idx[3]).into(),
                count: field(&record, idx[4]).into(),
            })
        };
        match parsed {
            Ok(r) => out.rows.push(r),
            Err(reason) if strict => return Err(IngestError::Row { line, reason }),
            Err(reason) => out.rejects.push(RowReject { line, reason }),
        }
    }
    Ok(out)
}

/// Writes responses in the same schema `parse_responses` reads.
pub fn write_responses<W: Write>(out: W, rows: &[SurveyResponse]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESPONSE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.date().format("%Y-%m-%d").to_string(),
            r.country().to_string(),
            r.region().map(|c| c.to_string()).unwrap_or_default(),
            r.reach().to_string(),
            r.count().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_daily(line: u64, name: &'static str, value: &str) -> Result<u64, IngestError> {
    match value.parse::<i64>() {
        Ok(v) if v < 0 => Err(IngestError::NegativeCount {
            line,
            field: name,
            value: v,
        }),
        Ok(v) => Ok(v as u64),
        Err(_) => Err(IngestError::Row {
            line,
            reason: Rejection::InvalidNumber {
                field: name,
                value: value.into(),
            },
        }),
    }
}

/// Reads a `date,country,new_cases,new_deaths` file for a single country.
///
/// Rows may arrive in any order. The result is sorted and dense: days
/// missing between the first and last date are filled with zero counts.
/// Negative counts are an error; clean corrections before ingesting.
pub fn parse_official_series<R: Read>(input: R) -> Result<Vec<OfficialSeriesPoint>, IngestError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let idx = column_index(&headers, SERIES_COLUMNS)?;
    let mut country: Option<CountryCode> = None;
    let mut by_date: BTreeMap<NaiveDate, OfficialSeriesPoint> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let row_err = |reason| IngestError::Row { line, reason };
        let date = parse_date(field(&record, idx[0])).map_err(row_err)?;
        let code = CountryCode::parse(field(&record, idx[1])).map_err(row_err)?;
        match country {
            None => country = Some(code),
            Some(expected) if expected != code => {
                return Err(IngestError::MixedCountries {
                    line,
                    expected,
                    found: code,
                })
            }
            Some(_) => {}
        }
        let new_cases = parse_daily(line, "new_cases", field(&record, idx[2]))?;
        let new_deaths = parse_daily(line, "new_deaths", field(&record, idx[3]))?;
        let point = OfficialSeriesPoint {
            date,
            new_cases,
            new_deaths,
        };
        if by_date.insert(date, point).is_some() {
            return Err(IngestError::DuplicateDate { line, date });
        }
    }
    Ok(densify(by_date.into_values()))
}

/// Fills gaps in an ordered series with zero days.
pub fn densify(points: impl IntoIterator<Item = OfficialSeriesPoint>) -> Vec<OfficialSeriesPoint> {
    let mut out: Vec<OfficialSeriesPoint> = Vec::new();
    for p in points {
        if let Some(last) = out.last() {
            let mut day = last.date.succ_opt().expect("date in range");
            while day < p.date {
                out.push(OfficialSeriesPoint {
                    date: day,
                    new_cases: 0,
                    new_deaths: 0,
                });
                day = day.succ_opt().expect("date in range");
            }
        }
        out.push(p);
    }
    out
}

/// Reads a `country,region,population` table. The row with an empty region
/// carries the national population.
pub fn parse_region_table<R: Read>(input: R) -> Result<CountryInfo, IngestError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let idx = column_index(&headers, REGION_COLUMNS)?;
    let mut country: Option<CountryCode> = None;
    let mut national: Option<u64> = None;
    let mut regions: Vec<RegionInfo> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let code = CountryCode::parse(field(&record, idx[0]))
            .map_err(|reason| IngestError::Row { line, reason })?;
        match country {
            None => country = Some(code),
            Some(expected) if expected != code => {
                return Err(IngestError::MixedCountries {
                    line,
                    expected,
                    found: code,
                })
            }
            Some(_) => {}
        }
        let raw_pop = field(&record, idx[2]);
        let population = match raw_pop.parse::<u64>() {
            Ok(p) if p > 0 => p,
            _ => {
                return Err(IngestError::NonPositivePopulation {
                    line,
                    value: raw_pop.into(),
                })
            }
        };
        let region = field(&record, idx[1]);
        if region.is_empty() {
            if national.replace(population).is_some() {
                return Err(IngestError::DuplicateNational { line });
            }
            continue;
        }
        let region =
            RegionCode::parse(region).map_err(|reason| IngestError::Row { line, reason })?;
        if regions.iter().any(|r| r.region == region) {
            return Err(IngestError::DuplicateRegion { line, region });
        }
        regions.push(RegionInfo {
            region,
            country: code,
            population,
        });
    }
    let (Some(country), Some(national)) = (country, national) else {
        return Err(IngestError::MissingNational);
    };
    Ok(CountryInfo::new(country, national, regions)?)
}

/// Region tables shipped with the crate (ISO 3166-2 subdivision suffixes,
/// 2019/2020 official population estimates).
pub fn builtin_region_table(country: CountryCode) -> Option<CountryInfo> {
    let text = match country.as_str() {
        "ES" => include_str!("../data/es.csv"),
        "BR" => include_str!("../data/br.csv"),
        "EC" => include_str!("../data/ec.csv"),
        "UA" => include_str!("../data/ua.csv"),
        _ => return None,
    };
    Some(parse_region_table(text.as_bytes()).expect("bundled region table is valid"))
}
