//! Daily premium series: CSV ingestion, gap imputation and log-returns.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

/// Observed values required before a series can be fitted.
pub const MIN_OBSERVATIONS: usize = 50;
/// Longest run of consecutive missing values that may be imputed.
pub const MAX_GAP: usize = 5;
/// Missing fraction at or above which imputation is refused.
pub const MAX_MISSING_FRACTION: f64 = 0.2;
/// Observed neighbours averaged for each missing value.
pub const IMPUTATION_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: u64, date: NaiveDate },
    #[error("line {line}: date {date} is earlier than the previous row")]
    NonMonotone { line: u64, date: NaiveDate },
    #[error("data quality: {0}")]
    Quality(String),
    #[error("value at index {index} must be > 0 for log-returns, got {value}")]
    Domain { index: usize, value: f64 },
}

/// A dated series with missing markers.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub entity: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    /// True where the value was filled in by [`impute_missing`].
    pub imputed: Vec<bool>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn missing_count(&self) -> usize {
        self.len() - self.observed_count()
    }

    /// Values with no missing entries, or `None` if any remain.
    pub fn complete_values(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// Ensures enough observations for model fitting.
    pub fn check_fit_length(&self) -> Result<(), DataError> {
        let n = self.observed_count();
        if n < MIN_OBSERVATIONS {
            return Err(DataError::Quality(format!(
                "{}: {n} observed values, at least {MIN_OBSERVATIONS} required",
                self.entity
            )));
        }
        Ok(())
    }
}

/// Zero-based positions of the date and value columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub date: usize,
    pub value: usize,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec { date: 0, value: 1 }
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "n/a" | "null" | "."
    )
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn load_csv(path: &Path, columns: &ColumnSpec) -> Result<RawSeries, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entity = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_series(file, &entity, columns)
}

/// Parses `date,value` rows. A first row whose date field is not a date is
/// taken as a header; `#` lines are comments. A header column named
/// `imputed_flag` is read back into [`RawSeries::imputed`].
pub fn parse_series<R: Read>(
    reader: R,
    entity: &str,
    columns: &ColumnSpec,
) -> Result<RawSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut series = RawSeries {
        entity: entity.to_string(),
        dates: Vec::new(),
        values: Vec::new(),
        imputed: Vec::new(),
    };
    let mut flag_column = None;
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| DataError::Malformed {
                line,
                reason: format!(
                    "expected at least {} columns, found {}",
                    idx + 1,
                    record.len()
                ),
            })
        };
        let date_text = field(columns.date)?;
        let Some(date) = parse_date(date_text) else {
            if first {
                first = false;
                flag_column = record
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case("imputed_flag"));
                continue;
            }
            return Err(DataError::Malformed {
                line,
                reason: format!("invalid ISO-8601 date `{date_text}`"),
            });
        };
        first = false;
        let value_text = field(columns.value)?;
        let value = if is_missing_token(value_text) {
            None
        } else {
            match value_text.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                Ok(v) if v.is_nan() => None,
                _ => {
                    return Err(DataError::Malformed {
                        line,
                        reason: format!("invalid numeric value `{value_text}`"),
                    })
                }
            }
        };
        let imputed = match flag_column.and_then(|c| record.get(c)) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") | Some("") | None => false,
            Some(other) => {
                return Err(DataError::Malformed {
                    line,
                    reason: format!("invalid imputed_flag `{other}`"),
                })
            }
        };
        if let Some(&prev) = series.dates.last() {
            if date == prev {
                return Err(DataError::DuplicateDate { line, date });
            }
            if date < prev {
                return Err(DataError::NonMonotone { line, date });
            }
        }
        series.dates.push(date);
        series.values.push(value);
        series.imputed.push(imputed);
    }
    Ok(series)
}

/// Writes `date,value,imputed_flag`; missing values are written as `NA`.
pub fn save_csv<W: Write>(series: &RawSeries, mut out: W) -> std::io::Result<()> {
    writeln!(out, "date,value,imputed_flag")?;
    for ((d, v), flag) in series.dates.iter().zip(&series.values).zip(&series.imputed) {
        match v {
            Some(v) => writeln!(out, "{},{},{}", d.format("%Y-%m-%d"), v, u8::from(*flag))?,
            None => writeln!(out, "{},NA,{}", d.format("%Y-%m-%d"), u8::from(*flag))?,
        }
    }
    Ok(())
}

/// Runs of consecutive missing values as `(start_index, length)`.
pub fn missing_runs(series: &RawSeries) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, v) in series.values.iter().enumerate() {
        match (v, start) {
            (None, None) => start = Some(i),
            (Some(_), Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, series.values.len() - s));
    }
    runs
}

/// Replaces every missing value by the mean of the nearest
/// [`IMPUTATION_WINDOW`] originally observed values (by index distance, ties
/// toward earlier indices).
pub fn impute_missing(series: &RawSeries) -> Result<RawSeries, DataError> {
    let n = series.len();
    let missing = series.missing_count();
    if missing == 0 {
        return Ok(series.clone());
    }
    let runs = missing_runs(series);
    let long: Vec<String> = runs
        .iter()
        .filter(|(_, len)| *len > MAX_GAP)
        .map(|(s, len)| describe_gap(series, *s, *len))
        .collect();
    let fraction = missing as f64 / n as f64;
    if fraction >= MAX_MISSING_FRACTION || !long.is_empty() {
        let all: Vec<String> = runs
            .iter()
            .map(|(s, len)| describe_gap(series, *s, *len))
            .collect();
        return Err(DataError::Quality(format!(
            "{}: {missing} of {n} values missing ({:.1}%), gaps longer than {MAX_GAP}: [{}], all gaps: [{}]",
            series.entity,
            100.0 * fraction,
            long.join(", "),
            all.join(", ")
        )));
    }

    let mut out = series.clone();
    for (i, v) in series.values.iter().enumerate() {
        if v.is_some() {
            continue;
        }
        let mut picked = Vec::with_capacity(IMPUTATION_WINDOW);
        let (mut left, mut right) = (i, i + 1);
        // expand symmetrically; on equal distance the earlier index goes first
        while picked.len() < IMPUTATION_WINDOW && (left > 0 || right < n) {
            let dl = if left > 0 { Some(i - (left - 1)) } else { None };
            let dr = if right < n { Some(right - i) } else { None };
            let take_left = match (dl, dr) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                _ => false,
            };
            if take_left {
                left -= 1;
                if let Some(x) = series.values[left] {
                    picked.push(x);
                }
            } else {
                if let Some(x) = series.values[right] {
                    picked.push(x);
                }
                right += 1;
            }
        }
        if picked.is_empty() {
            return Err(DataError::Quality(format!(
                "{}: no observed values",
                series.entity
            )));
        }
        out.values[i] = Some(picked.iter().sum::<f64>() / picked.len() as f64);
        out.imputed[i] = true;
    }
    Ok(out)
}

fn describe_gap(series: &RawSeries, start: usize, len: usize) -> String {
    format!("{} (+{len})", series.dates[start])
}

/// One-period log-returns of a complete, positive series.
pub fn to_log_returns(series: &RawSeries) -> Result<Vec<f64>, DataError> {
    let mut logs = Vec::with_capacity(series.len());
    for (index, v) in series.values.iter().enumerate() {
        match v {
            Some(x) if *x > 0.0 => logs.push(x.ln()),
            Some(x) => return Err(DataError::Domain { index, value: *x }),
            None => {
                return Err(DataError::Quality(format!(
                    "{}: value at index {index} is missing; impute first",
                    series.entity
                )))
            }
        }
    }
    Ok(logs.windows(2).map(|w| w[1] - w[0]).collect())
}

/// One row of a batch manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub entity: String,
    pub path: PathBuf,
}

/// Parses `entity,path` rows (optional `entity,path` header, `#` comments).
pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 || record[0].is_empty() || record[1].is_empty() {
            return Err(DataError::Malformed {
                line,
                reason: "expected `entity,path`".into(),
            });
        }
        if i == 0
            && record[0].eq_ignore_ascii_case("entity")
            && record[1].eq_ignore_ascii_case("path")
        {
            continue;
        }
        out.push(ManifestEntry {
            entity: record[0].to_string(),
            path: PathBuf::from(&record[1]),
        });
    }
    Ok(out)
}

/// Reads a manifest file; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(parse_manifest(file)?
        .into_iter()
        .map(|mut e| {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            e
        })
        .collect())
}
