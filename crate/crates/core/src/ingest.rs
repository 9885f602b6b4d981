//! World Bank indicator files, cleaning rules and result files.
//!
//! Two input layouts are accepted and told apart by the header:
//!
//! * wide: `Country Name,Country Code,Series Name,Series Code,1980,...,2005`,
//!   one row per (country, series). Year headers may carry the DataBank
//!   suffix (`1980 [YR1980]`), and `Indicator Name`/`Indicator Code` are
//!   accepted for the series columns.
//! * long: `country_code,series_code,year,value`.
//!
//! Empty cells and the DataBank placeholder `..` are missing values. Every
//! other cell must parse as a finite number.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{CountrySeries, FitResult, Observation};
use crate::model::{ModelParams, SectorShares};

pub const GDP_PER_CAPITA: &str = "NY.GDP.PCAP.PP.KD";
pub const AGRICULTURE: &str = "NV.AGR.TOTL.ZS";
pub const INDUSTRY: &str = "NV.IND.TOTL.ZS";
pub const SERVICES: &str = "NV.SRV.TETC.ZS";
pub const RURAL_POPULATION: &str = "SP.RUR.TOTL.ZS";

pub const DEFAULT_FIRST_YEAR: i32 = 1980;
pub const DEFAULT_LAST_YEAR: i32 = 2005;

/// Shipped list of countries whose pre-cutoff data is ignored.
pub const DEFAULT_EXCLUSIONS: &str = include_str!("../data/exclusions.txt");

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: io::Error },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed number {value:?} at row {row}, column {column}")]
    MalformedNumber { row: u64, column: usize, value: String },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("year {0} is not covered by the input")]
    UnknownYear(i32),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            err: source,
        }
    }
}

/// The four indicator codes that make up a country series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesCodes {
    pub gdp_per_capita: String,
    pub agriculture: String,
    pub industry: String,
    pub services: String,
}

impl Default for SeriesCodes {
    fn default() -> Self {
        Self {
            gdp_per_capita: GDP_PER_CAPITA.into(),
            agriculture: AGRICULTURE.into(),
            industry: INDUSTRY.into(),
            services: SERVICES.into(),
        }
    }
}

impl SeriesCodes {
    pub fn all(&self) -> [&str; 4] {
        [&self.gdp_per_capita, &self.agriculture, &self.industry, &self.services]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOptions {
    /// Series to keep; rows of other series are skipped and counted.
    pub series: BTreeSet<String>,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self::for_series(SeriesCodes::default().all())
    }
}

impl ParseOptions {
    pub fn for_series<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            series: codes.into_iter().map(String::from).collect(),
            first_year: DEFAULT_FIRST_YEAR,
            last_year: DEFAULT_LAST_YEAR,
        }
    }

    pub fn with_years(mut self, first_year: i32, last_year: i32) -> Self {
        self.first_year = first_year;
        self.last_year = last_year;
        self
    }

    fn keeps_year(&self, year: i32) -> bool {
        (self.first_year..=self.last_year).contains(&year)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRow {
    pub country_code: String,
    pub country_name: String,
    pub series_code: String,
    pub series_name: String,
    /// `None` for a year column that is present but empty.
    pub values: BTreeMap<i32, Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndicatorTable {
    /// Year columns within the configured range, ascending.
    pub years: Vec<i32>,
    pub rows: Vec<IndicatorRow>,
    /// Rows dropped because their series code was not requested.
    pub skipped_series_rows: usize,
}

impl IndicatorTable {
    pub fn row(&self, country: &str, series: &str) -> Option<&IndicatorRow> {
        self.rows
            .iter()
            .find(|r| r.country_code == country && r.series_code == series)
    }

    pub fn value(&self, country: &str, series: &str, year: i32) -> Option<f64> {
        self.row(country, series)?.values.get(&year).copied().flatten()
    }

    /// Country codes in ascending order.
    pub fn countries(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.country_code.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn country_name(&self, country: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.country_code == country)
            .map(|r| r.country_name.as_str())
    }

    /// Adds the rows of `other`; for a (country, series) pair present in
    /// both, values from `other` fill or replace the existing ones.
    pub fn merge(&mut self, other: IndicatorTable) {
        for row in other.rows {
            self.upsert(row);
        }
        let years: BTreeSet<i32> = self.years.iter().chain(&other.years).copied().collect();
        self.years = years.into_iter().collect();
        self.skipped_series_rows += other.skipped_series_rows;
    }

    fn upsert(&mut self, row: IndicatorRow) {
        match self
            .rows
            .iter_mut()
            .find(|r| r.country_code == row.country_code && r.series_code == row.series_code)
        {
            Some(existing) => {
                for (year, value) in row.values {
                    let slot = existing.values.entry(year).or_insert(None);
                    if value.is_some() {
                        *slot = value;
                    }
                }
            }
            None => self.rows.push(row),
        }
    }

    /// Writes the table in the wide layout, one column per entry of `years`.
    pub fn write_wide<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![
            "Country Name".to_string(),
            "Country Code".into(),
            "Series Name".into(),
            "Series Code".into(),
        ];
        header.extend(self.years.iter().map(i32::to_string));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![
                row.country_name.clone(),
                row.country_code.clone(),
                row.series_name.clone(),
                row.series_code.clone(),
            ];
            record.extend(self.years.iter().map(|y| {
                row.values
                    .get(y)
                    .copied()
                    .flatten()
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            }));
            out.write_record(&record)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

enum Layout {
    /// Column index and year of each in-range year column.
    Wide(Vec<(usize, i32)>),
    Long,
}

fn year_of(header: &str) -> Option<i32> {
    // "1980" or the DataBank form "1980 [YR1980]".
    let digits = header.split_whitespace().next()?;
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

fn detect_layout(header: &[String], opts: &ParseOptions) -> Result<Layout, IngestError> {
    let lower: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if lower.len() == 4 && lower == ["country_code", "series_code", "year", "value"] {
        return Ok(Layout::Long);
    }
    if lower.len() < 4 {
        return Err(IngestError::MalformedHeader(header.join(",")));
    }
    let ok = lower[0] == "country name"
        && lower[1] == "country code"
        && matches!(lower[2].as_str(), "series name" | "indicator name")
        && matches!(lower[3].as_str(), "series code" | "indicator code");
    if !ok {
        return Err(IngestError::MalformedHeader(format!(
            "expected `Country Name,Country Code,Series Name,Series Code,<years>` or \
             `country_code,series_code,year,value`, got `{}`",
            header.join(",")
        )));
    }
    let mut years = Vec::new();
    for (col, h) in header.iter().enumerate().skip(4) {
        if h.trim().is_empty() {
            continue;
        }
        let year = year_of(h.trim())
            .ok_or_else(|| IngestError::MalformedHeader(format!("column {}: `{h}` is not a year", col + 1)))?;
        if opts.keeps_year(year) {
            years.push((col, year));
        }
    }
    Ok(Layout::Wide(years))
}

fn parse_cell(raw: &str, row: u64, column: usize) -> Result<Option<f64>, IngestError> {
    let t = raw.trim();
    if t.is_empty() || t == ".." {
        return Ok(None);
    }
    match f64::from_str(t) {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(IngestError::MalformedNumber {
            row,
            column,
            value: raw.to_string(),
        }),
    }
}

/// Parses an indicator file in either supported layout.
pub fn parse_indicators<R: Read>(reader: R, opts: &ParseOptions) -> Result<IndicatorTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect(),
        None => return Err(IngestError::MalformedHeader("empty file".into())),
    };
    let layout = detect_layout(&header, opts)?;
    let mut table = IndicatorTable::default();
    let mut years_seen = BTreeSet::new();

    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let row_no = k as u64 + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        match &layout {
            Layout::Wide(year_cols) => {
                // DataBank exports end with blank and "Data from database" lines.
                if rec.len() < 4 || field(1).is_empty() || field(3).is_empty() {
                    continue;
                }
                if !opts.series.contains(field(3)) {
                    table.skipped_series_rows += 1;
                    continue;
                }
                let mut values = BTreeMap::new();
                for &(col, year) in year_cols {
                    values.insert(year, parse_cell(rec.get(col).unwrap_or(""), row_no, col + 1)?);
                    years_seen.insert(year);
                }
                table.upsert(IndicatorRow {
                    country_code: field(1).to_string(),
                    country_name: field(0).to_string(),
                    series_code: field(3).to_string(),
                    series_name: field(2).to_string(),
                    values,
                });
            }
            Layout::Long => {
                if rec.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                if rec.len() != 4 {
                    return Err(IngestError::MalformedRow {
                        row: row_no,
                        reason: format!("expected 4 fields, got {}", rec.len()),
                    });
                }
                if !opts.series.contains(field(1)) {
                    table.skipped_series_rows += 1;
                    continue;
                }
                let year: i32 = field(2).parse().map_err(|_| IngestError::MalformedNumber {
                    row: row_no,
                    column: 3,
                    value: field(2).to_string(),
                })?;
                if !opts.keeps_year(year) {
                    continue;
                }
                let value = parse_cell(field(3), row_no, 4)?;
                years_seen.insert(year);
                let mut values = BTreeMap::new();
                values.insert(year, value);
                table.upsert(IndicatorRow {
                    country_code: field(0).to_string(),
                    country_name: field(0).to_string(),
                    series_code: field(1).to_string(),
                    series_name: String::new(),
                    values,
                });
            }
        }
    }
    table.years = match layout {
        Layout::Wide(cols) => cols
            .iter()
            .map(|&(_, y)| y)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        Layout::Long => years_seen.into_iter().collect(),
    };
    Ok(table)
}

pub fn read_indicators(path: &Path, opts: &ParseOptions) -> Result<IndicatorTable, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    parse_indicators(BufReader::new(file), opts).map_err(|e| with_path(path, e))
}

/// Parses an exclusion list: one country code per line, `#` comments.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn read_exclusions(path: &Path) -> Result<BTreeSet<String>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    Ok(parse_exclusions(&text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningConfig {
    pub cutoff_year: i32,
    /// Countries whose years before `cutoff_year` are dropped.
    pub excluded_before_cutoff: BTreeSet<String>,
    pub min_years: usize,
    pub renormalize_shares: bool,
    /// Largest tolerated `|a + i + s - 1|` before a year is dropped.
    pub renormalize_band: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            cutoff_year: 1995,
            excluded_before_cutoff: parse_exclusions(DEFAULT_EXCLUSIONS),
            min_years: 4,
            renormalize_shares: true,
            renormalize_band: 0.05,
        }
    }
}

/// Why a country produced no series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub code: String,
    pub retained_years: usize,
}

/// Per-year drop reasons, summed over all countries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DroppedYears {
    pub missing: usize,
    pub before_cutoff: usize,
    pub nonpositive_gdp: usize,
    pub share_out_of_range: usize,
    pub share_sum_out_of_band: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub series: Vec<CountrySeries>,
    pub excluded: Vec<Exclusion>,
    pub dropped: DroppedYears,
}

/// Builds cleaned country series from a parsed table.
///
/// A year is kept when all four indicators are present, GDP per capita is
/// positive, the country is not cut off for that year, and the shares pass
/// the renormalization band. `g` is the natural log of GDP per capita and
/// shares are percentages divided by 100. Countries left with fewer than
/// `min_years` years are reported in [`Assembly::excluded`].
pub fn assemble_series(table: &IndicatorTable, codes: &SeriesCodes, cleaning: &CleaningConfig) -> Assembly {
    let mut assembly = Assembly {
        series: Vec::new(),
        excluded: Vec::new(),
        dropped: DroppedYears::default(),
    };
    let d = &mut assembly.dropped;
    for country in table.countries() {
        let rows = codes.all().map(|code| table.row(country, code));
        let mut observations = Vec::new();
        for &year in &table.years {
            let vals = rows.map(|r| r.and_then(|r| r.values.get(&year).copied().flatten()));
            let [Some(gdp), Some(a), Some(i), Some(s)] = vals else {
                d.missing += 1;
                continue;
            };
            if year < cleaning.cutoff_year && cleaning.excluded_before_cutoff.contains(country) {
                d.before_cutoff += 1;
                continue;
            }
            if !(gdp > 0.0) {
                d.nonpositive_gdp += 1;
                continue;
            }
            let mut shares = [a / 100.0, i / 100.0, s / 100.0];
            if shares.iter().any(|v| !(*v >= 0.0)) {
                d.share_out_of_range += 1;
                continue;
            }
            if cleaning.renormalize_shares {
                let total: f64 = shares.iter().sum();
                if (total - 1.0).abs() > cleaning.renormalize_band {
                    d.share_sum_out_of_band += 1;
                    continue;
                }
                shares.iter_mut().for_each(|v| *v /= total);
            } else if shares.iter().any(|v| *v > 1.0) {
                d.share_out_of_range += 1;
                continue;
            }
            observations.push(Observation {
                year,
                g: gdp.ln(),
                shares: SectorShares::new(shares[0], shares[1], shares[2]),
            });
        }
        if observations.len() < cleaning.min_years {
            assembly.excluded.push(Exclusion {
                code: country.to_string(),
                retained_years: observations.len(),
            });
            continue;
        }
        assembly.series.push(CountrySeries {
            code: country.to_string(),
            name: table.country_name(country).unwrap_or(country).to_string(),
            observations,
        });
    }
    assembly
}

/// Auxiliary indicator for one year, as a fraction (percent / 100).
pub fn join_auxiliary(
    table: &IndicatorTable,
    series_code: &str,
    year: i32,
) -> Result<BTreeMap<String, Option<f64>>, IngestError> {
    if !table.years.contains(&year) {
        return Err(IngestError::UnknownYear(year));
    }
    Ok(table
        .rows
        .iter()
        .filter(|r| r.series_code == series_code)
        .map(|r| {
            (
                r.country_code.clone(),
                r.values.get(&year).copied().flatten().map(|v| v / 100.0),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub code: String,
    pub k1: f64,
    pub k2: f64,
    pub alpha: f64,
    pub g0: f64,
    pub mse_a: f64,
    pub mse_i: f64,
    pub mse_s: f64,
    pub mse_sum: f64,
    pub accepted: bool,
    #[serde(rename = "type")]
    pub transfer_type: Option<u8>,
    pub g_max_i: Option<f64>,
    pub n_obs: usize,
}

impl ResultRecord {
    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.k1, self.k2, self.alpha, self.g0)
    }
}

impl From<&FitResult> for ResultRecord {
    fn from(r: &FitResult) -> Self {
        Self {
            code: r.code.clone(),
            k1: r.params.k1,
            k2: r.params.k2,
            alpha: r.params.alpha,
            g0: r.params.g0,
            mse_a: r.mse_a,
            mse_i: r.mse_i,
            mse_s: r.mse_s,
            mse_sum: r.mse_sum,
            accepted: r.accepted,
            transfer_type: r.transfer_type.map(|t| t.id()),
            g_max_i: r.g_max_i,
            n_obs: r.n_obs,
        }
    }
}

/// One transformed observation for the collapse plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub code: String,
    pub year: i32,
    #[serde(rename = "type")]
    pub transfer_type: Option<u8>,
    pub x: f64,
    pub y: f64,
    pub x_display: Option<f64>,
    pub y_display: Option<f64>,
}

/// Serializes `rows` as CSV (header always written) or as a JSON array.
pub fn write_rows<T: Serialize + HeaderFields, W: Write>(
    rows: &[T],
    writer: W,
    format: Format,
) -> Result<(), IngestError> {
    match format {
        Format::Csv => {
            let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
            out.write_record(T::FIELDS)?;
            for row in rows {
                out.serialize(row)?;
            }
            out.flush().map_err(csv::Error::from)?;
        }
        Format::Json => {
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, rows)?;
            writeln!(writer).map_err(csv::Error::from)?;
        }
    }
    Ok(())
}

/// Column names of a CSV schema, so an empty file still carries its header.
pub trait HeaderFields {
    const FIELDS: &'static [&'static str];
}

impl HeaderFields for ResultRecord {
    const FIELDS: &'static [&'static str] = &[
        "code", "k1", "k2", "alpha", "g0", "mse_a", "mse_i", "mse_s", "mse_sum", "accepted", "type", "g_max_i", "n_obs",
    ];
}

impl HeaderFields for CollapsePoint {
    const FIELDS: &'static [&'static str] = &["code", "year", "type", "x", "y", "x_display", "y_display"];
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R, format: Format) -> Result<Vec<T>, IngestError> {
    match format {
        Format::Csv => {
            let mut rdr = csv::Reader::from_reader(reader);
            Ok(rdr.deserialize().collect::<Result<Vec<T>, _>>()?)
        }
        Format::Json => Ok(serde_json::from_reader(reader)?),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IngestError::io(path, e))
}

fn with_path(path: &Path, e: IngestError) -> IngestError {
    match e {
        IngestError::Csv(c) if c.is_io_error() => IngestError::io(path, io::Error::other(c.to_string())),
        other => other,
    }
}

pub fn write_results(results: &[FitResult], path: &Path, format: Format) -> Result<(), IngestError> {
    let records: Vec<ResultRecord> = results.iter().map(ResultRecord::from).collect();
    write_rows(&records, create(path)?, format).map_err(|e| with_path(path, e))
}

/// Format from the file extension: `.json` is JSON, anything else CSV.
pub fn format_for_path(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
        _ => Format::Csv,
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_rows(BufReader::new(file), format_for_path(path)).map_err(|e| with_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WIDE_HEADER: &str = "Country Name,Country Code,Series Name,Series Code";

    fn wide(years: &[i32], rows: &[(&str, &str, &[&str])]) -> String {
        let mut text = WIDE_HEADER.to_string();
        for y in years {
            text.push_str(&format!(",{y}"));
        }
        text.push('\n');
        for (country, series, cells) in rows {
            text.push_str(&format!(
                "{country} name,{country},{series} name,{series},{}\n",
                cells.join(",")
            ));
        }
        text
    }

    fn four(
        country: &str,
        gdp: &[&str],
        a: &[&str],
        i: &[&str],
        s: &[&str],
    ) -> Vec<(String, &'static str, Vec<String>)> {
        [(GDP_PER_CAPITA, gdp), (AGRICULTURE, a), (INDUSTRY, i), (SERVICES, s)]
            .into_iter()
            .map(|(code, cells)| (country.to_string(), code, cells.iter().map(|c| c.to_string()).collect()))
            .collect()
    }

    fn table_text(years: &[i32], rows: &[(String, &str, Vec<String>)]) -> String {
        let borrowed: Vec<(&str, &str, Vec<&str>)> = rows
            .iter()
            .map(|(c, s, v)| (c.as_str(), *s, v.iter().map(String::as_str).collect()))
            .collect();
        let refs: Vec<(&str, &str, &[&str])> = borrowed.iter().map(|(c, s, v)| (*c, *s, v.as_slice())).collect();
        wide(years, &refs)
    }

    #[test]
    fn minimal_wide_file() {
        let rows = four("FIN", &["20000", "21000"], &["5", "4"], &["30", "31"], &["65", "65"]);
        let text = table_text(&[1990, 1991], &rows);
        let table = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.years, vec![1990, 1991]);
        assert_eq!(table.value("FIN", AGRICULTURE, 1991), Some(4.0));
        assert_eq!(table.country_name("FIN"), Some("FIN name"));
    }

    #[test]
    fn empty_cell_is_missing_not_zero() {
        let text = wide(&[1990, 1991], &[("FIN", AGRICULTURE, &["", "4"])]);
        let table = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap();
        let row = table.row("FIN", AGRICULTURE).unwrap();
        assert_eq!(row.values[&1990], None);
        assert_eq!(row.values[&1991], Some(4.0));
    }

    #[test]
    fn locale_comma_is_rejected() {
        let text = format!("{WIDE_HEADER},1990\nFinland,FIN,Agr,{AGRICULTURE},\"12,3\"\n");
        let err = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap_err();
        match err {
            IngestError::MalformedNumber { row, column, value } => {
                assert_eq!((row, column, value.as_str()), (2, 5, "12,3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{WIDE_HEADER},1990\nFinland,FIN,Agr,{AGRICULTURE},NaN\n");
        assert!(matches!(
            parse_indicators(text.as_bytes(), &ParseOptions::default()),
            Err(IngestError::MalformedNumber { .. })
        ));
    }

    #[test]
    fn bad_headers() {
        for text in [
            "",
            "a,b,c\n",
            "Country,Code,Series,Code,1990\n",
            "Country Name,Country Code,Series Name,Series Code,total\n",
        ] {
            assert!(
                matches!(
                    parse_indicators(text.as_bytes(), &ParseOptions::default()),
                    Err(IngestError::MalformedHeader(_))
                ),
                "{text:?}"
            );
        }
    }

    #[test]
    fn databank_export_quirks() {
        let text =
            "\u{feff}Country Name,Country Code,Series Name,Series Code,1979 [YR1979],1980 [YR1980],2006 [YR2006]\n\
                    Finland,FIN,GDP,NY.GDP.PCAP.PP.KD,1,..,3\n\
                    Finland,FIN,Pop,SP.POP.TOTL,1,2,3\n\
                    \n\
                    Data from database: World Development Indicators\n\
                    Last Updated: 07/01/2012\n";
        let table = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(table.years, vec![1980]);
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.value("FIN", GDP_PER_CAPITA, 1980), None);
        assert_eq!(table.skipped_series_rows, 1);
    }

    #[test]
    fn long_layout() {
        let text = format!(
            "country_code,series_code,year,value\nFIN,{AGRICULTURE},1990,5\nFIN,{AGRICULTURE},1991,\nFIN,{AGRICULTURE},1970,9\nFIN,OTHER,1990,1\n"
        );
        let table = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(table.years, vec![1990, 1991]);
        assert_eq!(table.value("FIN", AGRICULTURE, 1990), Some(5.0));
        assert_eq!(table.row("FIN", AGRICULTURE).unwrap().values[&1991], None);
        assert_eq!(table.skipped_series_rows, 1);
        let bad = format!("country_code,series_code,year,value\nFIN,{AGRICULTURE},19x0,5\n");
        assert!(matches!(
            parse_indicators(bad.as_bytes(), &ParseOptions::default()),
            Err(IngestError::MalformedNumber { column: 3, .. })
        ));
    }

    fn assemble(text: &str, cleaning: &CleaningConfig) -> Assembly {
        let table = parse_indicators(text.as_bytes(), &ParseOptions::default()).unwrap();
        assemble_series(&table, &SeriesCodes::default(), cleaning)
    }

    #[test]
    fn log_gdp_and_fractions() {
        let rows = four("PAK", &["1800"; 4], &["25"; 4], &["25"; 4], &["50"; 4]);
        let out = assemble(
            &table_text(&[2000, 2001, 2002, 2003], &rows),
            &CleaningConfig::default(),
        );
        let obs = out.series[0].observations[0];
        assert!((obs.g - 7.496).abs() < 1e-3);
        assert_eq!(obs.g, 1800f64.ln());
        assert_eq!(obs.shares, SectorShares::new(0.25, 0.25, 0.5));
    }

    #[test]
    fn renormalization_band() {
        let rows = four(
            "AAA",
            &["1000"; 4],
            &["25", "25", "20", "25"],
            &["25", "25", "20", "25"],
            &["49", "49", "50", "50"],
        );
        let out = assemble(
            &table_text(&[2000, 2001, 2002, 2003], &rows),
            &CleaningConfig {
                min_years: 1,
                ..Default::default()
            },
        );
        let s = &out.series[0];
        let years: Vec<i32> = s.observations.iter().map(|o| o.year).collect();
        assert_eq!(years, vec![2000, 2001, 2003]);
        let sh = s.observations[0].shares;
        assert!((sh.a - 0.25 / 0.99).abs() < 1e-15 && (sh.s - 0.49 / 0.99).abs() < 1e-15);
        assert!((sh.sum() - 1.0).abs() < 1e-12);
        assert_eq!(out.dropped.share_sum_out_of_band, 1);
    }

    #[test]
    fn cutoff_for_listed_countries() {
        let years: Vec<i32> = (1990..=2000).collect();
        let n = years.len();
        let gdp = vec!["5000"; n];
        let (a, i, s) = (vec!["10"; n], vec!["40"; n], vec!["50"; n]);
        let mut rows = four("POL", &gdp, &a, &i, &s);
        rows.extend(four("FRA", &gdp, &a, &i, &s));
        let out = assemble(&table_text(&years, &rows), &CleaningConfig::default());
        let kept = |code: &str| -> Vec<i32> {
            out.series
                .iter()
                .find(|c| c.code == code)
                .unwrap()
                .observations
                .iter()
                .map(|o| o.year)
                .collect()
        };
        assert_eq!(kept("POL"), (1995..=2000).collect::<Vec<_>>());
        assert_eq!(kept("FRA"), years);
        assert_eq!(out.dropped.before_cutoff, 5);
    }

    #[test]
    fn eligibility_and_gdp_rules() {
        let rows = four(
            "SHT",
            &["1000", "0", "1000", "1000", ""],
            &["10"; 5],
            &["40"; 5],
            &["50"; 5],
        );
        let out = assemble(
            &table_text(&[2000, 2001, 2002, 2003, 2004], &rows),
            &CleaningConfig::default(),
        );
        assert!(out.series.is_empty());
        assert_eq!(
            out.excluded,
            vec![Exclusion {
                code: "SHT".into(),
                retained_years: 3
            }]
        );
        assert_eq!(out.dropped.nonpositive_gdp, 1);
        assert_eq!(out.dropped.missing, 1);
    }

    #[test]
    fn exclusion_list_parsing() {
        let set = parse_exclusions("# header\nPOL\n  HUN  # trailing\n\n#LBR\n");
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec!["HUN", "POL"]);
        let shipped = parse_exclusions(DEFAULT_EXCLUSIONS);
        for code in ["RUS", "POL", "SRB", "LBR", "MNG"] {
            assert!(shipped.contains(code), "{code}");
        }
    }

    #[test]
    fn auxiliary_join() {
        let text = wide(
            &[2004, 2005],
            &[
                ("AAA", RURAL_POPULATION, &["61", "60"]),
                ("BBB", RURAL_POPULATION, &["20", ""]),
            ],
        );
        let table = parse_indicators(text.as_bytes(), &ParseOptions::for_series([RURAL_POPULATION])).unwrap();
        let rural = join_auxiliary(&table, RURAL_POPULATION, 2005).unwrap();
        assert_eq!(rural["AAA"], Some(0.60));
        assert_eq!(rural["BBB"], None);
        assert!(matches!(
            join_auxiliary(&table, RURAL_POPULATION, 1999),
            Err(IngestError::UnknownYear(1999))
        ));
    }

    fn record(code: &str, ty: Option<u8>, gmax: Option<f64>) -> ResultRecord {
        ResultRecord {
            code: code.into(),
            k1: 2.29,
            k2: 0.35,
            alpha: 0.5,
            g0: 8.74,
            mse_a: 1e-5,
            mse_i: 2.5e-4,
            mse_s: 0.1 + 0.2,
            mse_sum: 0.30026,
            accepted: false,
            transfer_type: ty,
            g_max_i: gmax,
            n_obs: 26,
        }
    }

    #[test]
    fn results_csv_schema() {
        let mut buf = Vec::new();
        write_rows::<ResultRecord, _>(&[], &mut buf, Format::Csv).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "code,k1,k2,alpha,g0,mse_a,mse_i,mse_s,mse_sum,accepted,type,g_max_i,n_obs\n"
        );

        let mut buf = Vec::new();
        write_rows(&[record("FIN", None, None)], &mut buf, Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 13);
        assert!(lines[1].ends_with(",false,,,26"), "{}", lines[1]);

        let mut buf = Vec::new();
        write_rows::<ResultRecord, _>(&[], &mut buf, Format::Json).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "[]");
    }

    #[test]
    fn results_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            record("FIN", Some(1), Some(9.71)),
            record("PAK", Some(3), None),
            record("XXX", None, None),
        ];
        for (name, format) in [("r.csv", Format::Csv), ("r.json", Format::Json)] {
            let path = dir.path().join(name);
            write_rows(&records, create(&path).unwrap(), format).unwrap();
            assert_eq!(read_results(&path).unwrap(), records);
        }
        let missing = dir.path().join("nope.csv");
        let err = read_results(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.csv"), "{err}");
    }

    #[test]
    fn collapse_schema() {
        let mut buf = Vec::new();
        let p = CollapsePoint {
            code: "PAK".into(),
            year: 1990,
            transfer_type: Some(3),
            x: -0.5,
            y: -0.25,
            x_display: Some(0.5f64.ln()),
            y_display: None,
        };
        write_rows(std::slice::from_ref(&p), &mut buf, Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("code,year,type,x,y,x_display,y_display\n"));
        let back: Vec<CollapsePoint> = read_rows(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(back, vec![p]);
    }

    fn cell() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![
            Just(None),
            (-1e6..1e6f64).prop_map(Some),
            (0.0..100.0f64).prop_map(Some)
        ]
    }

    fn random_table() -> impl Strategy<Value = IndicatorTable> {
        let codes = SeriesCodes::default().all().map(String::from);
        let countries = prop::collection::btree_set("[A-Z]{3}", 1..5);
        (countries, 1usize..8).prop_flat_map(move |(countries, n_years)| {
            let years: Vec<i32> = (1990..1990 + n_years as i32).collect();
            let keys: Vec<(String, String)> = countries
                .iter()
                .flat_map(|c| codes.iter().map(move |s| (c.clone(), s.clone())))
                .collect();
            let n = keys.len();
            prop::collection::vec(prop::collection::vec(cell(), n_years), n).prop_map(move |cells| IndicatorTable {
                years: years.clone(),
                rows: keys
                    .iter()
                    .zip(cells)
                    .map(|((c, s), vals)| IndicatorRow {
                        country_code: c.clone(),
                        country_name: format!("{c} land"),
                        series_code: s.clone(),
                        series_name: String::new(),
                        values: years.iter().copied().zip(vals).collect(),
                    })
                    .collect(),
                skipped_series_rows: 0,
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wide_write_then_parse_is_identity(table in random_table()) {
            let mut buf = Vec::new();
            table.write_wide(&mut buf).unwrap();
            let back = parse_indicators(buf.as_slice(), &ParseOptions::default().with_years(1900, 2100)).unwrap();
            prop_assert_eq!(back, table);
        }

        #[test]
        fn assembled_series_respect_invariants(table in random_table(), min_years in 0usize..5, renorm in any::<bool>()) {
            let cleaning = CleaningConfig { min_years, renormalize_shares: renorm, ..Default::default() };
            let out = assemble_series(&table, &SeriesCodes::default(), &cleaning);
            for s in &out.series {
                prop_assert!(s.validate().is_ok(), "{:?}", s.validate());
                prop_assert!(s.len() >= min_years);
                if renorm {
                    for o in &s.observations {
                        prop_assert!((o.shares.sum() - 1.0).abs() <= 1e-9);
                    }
                }
            }
            prop_assert_eq!(out.series.len() + out.excluded.len(), table.countries().len());
        }
    }
}
