//! Raw dataset parsers.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::DateTime;

use crate::error::{Error, Result};

/// Optional venue metadata carried by Foursquare check-ins.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckinMeta {
    pub category_id: String,
    pub category_name: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Local offset from UTC in minutes.
    pub tz_offset_min: i32,
}

/// One implicit-feedback event.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub meta: Option<CheckinMeta>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn distinct_users(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.user.as_str()))
            .count()
    }

    pub fn distinct_items(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.item.as_str()))
            .count()
    }
}

/// What to do with a line that does not match the expected layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Skip the line and record a warning.
    Lenient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    pub log: InteractionLog,
    pub skipped: Vec<SkippedLine>,
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        // raw files are not guaranteed to be UTF-8
        let text = String::from_utf8_lossy(&buf);
        let text = text.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        f(line_no, text)?;
    }
}

/// Parses MovieLens-1M `ratings.dat` (`UserID::MovieID::Rating::Timestamp`).
/// The rating is validated but otherwise ignored.
pub fn parse_ml1m(path: &Path, mode: ParseMode) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    for_each_line(path, |line, text| {
        match parse_ml1m_line(text) {
            Ok(rec) => report.log.records.push(rec),
            Err(reason) => match mode {
                ParseMode::Strict => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        reason,
                    })
                }
                ParseMode::Lenient => report.skipped.push(SkippedLine { line, reason }),
            },
        }
        Ok(())
    })?;
    Ok(report)
}

pub fn parse_ml1m_line(text: &str) -> std::result::Result<Interaction, String> {
    let fields: Vec<&str> = text.split("::").collect();
    if fields.len() != 4 {
        return Err(format!(
            "expected 4 `::`-separated fields, found {}",
            fields.len()
        ));
    }
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    fields[2]
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("bad rating `{}`", fields[2]))?;
    let timestamp = fields[3]
        .trim()
        .parse::<i64>()
        .map_err(|_| format!("bad timestamp `{}`", fields[3]))?;
    Ok(Interaction {
        user: user.to_string(),
        item: item.to_string(),
        timestamp,
        meta: None,
    })
}

/// Parses the Foursquare NYC check-in TSV: user, venue, category id,
/// category name, latitude, longitude, timezone offset (minutes), UTC time
/// such as `Tue Apr 03 18:00:09 +0000 2012`.
///
/// Lines whose time cannot be parsed are always skipped with a warning.
pub fn parse_foursquare_nyc(path: &Path, mode: ParseMode) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    for_each_line(path, |line, text| {
        match parse_foursquare_line(text) {
            Ok(rec) => report.log.records.push(rec),
            Err(LineError::Time(reason)) => report.skipped.push(SkippedLine { line, reason }),
            Err(LineError::Layout(reason)) => match mode {
                ParseMode::Strict => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        reason,
                    })
                }
                ParseMode::Lenient => report.skipped.push(SkippedLine { line, reason }),
            },
        }
        Ok(())
    })?;
    Ok(report)
}

#[derive(Debug)]
pub enum LineError {
    Layout(String),
    Time(String),
}

pub fn parse_foursquare_line(text: &str) -> std::result::Result<Interaction, LineError> {
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() != 8 {
        return Err(LineError::Layout(format!(
            "expected 8 tab-separated fields, found {}",
            f.len()
        )));
    }
    let (user, venue) = (f[0].trim(), f[1].trim());
    if user.is_empty() || venue.is_empty() {
        return Err(LineError::Layout("empty user or venue id".into()));
    }
    let num = |i: usize| {
        f[i].trim()
            .parse::<f64>()
            .map_err(|_| LineError::Layout(format!("bad number `{}` in column {}", f[i], i + 1)))
    };
    let latitude = num(4)?;
    let longitude = num(5)?;
    let tz_offset_min = f[6]
        .trim()
        .parse::<i32>()
        .map_err(|_| LineError::Layout(format!("bad timezone offset `{}`", f[6])))?;
    let when = DateTime::parse_from_str(f[7].trim(), "%a %b %d %H:%M:%S %z %Y")
        .map_err(|e| LineError::Time(format!("unparseable time `{}`: {e}", f[7])))?;
    Ok(Interaction {
        user: user.to_string(),
        item: venue.to_string(),
        timestamp: when.timestamp(),
        meta: Some(CheckinMeta {
            category_id: f[2].to_string(),
            category_name: f[3].to_string(),
            latitude,
            longitude,
            tz_offset_min,
        }),
    })
}
