use std::io::Read;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionRecord {
    pub user_id: String,
    pub date: NaiveDate,
    pub item_id: String,
}

/// Column mapping and text conventions of a transaction log.
#[derive(Clone, Debug)]
pub struct ParseSchema {
    pub delimiter: u8,
    pub user_col: String,
    pub date_col: String,
    pub item_col: String,
    /// `chrono` format string; `%Y-%m-%d` by default. Ta-Feng's CSV export
    /// uses `%m/%d/%Y`.
    pub date_format: String,
}

impl Default for ParseSchema {
    fn default() -> Self {
        ParseSchema {
            delimiter: b';',
            user_col: "user".into(),
            date_col: "date".into(),
            item_col: "item".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<TransactionRecord>,
    pub skipped: usize,
}

fn parse_date(raw: &str, format: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw, format)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, format).map(|dt| dt.date()))
        .ok()
        .or_else(|| {
            // "2000-11-01 00:00:00" against a date-only format.
            let head = raw.split_whitespace().next()?;
            NaiveDate::parse_from_str(head, format).ok()
        })
}

/// Reads a delimiter-separated log with a header row. Rows with an empty
/// field or an unparseable date are counted in `skipped`.
pub fn parse_transactions<R: Read>(input: R, schema: &ParseSchema) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(ParseOutcome::default());
    }
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "column `{name}` not in header [{}]",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let (u, d, i) = (column(&schema.user_col)?, column(&schema.date_col)?, column(&schema.item_col)?);

    let mut out = ParseOutcome::default();
    for row in reader.records() {
        let row = row?;
        let field = |c: usize| row.get(c).filter(|s| !s.is_empty());
        let parsed = match (field(u), field(d), field(i)) {
            (Some(user), Some(date), Some(item)) => parse_date(date, &schema.date_format).map(|date| {
                TransactionRecord {
                    user_id: user.to_string(),
                    date,
                    item_id: item.to_string(),
                }
            }),
            _ => None,
        };
        match parsed {
            Some(r) => out.records.push(r),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}
