//! `timestamp,subway,taxi,bus` ingestion and export.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use crate::dataflow::series::{FlowSeries, SlotKey, SLOTS_PER_DAY};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["timestamp", "subway", "taxi", "bus"];

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

/// Result of reading an inflow CSV.
#[derive(Debug, Clone)]
pub struct LoadedSeries {
    pub series: FlowSeries,
    /// Rows dropped because they fall outside 05:00–23:00.
    pub dropped_outside_service: usize,
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw.trim(), f).ok())
}

/// Reads an inflow CSV. The region label is the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadedSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let region = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, region)
}

/// Parses inflow CSV text from any reader.
///
/// Rows outside service hours are dropped and counted. For every date that
/// appears, service slots with no row are marked missing, as are empty
/// count fields.
pub fn read_csv<R: Read>(reader: R, region: impl Into<String>) -> Result<LoadedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", CSV_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut rows: BTreeMap<SlotKey, [Option<f64>; 3]> = BTreeMap::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(format!("unparseable timestamp `{}`", &record[0])))?;
        let key = match SlotKey::from_timestamp(ts).map_err(parse_err)? {
            Some(k) => k,
            None => {
                dropped += 1;
                continue;
            }
        };
        let mut counts = [None; 3];
        for (m, slot) in counts.iter_mut().enumerate() {
            let field = &record[m + 1];
            if field.is_empty() {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("invalid {} count `{field}`", CSV_HEADER[m + 1])))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(parse_err(format!("negative or non-finite {} count `{field}`", CSV_HEADER[m + 1])));
            }
            *slot = Some(v);
        }
        if rows.insert(key, counts).is_some() {
            return Err(Error::Data(format!("duplicate timestamp {ts} at line {line}")));
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows outside service hours");
    }

    let mut dates: Vec<_> = rows.keys().map(|k| k.date).collect();
    dates.dedup();
    let mut slots = Vec::with_capacity(dates.len() * SLOTS_PER_DAY);
    let mut values = Vec::with_capacity(slots.capacity());
    let mut missing = Vec::with_capacity(slots.capacity());
    for date in dates {
        for s in 0..SLOTS_PER_DAY {
            let key = SlotKey::new(date, s)?;
            let counts = rows.get(&key).copied().unwrap_or([None; 3]);
            slots.push(key);
            values.push(counts.map(|c| c.unwrap_or(0.0)));
            missing.push(counts.map(|c| c.is_none()));
        }
    }
    Ok(LoadedSeries {
        series: FlowSeries::new(region, slots, values, missing)?,
        dropped_outside_service: dropped,
    })
}

/// Writes a series in the ingestion format; missing counts become empty fields.
pub fn write_csv<W: Write>(series: &FlowSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for i in 0..series.len() {
        let ts = series.slots()[i].start().format("%Y-%m-%dT%H:%M:%S").to_string();
        let mut row = vec![ts];
        for m in 0..3 {
            row.push(if series.missing()[i][m] {
                String::new()
            } else {
                format!("{}", series.values()[i][m])
            });
        }
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::Mode;

    fn day_csv(date: &str, skip_slot: Option<usize>) -> String {
        let mut s = String::from("timestamp,subway,taxi,bus\n");
        for slot in 0..SLOTS_PER_DAY {
            if Some(slot) == skip_slot {
                continue;
            }
            let minutes = 300 + slot * 30;
            s.push_str(&format!(
                "{date}T{:02}:{:02}:00,{},{},{}\n",
                minutes / 60,
                minutes % 60,
                100 + slot,
                50 + slot,
                20 + slot
            ));
        }
        s
    }

    #[test]
    fn full_day_loads_36_slots() {
        let loaded = read_csv(day_csv("2016-03-01", None).as_bytes(), "x").unwrap();
        assert_eq!(loaded.series.len(), 36);
        assert!(!loaded.series.has_missing());
        assert_eq!(loaded.series.value(3, Mode::Taxi), 53.0);
    }

    #[test]
    fn early_row_is_dropped_and_counted() {
        let mut text = day_csv("2016-03-01", None);
        text.push_str("2016-03-01T04:30:00,1,1,1\n");
        let loaded = read_csv(text.as_bytes(), "x").unwrap();
        assert_eq!(loaded.series.len(), 36);
        assert_eq!(loaded.dropped_outside_service, 1);
    }

    #[test]
    fn absent_slot_is_marked_missing() {
        let loaded = read_csv(day_csv("2016-03-01", Some(10)).as_bytes(), "x").unwrap();
        let s = &loaded.series;
        assert_eq!(s.len(), 36);
        for i in 0..36 {
            for m in Mode::ALL {
                assert_eq!(s.is_missing(i, m), i == 10);
            }
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = day_csv("2016-03-01", None);
        text.push_str("2016-03-02T05:00:00,abc,1,1\n");
        match read_csv(text.as_bytes(), "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 38),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamp_is_data_error() {
        let mut text = day_csv("2016-03-01", None);
        text.push_str("2016-03-01T05:00:00,1,1,1\n");
        assert!(matches!(read_csv(text.as_bytes(), "x"), Err(Error::Data(_))));
    }

    #[test]
    fn wrong_header_and_misaligned_time() {
        assert!(matches!(
            read_csv("time,a,b,c\n".as_bytes(), "x"),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "timestamp,subway,taxi,bus\n2016-03-01T05:10:00,1,1,1\n";
        assert!(matches!(read_csv(text.as_bytes(), "x"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn write_then_read_preserves_series() {
        let mut text = day_csv("2016-03-01", Some(4));
        text.push_str("2016-03-02T05:00:00,7,,9\n");
        let s = read_csv(text.as_bytes(), "x").unwrap().series;
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "x").unwrap().series;
        assert_eq!(back, s);
    }
}
