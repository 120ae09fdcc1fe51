use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-hour slots between 05:00 and 23:00.
pub const SLOTS_PER_DAY: usize = 36;
/// Minutes after midnight at which slot 0 starts.
pub const SERVICE_START_MINUTES: u32 = 5 * 60;
pub const SLOT_MINUTES: u32 = 30;

/// Traffic mode. The discriminant is the row index used everywhere a
/// `3 × L` matrix is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Subway = 0,
    Taxi = 1,
    Bus = 2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Subway, Mode::Taxi, Mode::Bus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Subway => "subway",
            Mode::Taxi => "taxi",
            Mode::Bus => "bus",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A service-day slot: calendar date plus slot index in `0..36`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub date: NaiveDate,
    pub slot: u8,
}

impl SlotKey {
    pub fn new(date: NaiveDate, slot: usize) -> Result<Self> {
        if slot >= SLOTS_PER_DAY {
            return Err(Error::Data(format!("slot {slot} outside 0..{SLOTS_PER_DAY}")));
        }
        Ok(Self {
            date,
            slot: slot as u8,
        })
    }

    pub fn slot(self) -> usize {
        self.slot as usize
    }

    pub fn weekday(self) -> Weekday {
        self.date.weekday()
    }

    /// Slot start as local wall-clock time.
    pub fn start(self) -> NaiveDateTime {
        let minutes = SERVICE_START_MINUTES + self.slot as u32 * SLOT_MINUTES;
        let time = NaiveTime::from_hms_opt(minutes / 60, minutes % 60, 0).expect("slot time in range");
        self.date.and_time(time)
    }

    /// Maps a wall-clock timestamp to its slot; `None` outside service hours.
    /// Errors if the timestamp is not on a 30-minute boundary.
    pub fn from_timestamp(ts: NaiveDateTime) -> Result<Option<Self>, String> {
        use chrono::Timelike;
        if ts.second() != 0 || ts.nanosecond() != 0 || ts.minute() % SLOT_MINUTES != 0 {
            return Err(format!("timestamp {ts} is not aligned to a 30-minute boundary"));
        }
        let minutes = ts.hour() * 60 + ts.minute();
        if minutes < SERVICE_START_MINUTES {
            return Ok(None);
        }
        let slot = ((minutes - SERVICE_START_MINUTES) / SLOT_MINUTES) as usize;
        if slot >= SLOTS_PER_DAY {
            return Ok(None);
        }
        Ok(Some(Self {
            date: ts.date(),
            slot: slot as u8,
        }))
    }
}

/// Per-slot inflow triples for one region, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub region: String,
    slots: Vec<SlotKey>,
    values: Vec<[f64; 3]>,
    missing: Vec<[bool; 3]>,
}

impl FlowSeries {
    /// Validates ordering and non-negativity of present values.
    pub fn new(
        region: impl Into<String>,
        slots: Vec<SlotKey>,
        values: Vec<[f64; 3]>,
        missing: Vec<[bool; 3]>,
    ) -> Result<Self> {
        if slots.len() != values.len() || slots.len() != missing.len() {
            return Err(Error::Data(format!(
                "series length mismatch: {} slots, {} values, {} masks",
                slots.len(),
                values.len(),
                missing.len()
            )));
        }
        if let Some(w) = slots.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "slots not strictly increasing at {} slot {}",
                w[1].date, w[1].slot
            )));
        }
        for (i, (v, m)) in values.iter().zip(&missing).enumerate() {
            for mode in Mode::ALL {
                let x = v[mode.index()];
                if !m[mode.index()] && !(x.is_finite() && x >= 0.0) {
                    return Err(Error::Data(format!(
                        "invalid {mode} value {x} at {} slot {}",
                        slots[i].date, slots[i].slot
                    )));
                }
            }
        }
        Ok(Self {
            region: region.into(),
            slots,
            values,
            missing,
        })
    }

    /// A series with nothing missing.
    pub fn complete(region: impl Into<String>, slots: Vec<SlotKey>, values: Vec<[f64; 3]>) -> Result<Self> {
        let missing = vec![[false; 3]; values.len()];
        Self::new(region, slots, values, missing)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[SlotKey] {
        &self.slots
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn missing(&self) -> &[[bool; 3]] {
        &self.missing
    }

    pub fn value(&self, index: usize, mode: Mode) -> f64 {
        self.values[index][mode.index()]
    }

    pub fn is_missing(&self, index: usize, mode: Mode) -> bool {
        self.missing[index][mode.index()]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|m| m.iter().any(|&b| b))
    }

    /// Distinct dates in order.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = Vec::new();
        for s in &self.slots {
            if out.last() != Some(&s.date) {
                out.push(s.date);
            }
        }
        out
    }

    /// Keeps the entries whose slot satisfies `keep`.
    pub(crate) fn retain(&self, keep: impl Fn(&SlotKey) -> bool) -> Self {
        let mut out = Self {
            region: self.region.clone(),
            slots: Vec::new(),
            values: Vec::new(),
            missing: Vec::new(),
        };
        for i in 0..self.len() {
            if keep(&self.slots[i]) {
                out.slots.push(self.slots[i]);
                out.values.push(self.values[i]);
                out.missing.push(self.missing[i]);
            }
        }
        out
    }

    pub(crate) fn with_values(&self, values: Vec<[f64; 3]>, missing: Vec<[bool; 3]>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        Self {
            region: self.region.clone(),
            slots: self.slots.clone(),
            values,
            missing,
        }
    }

    /// Sum of each mode over every present slot of `date`.
    pub fn daily_totals(&self, date: NaiveDate) -> [f64; 3] {
        let mut totals = [0.0; 3];
        for i in 0..self.len() {
            if self.slots[i].date == date {
                for m in 0..3 {
                    if !self.missing[i][m] {
                        totals[m] += self.values[i][m];
                    }
                }
            }
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn slot_mapping_covers_service_window() {
        let at = |h, m| d(2016, 3, 1).and_hms_opt(h, m, 0).unwrap();
        assert_eq!(SlotKey::from_timestamp(at(5, 0)).unwrap().unwrap().slot, 0);
        assert_eq!(SlotKey::from_timestamp(at(22, 30)).unwrap().unwrap().slot, 35);
        assert_eq!(SlotKey::from_timestamp(at(4, 30)).unwrap(), None);
        assert_eq!(SlotKey::from_timestamp(at(23, 0)).unwrap(), None);
        assert!(SlotKey::from_timestamp(at(6, 15)).is_err());
        let k = SlotKey::new(d(2016, 3, 1), 10).unwrap();
        assert_eq!(SlotKey::from_timestamp(k.start()).unwrap(), Some(k));
    }

    #[test]
    fn rejects_unordered_slots_and_negative_values() {
        let a = SlotKey::new(d(2016, 3, 1), 1).unwrap();
        let b = SlotKey::new(d(2016, 3, 1), 0).unwrap();
        assert!(FlowSeries::complete("r", vec![a, b], vec![[0.0; 3]; 2]).is_err());
        assert!(FlowSeries::complete("r", vec![b], vec![[-1.0, 0.0, 0.0]]).is_err());
        // a negative placeholder under a missing flag is fine
        assert!(FlowSeries::new("r", vec![b], vec![[-1.0, 0.0, 0.0]], vec![[true, false, false]]).is_ok());
    }
}
