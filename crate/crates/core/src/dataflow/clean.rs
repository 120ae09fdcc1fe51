use std::collections::HashMap;

use chrono::{Datelike, Weekday};

use crate::dataflow::series::{FlowSeries, Mode};
use crate::error::{Error, Result};

/// Keeps Monday–Friday slots.
pub fn filter_weekdays(series: &FlowSeries) -> Result<FlowSeries> {
    let out = series.retain(|k| !matches!(k.date.weekday(), Weekday::Sat | Weekday::Sun));
    if out.is_empty() {
        return Err(Error::Data("no weekday slots left after filtering".into()));
    }
    Ok(out)
}

/// Fills each missing count with the mean of the present counts at the same
/// weekday, slot and mode on other dates.
///
/// Donors are taken from the input as given, so imputed values never feed
/// other imputations.
pub fn impute_missing(series: &FlowSeries) -> Result<FlowSeries> {
    if !series.has_missing() {
        return Ok(series.clone());
    }
    // (weekday, slot, mode) -> (sum, count)
    let mut donors: HashMap<(Weekday, u8, usize), (f64, usize)> = HashMap::new();
    for (i, key) in series.slots().iter().enumerate() {
        for m in Mode::ALL {
            if !series.is_missing(i, m) {
                let e = donors.entry((key.weekday(), key.slot, m.index())).or_default();
                e.0 += series.value(i, m);
                e.1 += 1;
            }
        }
    }
    let mut values = series.values().to_vec();
    for (i, key) in series.slots().iter().enumerate() {
        for m in Mode::ALL {
            if series.is_missing(i, m) {
                let (sum, n) = donors
                    .get(&(key.weekday(), key.slot, m.index()))
                    .copied()
                    .unwrap_or((0.0, 0));
                if n == 0 {
                    return Err(Error::Imputation {
                        date: key.date,
                        slot: key.slot(),
                        mode: m.label(),
                    });
                }
                values[i][m.index()] = sum / n as f64;
            }
        }
    }
    Ok(series.with_values(values, vec![[false; 3]; series.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::series::{SlotKey, SLOTS_PER_DAY};
    use chrono::NaiveDate;

    fn series_for(dates: &[NaiveDate], f: impl Fn(NaiveDate, usize) -> ([f64; 3], [bool; 3])) -> FlowSeries {
        let mut slots = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for &d in dates {
            for s in 0..SLOTS_PER_DAY {
                slots.push(SlotKey::new(d, s).unwrap());
                let (v, m) = f(d, s);
                values.push(v);
                missing.push(m);
            }
        }
        FlowSeries::new("t", slots, values, missing).unwrap()
    }

    fn week_from(monday: NaiveDate, days: i64) -> Vec<NaiveDate> {
        (0..days).map(|i| monday + chrono::Duration::days(i)).collect()
    }

    #[test]
    fn keeps_five_days_of_a_full_week() {
        let monday = NaiveDate::from_ymd_opt(2016, 2, 29).unwrap();
        let s = series_for(&week_from(monday, 7), |_, _| ([1.0; 3], [false; 3]));
        let f = filter_weekdays(&s).unwrap();
        assert_eq!(f.dates().len(), 5);
        // idempotent on weekday-only input
        assert_eq!(filter_weekdays(&f).unwrap(), f);
    }

    #[test]
    fn weekend_only_is_an_error() {
        let sat = NaiveDate::from_ymd_opt(2016, 3, 5).unwrap();
        let s = series_for(&week_from(sat, 2), |_, _| ([1.0; 3], [false; 3]));
        assert!(matches!(filter_weekdays(&s), Err(Error::Data(_))));
    }

    #[test]
    fn tuesday_gap_gets_mean_of_other_tuesdays() {
        let tuesdays: Vec<_> = (0..3)
            .map(|w| NaiveDate::from_ymd_opt(2016, 3, 1).unwrap() + chrono::Duration::weeks(w))
            .collect();
        let target = tuesdays[1];
        let s = series_for(&tuesdays, |d, slot| {
            let v = if d == tuesdays[0] { 100.0 } else { 120.0 };
            let miss = d == target && slot == 16;
            ([v, 5.0, 5.0], [miss, false, false])
        });
        let out = impute_missing(&s).unwrap();
        let idx = 36 + 16;
        assert_eq!(out.value(idx, Mode::Subway), 110.0);
        assert!(!out.has_missing());
        // untouched elsewhere and idempotent
        assert_eq!(out.value(0, Mode::Subway), 100.0);
        assert_eq!(impute_missing(&out).unwrap(), out);
    }

    #[test]
    fn no_donor_is_an_error() {
        let tuesdays: Vec<_> = (0..2)
            .map(|w| NaiveDate::from_ymd_opt(2016, 3, 1).unwrap() + chrono::Duration::weeks(w))
            .collect();
        let s = series_for(&tuesdays, |_, slot| ([1.0; 3], [slot == 16, false, false]));
        match impute_missing(&s) {
            Err(Error::Imputation { slot, mode, .. }) => {
                assert_eq!(slot, 16);
                assert_eq!(mode, "subway");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
