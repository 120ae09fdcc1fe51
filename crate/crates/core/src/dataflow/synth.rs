//! Seeded generator for double-peaked weekday inflow.
//!
//! Each mode is `amplitude · (bump(morning) + bump(evening)) + base`, with
//! Gaussian bumps of a common width, plus Gaussian noise whose standard
//! deviation is `noise · amplitude`. Counts are rounded and clamped at zero.

use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataflow::series::{FlowSeries, Mode, SlotKey, SLOTS_PER_DAY};
use crate::error::{Error, Result};

/// Shape of one mode's daily profile. Centers are slot indices (may be
/// fractional); width is the bump standard deviation in slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub amplitude: f64,
    pub morning: f64,
    pub evening: f64,
    pub width: f64,
    pub base: f64,
}

impl ModeProfile {
    /// Noiseless expected count at `slot`.
    pub fn mean_at(&self, slot: usize) -> f64 {
        let bump = |c: f64| {
            let z = (slot as f64 - c) / self.width;
            (-0.5 * z * z).exp()
        };
        self.amplitude * (bump(self.morning) + bump(self.evening)) + self.base
    }

    fn validate(&self, mode: Mode) -> Result<()> {
        if !(self.amplitude > 0.0) || !(self.width > 0.0) {
            return Err(Error::Config(format!(
                "{mode} amplitude and width must be positive (got {} and {})",
                self.amplitude, self.width
            )));
        }
        if !(self.base >= 0.0) || !self.morning.is_finite() || !self.evening.is_finite() {
            return Err(Error::Config(format!("{mode} profile has invalid base or centers")));
        }
        Ok(())
    }
}

fn default_region() -> String {
    "hub".into()
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 2, 29).expect("valid date")
}

fn default_weekdays() -> usize {
    25
}

fn default_noise() -> f64 {
    0.05
}

fn default_subway() -> ModeProfile {
    ModeProfile {
        amplitude: 1800.0,
        morning: 6.0,
        evening: 25.0,
        width: 2.0,
        base: 200.0,
    }
}

fn default_bus() -> ModeProfile {
    ModeProfile {
        amplitude: 700.0,
        morning: 6.0,
        evening: 25.0,
        width: 2.0,
        base: 100.0,
    }
}

/// Generator settings. Every field has a default (the traffic-hub profile),
/// so an empty TOML document is valid.
///
/// ```toml
/// region = "hub"
/// start_date = "2016-02-29"
/// weekdays = 25
/// noise = 0.05
///
/// [subway]
/// amplitude = 1800.0
/// morning = 6.0
/// evening = 25.0
/// width = 2.0
/// base = 200.0
/// ```
///
/// When `[taxi]` is omitted it follows the subway peaks one slot later
/// with 1.5× the width, amplitude 900 and base 150.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_region")]
    pub region: String,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    /// Number of Monday–Friday days to generate.
    #[serde(default = "default_weekdays")]
    pub weekdays: usize,
    /// Noise standard deviation as a fraction of each mode's amplitude.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_subway")]
    pub subway: ModeProfile,
    #[serde(default)]
    pub taxi: Option<ModeProfile>,
    #[serde(default = "default_bus")]
    pub bus: ModeProfile,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            region: default_region(),
            start_date: default_start(),
            weekdays: default_weekdays(),
            noise: default_noise(),
            subway: default_subway(),
            taxi: None,
            bus: default_bus(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Taxi profile, derived from the subway profile when not given.
    pub fn taxi_profile(&self) -> ModeProfile {
        self.taxi.unwrap_or(ModeProfile {
            amplitude: 900.0,
            morning: self.subway.morning + 1.0,
            evening: self.subway.evening + 1.0,
            width: self.subway.width * 1.5,
            base: 150.0,
        })
    }

    pub fn profile(&self, mode: Mode) -> ModeProfile {
        match mode {
            Mode::Subway => self.subway,
            Mode::Taxi => self.taxi_profile(),
            Mode::Bus => self.bus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weekdays == 0 {
            return Err(Error::Config("weekdays must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        for m in Mode::ALL {
            self.profile(m).validate(m)?;
        }
        Ok(())
    }

    /// The generated dates: the first `weekdays` Monday–Friday dates on or
    /// after `start_date`.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.weekdays);
        let mut d = self.start_date;
        while out.len() < self.weekdays {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d = d.succ_opt().expect("date in range");
        }
        out
    }
}

/// Generates a complete weekday series. Deterministic for a given seed.
pub fn synthesize(config: &SynthConfig, seed: u64) -> Result<FlowSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = Mode::ALL.map(|m| config.profile(m));
    let noises = profiles.map(|p| {
        Normal::new(0.0, config.noise * p.amplitude).expect("validated non-negative std")
    });
    let dates = config.dates();
    let mut slots = Vec::with_capacity(dates.len() * SLOTS_PER_DAY);
    let mut values = Vec::with_capacity(slots.capacity());
    for date in dates {
        for s in 0..SLOTS_PER_DAY {
            slots.push(SlotKey::new(date, s)?);
            let mut v = [0.0; 3];
            for m in 0..3 {
                let mut x = profiles[m].mean_at(s);
                if config.noise > 0.0 {
                    x += noises[m].sample(&mut rng);
                }
                v[m] = x.round().max(0.0);
            }
            values.push(v);
        }
    }
    FlowSeries::complete(config.region.clone(), slots, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(SynthConfig::from_toml("").unwrap(), SynthConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SynthConfig {
            noise: 0.1,
            ..SynthConfig::default()
        };
        assert_eq!(SynthConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(SynthConfig::from_toml("[subway]\namplitude = 0.0\nmorning = 6.0\nevening = 25.0\nwidth = 2.0\nbase = 1.0\n").is_err());
        assert!(SynthConfig::from_toml("noise = -1.0").is_err());
        assert!(SynthConfig::from_toml("unknown = 1").is_err());
        assert!(SynthConfig::from_toml("weekdays = 0").is_err());
    }

    #[test]
    fn weekend_start_rolls_forward() {
        let cfg = SynthConfig {
            start_date: NaiveDate::from_ymd_opt(2016, 3, 5).unwrap(),
            weekdays: 6,
            ..SynthConfig::default()
        };
        let dates = cfg.dates();
        assert_eq!(dates[0].weekday(), Weekday::Mon);
        assert_eq!(dates.len(), 6);
        assert!(dates.iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
    }

    #[test]
    fn noiseless_peaks_sit_at_centers() {
        let cfg = SynthConfig {
            noise: 0.0,
            weekdays: 1,
            ..SynthConfig::default()
        };
        let s = synthesize(&cfg, 0).unwrap();
        for m in Mode::ALL {
            let p = cfg.profile(m);
            let argmax = (0..36)
                .max_by(|&a, &b| s.value(a, m).partial_cmp(&s.value(b, m)).unwrap())
                .unwrap();
            assert!(argmax as f64 == p.morning || argmax as f64 == p.evening, "{m}: {argmax}");
        }
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = SynthConfig::default();
        assert_eq!(synthesize(&cfg, 9).unwrap(), synthesize(&cfg, 9).unwrap());
        assert_ne!(synthesize(&cfg, 9).unwrap(), synthesize(&cfg, 10).unwrap());
    }
}
