//! Daily and seasonal load multipliers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval a multiplier is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRange {
    pub low: f64,
    pub high: f64,
}

impl MultiplierRange {
    pub const fn new(low: f64, high: f64) -> Self {
        MultiplierRange { low, high }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.gen_range(self.low..=self.high)
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.low > 0.0) || !(self.low <= self.high) || !self.high.is_finite() {
            return Err(Error::Config(format!(
                "{what}: multiplier range [{}, {}] must satisfy 0 < low <= high",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Hours `start..=end` on a 24-hour clock; `start > end` wraps past midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBand {
    pub name: String,
    pub start: u8,
    pub end: u8,
    pub range: MultiplierRange,
}

impl HourBand {
    pub fn covers(&self, hour: u8) -> bool {
        if self.start <= self.end {
            (self.start..=self.end).contains(&hour)
        } else {
            hour >= self.start || hour <= self.end
        }
    }
}

pub fn default_daily_profile() -> Vec<HourBand> {
    let band = |name: &str, start, end, low, high| HourBand {
        name: name.into(),
        start,
        end,
        range: MultiplierRange::new(low, high),
    };
    vec![
        band("morning_ramp_up", 6, 9, 0.60, 0.70),
        band("midday_peak", 10, 15, 1.10, 1.20),
        band("evening_peak", 17, 21, 1.10, 1.20),
        band("nighttime_drop", 23, 5, 0.60, 0.70),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Winter,
    Summer,
    SpringFall,
}

impl Season {
    pub const ALL: [Season; 3] = [Season::Winter, Season::Summer, Season::SpringFall];

    pub fn as_str(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
            Season::SpringFall => "spring_fall",
        }
    }
}

impl std::str::FromStr for Season {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '/'], "_").as_str() {
            "winter" => Ok(Season::Winter),
            "summer" => Ok(Season::Summer),
            "spring_fall" | "springfall" | "spring" | "fall" => Ok(Season::SpringFall),
            other => Err(format!("unknown season '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeasonalProfile {
    pub winter: MultiplierRange,
    pub summer: MultiplierRange,
    pub spring_fall: MultiplierRange,
}

impl Default for SeasonalProfile {
    fn default() -> Self {
        SeasonalProfile {
            winter: MultiplierRange::new(1.2, 1.4),
            summer: MultiplierRange::new(1.1, 1.3),
            spring_fall: MultiplierRange::new(0.9, 1.1),
        }
    }
}

impl SeasonalProfile {
    pub fn range(&self, season: Season) -> MultiplierRange {
        match season {
            Season::Winter => self.winter,
            Season::Summer => self.summer,
            Season::SpringFall => self.spring_fall,
        }
    }
}

/// Load-shaping parameters for scenario generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadShapeConfig {
    /// Per-bus perturbation `u ~ U(-f, f)` applied on top of the shared
    /// daily/seasonal multiplier.
    pub variation_fraction: f64,
    pub daily_profile: Vec<HourBand>,
    pub seasonal_profile: SeasonalProfile,
    pub seed: u64,
}

impl Default for LoadShapeConfig {
    fn default() -> Self {
        LoadShapeConfig {
            variation_fraction: 0.40,
            daily_profile: default_daily_profile(),
            seasonal_profile: SeasonalProfile::default(),
            seed: 0,
        }
    }
}

impl LoadShapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.variation_fraction) {
            return Err(Error::Config(format!(
                "variation_fraction must lie in [0, 1), got {}",
                self.variation_fraction
            )));
        }
        if self.daily_profile.is_empty() {
            return Err(Error::Config("daily profile has no bands".into()));
        }
        for band in &self.daily_profile {
            if band.start > 23 || band.end > 23 {
                return Err(Error::Config(format!("band '{}' has an hour past 23", band.name)));
            }
            band.range.validate(&band.name)?;
        }
        for hour in 0..24u8 {
            if self.daily_profile.iter().filter(|b| b.covers(hour)).count() > 1 {
                return Err(Error::Config(format!("hour {hour} is covered by two bands")));
            }
        }
        for season in Season::ALL {
            self.seasonal_profile.range(season).validate(season.as_str())?;
        }
        Ok(())
    }

    fn band_at(&self, hour: u8) -> Option<&HourBand> {
        self.daily_profile.iter().find(|b| b.covers(hour))
    }

    /// Multiplier for an hour of day. Covered hours draw uniformly from
    /// their band; an uncovered hour takes the linear interpolation between
    /// the midpoints of the nearest bands before and after it.
    pub fn daily_multiplier<R: Rng + ?Sized>(&self, hour: u8, rng: &mut R) -> Result<f64> {
        if hour > 23 {
            return Err(Error::Config(format!("hour must be 0-23, got {hour}")));
        }
        if let Some(band) = self.band_at(hour) {
            return Ok(band.range.sample(rng));
        }
        self.interpolate(hour)
            .ok_or_else(|| Error::Config("daily profile has no bands".into()))
    }

    fn interpolate(&self, hour: u8) -> Option<f64> {
        let nearest = |step: fn(u8, u8) -> u8| {
            (1..24u8).find_map(|d| self.band_at(step(hour, d)).map(|b| (d, b.range.midpoint())))
        };
        let (db, mb) = nearest(|h, d| (h + 24 - d) % 24)?;
        let (da, ma) = nearest(|h, d| (h + d) % 24)?;
        let w = f64::from(db) / f64::from(db + da);
        Some(mb + (ma - mb) * w)
    }

    pub fn seasonal_multiplier<R: Rng + ?Sized>(&self, season: Season, rng: &mut R) -> f64 {
        self.seasonal_profile.range(season).sample(rng)
    }

    /// Smallest and largest value `daily_multiplier` can return for `hour`.
    pub fn daily_bounds(&self, hour: u8) -> Option<MultiplierRange> {
        if let Some(b) = self.band_at(hour) {
            return Some(b.range);
        }
        self.interpolate(hour).map(|m| MultiplierRange::new(m, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn band_hours() {
        let cfg = LoadShapeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let noon = cfg.daily_multiplier(12, &mut rng).unwrap();
            assert!((1.10..=1.20).contains(&noon));
            let night = cfg.daily_multiplier(3, &mut rng).unwrap();
            assert!((0.60..=0.70).contains(&night));
            let midnight = cfg.daily_multiplier(0, &mut rng).unwrap();
            assert!((0.60..=0.70).contains(&midnight));
        }
    }

    #[test]
    fn uncovered_hours_interpolate() {
        let cfg = LoadShapeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h16 = cfg.daily_multiplier(16, &mut rng).unwrap();
        assert!((h16 - 1.15).abs() < 1e-12);
        let h22 = cfg.daily_multiplier(22, &mut rng).unwrap();
        assert!((h22 - 0.9).abs() < 1e-12);
        assert!(cfg.daily_multiplier(24, &mut rng).is_err());
    }

    #[test]
    fn seasons() {
        let cfg = LoadShapeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!((1.2..=1.4).contains(&cfg.seasonal_multiplier(Season::Winter, &mut rng)));
            assert!((1.1..=1.3).contains(&cfg.seasonal_multiplier(Season::Summer, &mut rng)));
            assert!((0.9..=1.1).contains(&cfg.seasonal_multiplier(Season::SpringFall, &mut rng)));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = LoadShapeConfig {
            variation_fraction: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.variation_fraction = 0.4;
        cfg.seasonal_profile.summer = MultiplierRange::new(1.3, 1.1);
        assert!(cfg.validate().is_err());
        cfg.seasonal_profile.summer = MultiplierRange::new(0.0, 1.1);
        assert!(cfg.validate().is_err());
        let mut overlapping = LoadShapeConfig::default();
        overlapping.daily_profile[0].end = 11;
        assert!(overlapping.validate().is_err());
    }
}
