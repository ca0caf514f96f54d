//! Station percentages, jitter, and integer-proximity classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::StationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("percentage undefined: zero denominator")]
    ZeroDenominator,
    #[error("invalid integer band: {0}")]
    InvalidBand(String),
    #[error("jitter draws must be at least 1")]
    ZeroDraws,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// ballots / registered
    Turnout,
    /// leader_votes / ballots
    LeaderResult,
    /// leader_votes / registered
    LeaderShare,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Turnout => "turnout",
            MetricKind::LeaderResult => "leader_result",
            MetricKind::LeaderShare => "leader_share",
        }
    }

    /// (numerator, denominator) of this metric for one station.
    #[inline]
    pub fn fraction(self, record: &StationRecord) -> (u64, u64) {
        match self {
            MetricKind::Turnout => (record.ballots, record.registered),
            MetricKind::LeaderResult => (record.leader_votes, record.ballots),
            MetricKind::LeaderShare => (record.leader_votes, record.registered),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turnout" => Ok(MetricKind::Turnout),
            "leader_result" | "leader-result" | "leader" => Ok(MetricKind::LeaderResult),
            "leader_share" | "leader-share" => Ok(MetricKind::LeaderShare),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

/// Uniform numerator jitter, averaged over `draws` realizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub enabled: bool,
    pub draws: u32,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec { enabled: true, draws: 100 }
    }
}

impl JitterSpec {
    pub fn disabled() -> Self {
        JitterSpec { enabled: false, draws: 1 }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.draws == 0 {
            return Err(MetricError::ZeroDraws);
        }
        Ok(())
    }

    /// Number of realizations actually taken: a disabled jitter has one.
    pub fn effective_draws(&self) -> u32 {
        if self.enabled {
            self.draws
        } else {
            1
        }
    }
}

/// Windows `[k - halfwidth, k + halfwidth]` around the integers `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerBand {
    pub halfwidth: f64,
    pub lo: u32,
    pub hi: u32,
}

impl Default for IntegerBand {
    fn default() -> Self {
        IntegerBand { halfwidth: 0.05, lo: 1, hi: 99 }
    }
}

impl IntegerBand {
    pub fn new(halfwidth: f64, lo: u32, hi: u32) -> Result<Self, MetricError> {
        let band = IntegerBand { halfwidth, lo, hi };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.halfwidth > 0.0 && self.halfwidth <= 0.5) {
            return Err(MetricError::InvalidBand(format!("halfwidth {} outside (0, 0.5]", self.halfwidth)));
        }
        if self.lo > self.hi || self.hi > 100 {
            return Err(MetricError::InvalidBand(format!("range [{}, {}] not within [0, 100]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `100 * (numerator + jitter) / denominator`.
#[inline]
pub fn percent(numerator: u64, denominator: u64, jitter: f64) -> Result<f64, MetricError> {
    if denominator == 0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(100.0 * (numerator as f64 + jitter) / denominator as f64)
}

/// The integer `k` in the band whose window contains `p`, if any.
#[inline]
pub fn is_integer_hit(p: f64, band: &IntegerBand) -> Option<u32> {
    if !p.is_finite() {
        return None;
    }
    let k = p.round().clamp(band.lo as f64, band.hi as f64);
    if (p - k).abs() <= band.halfwidth {
        Some(k as u32)
    } else {
        None
    }
}

/// Ballots needed for `registered` voters to show `target_percent` turnout,
/// rounded half away from zero.
pub fn target_ballot_count(registered: u64, target_percent: f64) -> u64 {
    let exact = registered as f64 * target_percent / 100.0;
    (exact.round().max(0.0) as u64).min(registered)
}

#[inline]
pub fn station_percent(record: &StationRecord, metric: MetricKind, jitter: f64) -> Result<f64, MetricError> {
    let (num, den) = metric.fraction(record);
    percent(num, den, jitter)
}

/// Probability, over a uniform jitter `U(-0.5, 0.5)` on the numerator, that
/// `numerator / denominator` lands in the window of each band integer.
///
/// `visit(k, mass)` is called once per integer with positive mass. Returns
/// the total mass, which is the hit probability. With `jittered = false`
/// the result is the 0/1 indicator of [`is_integer_hit`].
#[inline]
pub fn hit_mass<F: FnMut(u32, f64)>(
    numerator: u64,
    denominator: u64,
    band: &IntegerBand,
    jittered: bool,
    mut visit: F,
) -> f64 {
    if denominator == 0 {
        return 0.0;
    }
    let den = denominator as f64;
    if !jittered {
        let p = 100.0 * numerator as f64 / den;
        return match is_integer_hit(p, band) {
            Some(k) => {
                visit(k, 1.0);
                1.0
            }
            None => 0.0,
        };
    }
    let width = 100.0 / den;
    let a = 100.0 * (numerator as f64 - 0.5) / den;
    let b = 100.0 * (numerator as f64 + 0.5) / den;
    let hw = band.halfwidth;
    let k_lo = ((a - hw).ceil().max(band.lo as f64)) as i64;
    let k_hi = ((b + hw).floor().min(band.hi as f64)) as i64;
    let mut total = 0.0;
    for k in k_lo..=k_hi {
        let kf = k as f64;
        let overlap = (b.min(kf + hw) - a.max(kf - hw)).max(0.0);
        if overlap > 0.0 {
            let mass = overlap / width;
            visit(k as u32, mass);
            total += mass;
        }
    }
    total
}
