//! Synthetic honest elections and round-percentage fraud injection.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::{Beta, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binomial;
use crate::dataset::{DatasetError, ElectionDataset, StationRecord};
use crate::metrics::target_ballot_count;
use crate::rng::{substream, Domain};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic election parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameters of an honest election.
///
/// Station sizes are log-normal around `median_registered` with log-scale
/// spread `size_dispersion`, clamped to `[min_registered, max_registered]`.
/// Each station's true turnout and leader support are Beta draws; reported
/// counts are binomial around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub station_count: usize,
    pub median_registered: f64,
    pub size_dispersion: f64,
    pub min_registered: u64,
    pub max_registered: u64,
    pub turnout_alpha: f64,
    pub turnout_beta: f64,
    pub leader_alpha: f64,
    pub leader_beta: f64,
    pub region_count: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            station_count: 10_000,
            median_registered: 1000.0,
            size_dispersion: 0.7,
            min_registered: 10,
            max_registered: 5000,
            turnout_alpha: 7.0,
            turnout_beta: 3.0,
            leader_alpha: 6.0,
            leader_beta: 4.0,
            region_count: 20,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("median_registered", self.median_registered),
            ("size_dispersion", self.size_dispersion),
            ("turnout_alpha", self.turnout_alpha),
            ("turnout_beta", self.turnout_beta),
            ("leader_alpha", self.leader_alpha),
            ("leader_beta", self.leader_beta),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("{name} must be positive, got {value}")));
            }
        }
        if self.station_count == 0 {
            return Err(SynthError::InvalidSpec("station_count must be at least 1".into()));
        }
        if self.region_count == 0 {
            return Err(SynthError::InvalidSpec("region_count must be at least 1".into()));
        }
        if self.min_registered == 0 || self.min_registered > self.max_registered {
            return Err(SynthError::InvalidSpec(format!(
                "size clamp [{}, {}] is empty or includes zero",
                self.min_registered, self.max_registered
            )));
        }
        Ok(())
    }
}

pub fn generate_honest(spec: &SynthSpec) -> Result<ElectionDataset, SynthError> {
    spec.validate()?;
    let invalid = |e: rand_distr::BetaError| SynthError::InvalidSpec(e.to_string());
    let size = LogNormal::new(spec.median_registered.ln(), spec.size_dispersion)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let turnout = Beta::new(spec.turnout_alpha, spec.turnout_beta).map_err(invalid)?;
    let leader = Beta::new(spec.leader_alpha, spec.leader_beta).map_err(invalid)?;

    let records: Vec<StationRecord> = (0..spec.station_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, Domain::SynthStation, i as u64, 0);
            let registered = (size.sample(&mut rng).round() as u64).clamp(spec.min_registered, spec.max_registered);
            let turnout_rate = turnout.sample(&mut rng);
            let ballots = binomial::sample(&mut rng, registered, turnout_rate);
            let leader_rate = leader.sample(&mut rng);
            let leader_votes = binomial::sample(&mut rng, ballots, leader_rate);
            let region = format!("Region-{:02}", i as u32 % spec.region_count + 1);
            let territory = format!("{region}/TIK-{}", (i as u32 / spec.region_count) % 10 + 1);
            StationRecord {
                region,
                territory,
                station_id: format!("PS-{:06}", i + 1),
                registered,
                ballots,
                leader_votes,
            }
        })
        .collect();
    Ok(ElectionDataset::from_records(format!("synthetic-{}", spec.seed), records)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FraudTarget {
    Turnout,
    LeaderResult,
    Both,
}

impl FraudTarget {
    pub fn name(self) -> &'static str {
        match self {
            FraudTarget::Turnout => "turnout",
            FraudTarget::LeaderResult => "leader_result",
            FraudTarget::Both => "both",
        }
    }
}

impl std::str::FromStr for FraudTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turnout" => Ok(FraudTarget::Turnout),
            "leader_result" | "leader-result" | "leader" => Ok(FraudTarget::LeaderResult),
            "both" => Ok(FraudTarget::Both),
            other => Err(format!("unknown fraud target '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetWeight {
    pub percent: u32,
    pub weight: f64,
}

/// Multiples of 5 in [60, 95] at weight 2, other integers in [50, 99] at 1.
pub fn default_target_weights() -> Vec<TargetWeight> {
    (50..=99)
        .map(|percent| TargetWeight {
            percent,
            weight: if (60..=95).contains(&percent) && percent % 5 == 0 { 2.0 } else { 1.0 },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FraudSpec {
    pub fraction: f64,
    pub target_metric: FraudTarget,
    pub target_weights: Vec<TargetWeight>,
    pub seed: u64,
}

impl Default for FraudSpec {
    fn default() -> Self {
        FraudSpec {
            fraction: 0.05,
            target_metric: FraudTarget::Turnout,
            target_weights: default_target_weights(),
            seed: 0,
        }
    }
}

impl FraudSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(SynthError::InvalidSpec(format!("fraud fraction {} outside [0, 1]", self.fraction)));
        }
        if self.target_weights.iter().any(|w| !(w.weight >= 0.0 && w.weight.is_finite()) || w.percent > 100) {
            return Err(SynthError::InvalidSpec(
                "target weights must be finite, non-negative, for percents <= 100".into(),
            ));
        }
        if !self.target_weights.iter().any(|w| w.weight > 0.0) {
            return Err(SynthError::InvalidSpec("at least one target weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Falsification {
    pub metric: FraudTarget,
    pub turnout_target: Option<u32>,
    pub leader_target: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub station_id: String,
    pub falsified: Option<Falsification>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<Label>,
}

impl GroundTruth {
    pub fn falsified_count(&self) -> usize {
        self.labels.iter().filter(|l| l.falsified.is_some()).count()
    }

    /// `station_id,label,target_metric,target_percent`; a station falsified
    /// on both metrics lists `turnout;leader` targets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("station_id,label,target_metric,target_percent\n");
        for label in &self.labels {
            match &label.falsified {
                None => writeln!(out, "{},honest,,", label.station_id),
                Some(f) => {
                    let target = match (f.turnout_target, f.leader_target) {
                        (Some(t), Some(l)) => format!("{t};{l}"),
                        (Some(t), None) | (None, Some(t)) => t.to_string(),
                        (None, None) => String::new(),
                    };
                    writeln!(out, "{},falsified,{},{}", label.station_id, f.metric.name(), target)
                }
            }
            .expect("write to String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv())
            .map_err(|source| SynthError::Io { path: path.display().to_string(), source })
    }
}

/// `round(value * num / den)` half away from zero, in exact integer arithmetic.
fn scale_rounded(value: u64, num: u64, den: u64) -> u64 {
    let v = value as u128 * num as u128;
    ((2 * v + den as u128) / (2 * den as u128)) as u64
}

/// Retargets a turnout: ballots hit the target and leader votes scale with them.
pub fn falsify_turnout(record: &mut StationRecord, target_percent: u32) {
    let new_ballots = target_ballot_count(record.registered, target_percent as f64);
    record.leader_votes = if record.ballots > 0 {
        scale_rounded(record.leader_votes, new_ballots, record.ballots).min(new_ballots)
    } else {
        0
    };
    record.ballots = new_ballots;
}

pub fn falsify_leader(record: &mut StationRecord, target_percent: u32) {
    record.leader_votes = target_ballot_count(record.ballots, target_percent as f64);
}

pub fn inject_fraud(
    dataset: &ElectionDataset,
    fraud: &FraudSpec,
) -> Result<(ElectionDataset, GroundTruth), SynthError> {
    fraud.validate()?;
    let n = dataset.len();
    let count = ((fraud.fraction * n as f64).round() as usize).min(n);
    let mut rng = substream(fraud.seed, Domain::FraudSelection, 0, 0);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let weights = WeightedIndex::new(fraud.target_weights.iter().map(|w| w.weight))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut draw_target = || fraud.target_weights[weights.sample(&mut rng)].percent;

    let mut records = dataset.records().to_vec();
    let mut labels: Vec<Label> =
        records.iter().map(|r| Label { station_id: r.station_id.clone(), falsified: None }).collect();
    for idx in chosen {
        let record = &mut records[idx];
        let (turnout_target, leader_target) = match fraud.target_metric {
            FraudTarget::Turnout => (Some(draw_target()), None),
            FraudTarget::LeaderResult => (None, Some(draw_target())),
            FraudTarget::Both => (Some(draw_target()), Some(draw_target())),
        };
        if let Some(t) = turnout_target {
            falsify_turnout(record, t);
        }
        if let Some(l) = leader_target {
            falsify_leader(record, l);
        }
        labels[idx].falsified = Some(Falsification { metric: fraud.target_metric, turnout_target, leader_target });
    }
    let falsified = ElectionDataset::from_records(dataset.election_id(), records)?;
    Ok((falsified, GroundTruth { labels }))
}
