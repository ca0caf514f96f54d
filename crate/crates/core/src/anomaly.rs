//! Integer-percentage anomaly statistic against a binomial Monte Carlo null.
//!
//! For every election three counts are formed: stations whose turnout sits
//! in an integer window, stations whose leader's result does, and stations
//! where either does. The observed counts are compared with counts from
//! datasets re-simulated station by station under
//! `ballots* ~ Bin(registered, ballots / registered)` and
//! `leader* ~ Bin(ballots*, leader_votes / ballots)`.
//!
//! Observed counts average `J` jitter realizations. A null iteration with
//! `J = 1` takes one fresh jitter draw per metric; with `J > 1` it takes the
//! exact expectation over the jitter instead, so both sides of the
//! comparison are jitter-averaged statistics with matching spread.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binomial::{self, Binomial};
use crate::dataset::{apply_filter, ElectionDataset, ExclusionTally, FilterSpec, StationRecord};
use crate::metrics::{hit_mass, is_integer_hit, percent, IntegerBand, JitterSpec, MetricKind};
use crate::report::canonical_json;
use crate::rng::{substream, Domain};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("invalid anomaly configuration: {0}")]
    InvalidConfig(String),
    #[error("election '{0}' has no stations left after filtering")]
    EmptyDataset(String),
    #[error("election '{election_id}': {source}")]
    InElection {
        election_id: String,
        #[source]
        source: Box<AnomalyError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub iterations: u32,
    pub seed: u64,
    pub band: IntegerBand,
    pub jitter: JitterSpec,
    pub filter: FilterSpec,
    pub percentile: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            iterations: 10_000,
            seed: 0,
            band: IntegerBand::default(),
            jitter: JitterSpec::default(),
            filter: FilterSpec::default(),
            percentile: 99.9,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if self.iterations < 100 {
            return Err(AnomalyError::InvalidConfig(format!("iterations {} < 100", self.iterations)));
        }
        if !(self.percentile > 50.0 && self.percentile < 100.0) {
            return Err(AnomalyError::InvalidConfig(format!("percentile {} outside (50, 100)", self.percentile)));
        }
        self.band.validate().map_err(|e| AnomalyError::InvalidConfig(e.to_string()))?;
        self.jitter.validate().map_err(|e| AnomalyError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn null_jitter(&self) -> NullJitter {
        match (self.jitter.enabled, self.jitter.draws) {
            (false, _) => NullJitter::None,
            (true, 1) => NullJitter::SingleDraw,
            (true, _) => NullJitter::Expectation,
        }
    }
}

/// How a null iteration treats the jitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullJitter {
    None,
    SingleDraw,
    Expectation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerCount {
    pub integer: u32,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAnomaly {
    pub observed: f64,
    pub expected: f64,
    pub excess: f64,
    /// Upper percentile of the centered null counts (count - expected).
    pub threshold: f64,
    /// Mirror-image lower percentile, for display only.
    pub lower_band: f64,
    pub p_value: f64,
    pub per_integer: Vec<IntegerCount>,
}

impl MetricAnomaly {
    pub fn significant(&self) -> bool {
        self.excess > self.threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub election_id: String,
    pub dataset_digest: String,
    pub config: AnomalyConfig,
    pub null_jitter: NullJitter,
    pub total_stations: u64,
    pub included_stations: u64,
    pub exclusions: ExclusionTally,
    pub turnout: MetricAnomaly,
    pub leader: MetricAnomaly,
    pub either: MetricAnomaly,
}

impl AnomalyReport {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }
}

/// Hits of one counting pass. `per_integer_*` is indexed by `k - band.lo`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegerCounts<T> {
    pub turnout: T,
    pub leader: T,
    pub either: T,
    pub per_integer_turnout: Vec<T>,
    pub per_integer_leader: Vec<T>,
    pub per_integer_either: Vec<T>,
}

impl<T: Copy + Default + std::ops::AddAssign> IntegerCounts<T> {
    fn zeros(band: &IntegerBand) -> Self {
        IntegerCounts {
            turnout: T::default(),
            leader: T::default(),
            either: T::default(),
            per_integer_turnout: vec![T::default(); band.len()],
            per_integer_leader: vec![T::default(); band.len()],
            per_integer_either: vec![T::default(); band.len()],
        }
    }

    fn accumulate(&mut self, other: &Self) {
        self.turnout += other.turnout;
        self.leader += other.leader;
        self.either += other.either;
        for (a, b) in [
            (&mut self.per_integer_turnout, &other.per_integer_turnout),
            (&mut self.per_integer_leader, &other.per_integer_leader),
            (&mut self.per_integer_either, &other.per_integer_either),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

/// Counts integer-hit stations on the reported counts.
///
/// `jitter(i)` supplies the (turnout, leader) numerator offsets for the
/// `i`-th record; return zeros for unjittered counting. Stations with zero
/// ballots contribute to turnout only. A station that hits on both metrics
/// is attributed to its turnout integer in `per_integer_either`.
pub fn count_integer_stations<F>(records: &[&StationRecord], band: &IntegerBand, mut jitter: F) -> IntegerCounts<u64>
where
    F: FnMut(usize) -> (f64, f64),
{
    let mut counts = IntegerCounts::zeros(band);
    for (i, record) in records.iter().enumerate() {
        let (u_turnout, u_leader) = jitter(i);
        let turnout_hit =
            percent(record.ballots, record.registered, u_turnout).ok().and_then(|p| is_integer_hit(p, band));
        let leader_hit =
            percent(record.leader_votes, record.ballots, u_leader).ok().and_then(|p| is_integer_hit(p, band));
        if let Some(k) = turnout_hit {
            counts.turnout += 1;
            counts.per_integer_turnout[(k - band.lo) as usize] += 1;
        }
        if let Some(k) = leader_hit {
            counts.leader += 1;
            counts.per_integer_leader[(k - band.lo) as usize] += 1;
        }
        if let Some(k) = turnout_hit.or(leader_hit) {
            counts.either += 1;
            counts.per_integer_either[(k - band.lo) as usize] += 1;
        }
    }
    counts
}

/// One draw of the null model for a station: `(ballots*, leader*)`.
pub fn simulate_station<R: Rng + ?Sized>(record: &StationRecord, rng: &mut R) -> (u64, u64) {
    let rates = NullRates::of(record);
    rates.simulate(rng)
}

/// Plug-in binomial rates of one station.
#[derive(Clone, Copy, Debug)]
struct NullRates {
    registered: u64,
    turnout: Binomial,
    leader: f64,
}

impl NullRates {
    fn of(record: &StationRecord) -> Self {
        let turnout = if record.registered > 0 { record.ballots as f64 / record.registered as f64 } else { 0.0 };
        let leader = if record.ballots > 0 { record.leader_votes as f64 / record.ballots as f64 } else { 0.0 };
        NullRates { registered: record.registered, turnout: Binomial::new(record.registered, turnout), leader }
    }

    #[inline]
    fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let ballots = self.turnout.sample(rng);
        let leader = binomial::sample(rng, ballots, self.leader);
        debug_assert!(leader <= ballots && ballots <= self.registered);
        (ballots, leader)
    }
}

#[inline]
fn uniform_jitter<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>() - 0.5
}

fn observed_counts(records: &[&StationRecord], config: &AnomalyConfig) -> IntegerCounts<f64> {
    let band = config.band;
    let draws = config.jitter.effective_draws();
    let seed = config.seed;
    let enabled = config.jitter.enabled;
    let per_draw: Vec<IntegerCounts<u64>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            count_integer_stations(records, &band, |i| {
                if enabled {
                    let mut rng = substream(seed, Domain::ObservedJitter, d as u64, i as u64);
                    (uniform_jitter(&mut rng), uniform_jitter(&mut rng))
                } else {
                    (0.0, 0.0)
                }
            })
        })
        .collect();
    let mut total = IntegerCounts::<u64>::zeros(&band);
    for c in &per_draw {
        total.accumulate(c);
    }
    let scale = |x: u64| x as f64 / draws as f64;
    IntegerCounts {
        turnout: scale(total.turnout),
        leader: scale(total.leader),
        either: scale(total.either),
        per_integer_turnout: total.per_integer_turnout.into_iter().map(scale).collect(),
        per_integer_leader: total.per_integer_leader.into_iter().map(scale).collect(),
        per_integer_either: total.per_integer_either.into_iter().map(scale).collect(),
    }
}

/// Statistic of a single null iteration.
fn null_iteration(
    rates: &[NullRates],
    config: &AnomalyConfig,
    iteration: u64,
    per_integer: &mut IntegerCounts<f64>,
) -> [f64; 3] {
    let band = &config.band;
    let lo = band.lo;
    let mode = config.null_jitter();
    let (mut t_sum, mut l_sum, mut e_sum) = (0.0, 0.0, 0.0);
    let mut leader_pieces: Vec<(u32, f64)> = Vec::with_capacity(8);

    for (i, station) in rates.iter().enumerate() {
        let mut rng = substream(config.seed, Domain::NullIteration, iteration, i as u64);
        let (ballots, leader) = station.simulate(&mut rng);
        match mode {
            NullJitter::SingleDraw => {
                let ut = uniform_jitter(&mut rng);
                let ul = uniform_jitter(&mut rng);
                let t = percent(ballots, station.registered, ut).ok().and_then(|p| is_integer_hit(p, band));
                let l = percent(leader, ballots, ul).ok().and_then(|p| is_integer_hit(p, band));
                if let Some(k) = t {
                    t_sum += 1.0;
                    per_integer.per_integer_turnout[(k - lo) as usize] += 1.0;
                }
                if let Some(k) = l {
                    l_sum += 1.0;
                    per_integer.per_integer_leader[(k - lo) as usize] += 1.0;
                }
                if let Some(k) = t.or(l) {
                    e_sum += 1.0;
                    per_integer.per_integer_either[(k - lo) as usize] += 1.0;
                }
            }
            NullJitter::None | NullJitter::Expectation => {
                let jittered = mode == NullJitter::Expectation;
                let ht = hit_mass(ballots, station.registered, band, jittered, |k, m| {
                    let idx = (k - lo) as usize;
                    per_integer.per_integer_turnout[idx] += m;
                    per_integer.per_integer_either[idx] += m;
                });
                leader_pieces.clear();
                let hl = hit_mass(leader, ballots, band, jittered, |k, m| leader_pieces.push((k, m)));
                let miss_turnout = 1.0 - ht;
                for &(k, m) in &leader_pieces {
                    let idx = (k - lo) as usize;
                    per_integer.per_integer_leader[idx] += m;
                    per_integer.per_integer_either[idx] += m * miss_turnout;
                }
                t_sum += ht;
                l_sum += hl;
                e_sum += ht + hl * miss_turnout;
            }
        }
    }
    [t_sum, l_sum, e_sum]
}

/// Null statistics for every iteration, plus per-integer sums.
///
/// Iterations are processed in fixed-size blocks whose partial sums are
/// combined in block order, so the floating-point result does not depend on
/// the number of worker threads.
fn null_distribution(rates: &[NullRates], config: &AnomalyConfig) -> (Vec<[f64; 3]>, IntegerCounts<f64>) {
    const BLOCK: u32 = 32;
    let blocks: Vec<(Vec<[f64; 3]>, IntegerCounts<f64>)> = (0..config.iterations.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(config.iterations);
            let mut per_integer = IntegerCounts::<f64>::zeros(&config.band);
            let stats = (start..end).map(|it| null_iteration(rates, config, it as u64, &mut per_integer)).collect();
            (stats, per_integer)
        })
        .collect();
    let mut stats = Vec::with_capacity(config.iterations as usize);
    let mut per_integer = IntegerCounts::<f64>::zeros(&config.band);
    for (s, p) in blocks {
        stats.extend(s);
        per_integer.accumulate(&p);
    }
    (stats, per_integer)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn summarize(
    observed: f64,
    null: &[f64],
    observed_k: &[f64],
    expected_k_sum: &[f64],
    config: &AnomalyConfig,
) -> MetricAnomaly {
    let iterations = null.len() as f64;
    let expected = null.iter().sum::<f64>() / iterations;
    let mut centered: Vec<f64> = null.iter().map(|c| c - expected).collect();
    centered.sort_by(f64::total_cmp);
    let at_least = null.iter().filter(|&&c| c >= observed).count();
    let per_integer = observed_k
        .iter()
        .zip(expected_k_sum)
        .enumerate()
        .map(|(i, (&o, &e))| IntegerCount { integer: config.band.lo + i as u32, observed: o, expected: e / iterations })
        .collect();
    MetricAnomaly {
        observed,
        expected,
        excess: observed - expected,
        threshold: percentile(&centered, config.percentile),
        lower_band: percentile(&centered, 100.0 - config.percentile),
        p_value: (1.0 + at_least as f64) / (iterations + 1.0),
        per_integer,
    }
}

pub fn run_anomaly(dataset: &ElectionDataset, config: &AnomalyConfig) -> Result<AnomalyReport, AnomalyError> {
    config.validate()?;
    let filtered = apply_filter(dataset, &config.filter, MetricKind::Turnout);
    if filtered.included.is_empty() {
        return Err(AnomalyError::EmptyDataset(dataset.election_id().to_owned()));
    }
    let records = &filtered.included;
    let observed = observed_counts(records, config);
    let rates: Vec<NullRates> = records.iter().map(|r| NullRates::of(r)).collect();
    let (null, expected_k) = null_distribution(&rates, config);

    let column = |j: usize| null.iter().map(|s| s[j]).collect::<Vec<f64>>();
    Ok(AnomalyReport {
        election_id: dataset.election_id().to_owned(),
        dataset_digest: dataset.source_digest().to_owned(),
        config: *config,
        null_jitter: config.null_jitter(),
        total_stations: dataset.len() as u64,
        included_stations: records.len() as u64,
        exclusions: filtered.tally,
        turnout: summarize(
            observed.turnout,
            &column(0),
            &observed.per_integer_turnout,
            &expected_k.per_integer_turnout,
            config,
        ),
        leader: summarize(
            observed.leader,
            &column(1),
            &observed.per_integer_leader,
            &expected_k.per_integer_leader,
            config,
        ),
        either: summarize(
            observed.either,
            &column(2),
            &observed.per_integer_either,
            &expected_k.per_integer_either,
            config,
        ),
    })
}

/// One row per election: the three excess curves and their thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub election_id: String,
    pub turnout_excess: f64,
    pub turnout_threshold: f64,
    pub leader_excess: f64,
    pub leader_threshold: f64,
    pub either_excess: f64,
    pub either_threshold: f64,
    pub either_p_value: f64,
}

impl From<&AnomalyReport> for SeriesRow {
    fn from(r: &AnomalyReport) -> Self {
        SeriesRow {
            election_id: r.election_id.clone(),
            turnout_excess: r.turnout.excess,
            turnout_threshold: r.turnout.threshold,
            leader_excess: r.leader.excess,
            leader_threshold: r.leader.threshold,
            either_excess: r.either.excess,
            either_threshold: r.either.threshold,
            either_p_value: r.either.p_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySeries {
    pub reports: Vec<AnomalyReport>,
    pub table: Vec<SeriesRow>,
}

impl AnomalySeries {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "election_id,turnout_excess,turnout_threshold,leader_excess,leader_threshold,either_excess,either_threshold,either_p_value\n",
        );
        for r in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.election_id,
                r.turnout_excess,
                r.turnout_threshold,
                r.leader_excess,
                r.leader_threshold,
                r.either_excess,
                r.either_threshold,
                r.either_p_value
            ));
        }
        out
    }
}

pub fn run_series(datasets: &[ElectionDataset], config: &AnomalyConfig) -> Result<AnomalySeries, AnomalyError> {
    if datasets.is_empty() {
        return Err(AnomalyError::InvalidConfig("series needs at least one dataset".into()));
    }
    let reports = datasets
        .iter()
        .map(|d| {
            run_anomaly(d, config)
                .map_err(|e| AnomalyError::InElection { election_id: d.election_id().to_owned(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = reports.iter().map(SeriesRow::from).collect();
    Ok(AnomalySeries { reports, table })
}
