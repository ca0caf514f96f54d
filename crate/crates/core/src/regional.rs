//! Regional decomposition of histogram peaks and round leader-share clusters.
//!
//! Both analyses use exact, jitter-free percentages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ElectionDataset, StationRecord};
use crate::metrics::{percent, MetricKind};
use crate::report::canonical_json;

// Absorbs representation error when a percentage sits exactly on a window edge.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RegionalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Region,
    Territory,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "region" => Ok(Grouping::Region),
            "territory" => Ok(Grouping::Territory),
            other => Err(format!("unknown grouping '{other}' (expected region or territory)")),
        }
    }
}

/// Territory labels are only unique within a region, so territory groups
/// carry both.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupLabel {
    pub region: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub territory: Option<String>,
}

impl GroupLabel {
    fn of(record: &StationRecord, grouping: Grouping) -> Self {
        GroupLabel {
            region: record.region.clone(),
            territory: match grouping {
                Grouping::Region => None,
                Grouping::Territory => Some(record.territory.clone()),
            },
        }
    }
}

impl std::fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.territory {
            Some(t) => write!(f, "{} / {}", self.region, t),
            None => f.write_str(&self.region),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    #[serde(flatten)]
    pub label: GroupLabel,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakAttribution {
    pub metric: MetricKind,
    pub grouping: Grouping,
    pub bin_center: f64,
    pub halfwidth: f64,
    pub total_in_bin: u64,
    /// Largest group first; ties by label.
    pub per_group: Vec<GroupCount>,
    pub top_group_share: f64,
}

impl PeakAttribution {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }
}

/// Splits the stations whose exact `metric` percentage lies within
/// `bin_center ± halfwidth` by region or territory.
pub fn attribute_bin(
    dataset: &ElectionDataset,
    metric: MetricKind,
    bin_center: f64,
    halfwidth: f64,
    grouping: Grouping,
) -> Result<PeakAttribution, RegionalError> {
    if !(0.0..=100.0).contains(&bin_center) {
        return Err(RegionalError::InvalidInput(format!("bin center {bin_center} outside [0, 100]")));
    }
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(RegionalError::InvalidInput(format!("halfwidth {halfwidth} must be positive")));
    }
    let mut groups: BTreeMap<GroupLabel, u64> = BTreeMap::new();
    for record in dataset.records() {
        let (num, den) = metric.fraction(record);
        let Ok(p) = percent(num, den, 0.0) else { continue };
        if (p - bin_center).abs() <= halfwidth + EDGE_SLACK {
            *groups.entry(GroupLabel::of(record, grouping)).or_default() += 1;
        }
    }
    let total_in_bin: u64 = groups.values().sum();
    let mut per_group: Vec<GroupCount> = groups.into_iter().map(|(label, count)| GroupCount { label, count }).collect();
    per_group.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    let top_group_share = match per_group.first() {
        Some(top) => top.count as f64 / total_in_bin as f64,
        None => 0.0,
    };
    Ok(PeakAttribution { metric, grouping, bin_center, halfwidth, total_in_bin, per_group, top_group_share })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductScanSpec {
    pub grouping: Grouping,
    pub round_step: f64,
    pub tolerance: f64,
    pub min_cluster: u64,
    /// Turnout within this distance of an integer disqualifies a station.
    pub integer_halfwidth: f64,
}

impl Default for ProductScanSpec {
    fn default() -> Self {
        ProductScanSpec {
            grouping: Grouping::Region,
            round_step: 0.5,
            tolerance: 0.05,
            min_cluster: 20,
            integer_halfwidth: 0.05,
        }
    }
}

impl ProductScanSpec {
    pub fn validate(&self) -> Result<(), RegionalError> {
        if !(self.round_step > 0.0 && self.round_step.is_finite()) {
            return Err(RegionalError::InvalidInput(format!("round step {} must be positive", self.round_step)));
        }
        if !(self.tolerance >= 0.0 && self.tolerance < self.round_step / 2.0) {
            return Err(RegionalError::InvalidInput(format!(
                "tolerance {} must lie in [0, round_step / 2)",
                self.tolerance
            )));
        }
        if !(0.0..0.5).contains(&self.integer_halfwidth) {
            return Err(RegionalError::InvalidInput(format!(
                "integer halfwidth {} outside [0, 0.5)",
                self.integer_halfwidth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundProductHit {
    #[serde(flatten)]
    pub label: GroupLabel,
    pub target: f64,
    pub station_count: u64,
    pub mean_turnout: f64,
    pub mean_leader_result: f64,
    pub mean_leader_share: f64,
    /// Distance of the mean leader share from `target`.
    pub distance: f64,
    pub station_ids: Vec<String>,
}

struct Member<'a> {
    record: &'a StationRecord,
    turnout: f64,
    leader_result: f64,
    leader_share: f64,
}

/// Groups in which at least `min_cluster` stations have a leader share
/// (leader votes over registered voters) within `tolerance` of the same
/// nonzero multiple of `round_step`, counting only stations whose turnout is
/// not itself near an integer. Largest clusters first.
pub fn round_product_scan(
    dataset: &ElectionDataset,
    spec: &ProductScanSpec,
) -> Result<Vec<RoundProductHit>, RegionalError> {
    spec.validate()?;
    let mut clusters: BTreeMap<(GroupLabel, i64), Vec<Member<'_>>> = BTreeMap::new();
    for record in dataset.records() {
        if record.registered == 0 || record.ballots == 0 {
            continue;
        }
        let turnout = 100.0 * record.ballots as f64 / record.registered as f64;
        if (turnout - turnout.round()).abs() <= spec.integer_halfwidth + EDGE_SLACK {
            continue;
        }
        let leader_share = 100.0 * record.leader_votes as f64 / record.registered as f64;
        let multiple = (leader_share / spec.round_step).round() as i64;
        if multiple == 0 {
            continue;
        }
        let target = multiple as f64 * spec.round_step;
        if (leader_share - target).abs() > spec.tolerance + EDGE_SLACK {
            continue;
        }
        let leader_result = 100.0 * record.leader_votes as f64 / record.ballots as f64;
        clusters.entry((GroupLabel::of(record, spec.grouping), multiple)).or_default().push(Member {
            record,
            turnout,
            leader_result,
            leader_share,
        });
    }

    let mut hits = Vec::new();
    for ((label, multiple), mut members) in clusters {
        if (members.len() as u64) < spec.min_cluster {
            continue;
        }
        // Fixed summation order keeps the means independent of input order.
        members.sort_by(|a, b| {
            a.record.station_id.cmp(&b.record.station_id).then_with(|| a.record.key().cmp(&b.record.key()))
        });
        let n = members.len() as f64;
        let mean = |f: fn(&Member<'_>) -> f64| members.iter().map(f).sum::<f64>() / n;
        let target = multiple as f64 * spec.round_step;
        let mean_leader_share = mean(|m| m.leader_share);
        hits.push(RoundProductHit {
            label,
            target,
            station_count: members.len() as u64,
            mean_turnout: mean(|m| m.turnout),
            mean_leader_result: mean(|m| m.leader_result),
            mean_leader_share,
            distance: (mean_leader_share - target).abs(),
            station_ids: members.iter().map(|m| m.record.station_id.clone()).collect(),
        });
    }
    hits.sort_by(|a, b| {
        b.station_count
            .cmp(&a.station_count)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.target.total_cmp(&b.target))
    });
    Ok(hits)
}

pub fn hits_to_json(hits: &[RoundProductHit]) -> String {
    canonical_json(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_honest, SynthSpec};
    use proptest::prelude::*;

    fn station(region: &str, id: usize, registered: u64, ballots: u64, leader: u64) -> StationRecord {
        StationRecord {
            region: region.into(),
            territory: format!("{region}-city"),
            station_id: format!("{region}-{id}"),
            registered,
            ballots,
            leader_votes: leader,
        }
    }

    fn saratov(n: usize) -> Vec<StationRecord> {
        (0..n).map(|i| station("Saratov", i, 1000, 643, 400)).collect()
    }

    fn ds(records: Vec<StationRecord>) -> ElectionDataset {
        ElectionDataset::from_records("r", records).unwrap()
    }

    #[test]
    fn sole_contributor() {
        let mut records = saratov(40);
        records.extend((0..200).map(|i| station("Elsewhere", i, 1000, 500 + 2 * i as u64, 300)));
        let a = attribute_bin(&ds(records), MetricKind::Turnout, 64.3, 0.05, Grouping::Region).unwrap();
        assert_eq!(a.total_in_bin, 40);
        assert_eq!(a.top_group_share, 1.0);
        assert_eq!(a.per_group[0].label.region, "Saratov");
    }

    #[test]
    fn thirty_and_ten() {
        let mut records: Vec<_> = (0..30).map(|i| station("A", i, 1000, 700, 300)).collect();
        records.extend((0..10).map(|i| station("B", i, 2000, 1400, 300)));
        let a = attribute_bin(&ds(records), MetricKind::Turnout, 70.0, 0.05, Grouping::Region).unwrap();
        assert_eq!(a.total_in_bin, 40);
        assert_eq!(a.top_group_share, 0.75);
        assert_eq!(a.per_group.iter().map(|g| g.count).collect::<Vec<_>>(), vec![30, 10]);
    }

    #[test]
    fn empty_bin_is_not_an_error() {
        let a = attribute_bin(&ds(saratov(5)), MetricKind::Turnout, 12.0, 0.05, Grouping::Territory).unwrap();
        assert_eq!(a.total_in_bin, 0);
        assert!(a.per_group.is_empty());
        assert_eq!(a.top_group_share, 0.0);
    }

    #[test]
    fn attribution_rejects_bad_input() {
        let d = ds(saratov(1));
        assert!(attribute_bin(&d, MetricKind::Turnout, 101.0, 0.05, Grouping::Region).is_err());
        assert!(attribute_bin(&d, MetricKind::Turnout, 50.0, 0.0, Grouping::Region).is_err());
    }

    #[test]
    fn territory_labels_in_json() {
        let a = attribute_bin(&ds(saratov(3)), MetricKind::Turnout, 64.3, 0.05, Grouping::Territory).unwrap();
        let json = a.to_json();
        assert!(json.contains("\"territory\": \"Saratov-city\""));
        assert!(json.contains("\"grouping\": \"territory\""));
    }

    #[test]
    fn saratov_product() {
        let r = &saratov(1)[0];
        let turnout = 100.0 * r.ballots as f64 / r.registered as f64;
        let result = 100.0 * r.leader_votes as f64 / r.ballots as f64;
        assert!((turnout - 64.3).abs() < 1e-9);
        assert!((result - 62.2).abs() < 0.05);
        assert!((turnout * result / 100.0 - 40.0).abs() <= 0.06);

        let hits = round_product_scan(&ds(saratov(50)), &ProductScanSpec::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].target, 40.0);
        assert_eq!(hits[0].station_count, 50);
        assert_eq!(hits[0].mean_leader_share, 40.0);
        assert!(hits[0].distance <= 1e-12);
    }

    #[test]
    fn cluster_below_minimum() {
        assert!(round_product_scan(&ds(saratov(19)), &ProductScanSpec::default()).unwrap().is_empty());
        assert_eq!(round_product_scan(&ds(saratov(20)), &ProductScanSpec::default()).unwrap().len(), 1);
    }

    #[test]
    fn integer_turnout_is_not_a_product_anomaly() {
        let records = (0..50).map(|i| station("X", i, 1000, 800, 400)).collect();
        assert!(round_product_scan(&ds(records), &ProductScanSpec::default()).unwrap().is_empty());
    }

    #[test]
    fn scan_spec_validation() {
        let bad = ProductScanSpec { round_step: 0.0, ..ProductScanSpec::default() };
        assert!(round_product_scan(&ds(saratov(1)), &bad).is_err());
        let bad = ProductScanSpec { tolerance: 0.3, ..ProductScanSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn honest_elections_rarely_hit() {
        let with_hits = (0..20)
            .filter(|&seed| {
                let d = generate_honest(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
                !round_product_scan(&d, &ProductScanSpec::default()).unwrap().is_empty()
            })
            .count();
        assert!(with_hits <= 1, "{with_hits} of 20 honest elections had hits");
    }

    proptest! {
        #[test]
        fn attribution_partitions_the_bin(
            rows in proptest::collection::vec((0usize..4, 1u64..400, 0.0f64..=1.0), 1..80),
            center in 0u32..=100,
            halfwidth in 0.5f64..20.0,
        ) {
            let records: Vec<_> = rows.iter().enumerate()
                .map(|(i, &(g, n, t))| station(["A", "B", "C", "D"][g], i, n, (n as f64 * t) as u64, 0))
                .collect();
            let d = ds(records.clone());
            let a = attribute_bin(&d, MetricKind::Turnout, center as f64, halfwidth, Grouping::Region).unwrap();
            let in_bin = records.iter()
                .filter(|r| ((100.0 * r.ballots as f64 / r.registered as f64) - center as f64).abs() <= halfwidth + EDGE_SLACK)
                .count() as u64;
            prop_assert_eq!(a.per_group.iter().map(|g| g.count).sum::<u64>(), a.total_in_bin);
            prop_assert_eq!(a.total_in_bin, in_bin);
            if a.total_in_bin > 0 {
                prop_assert_eq!(a.top_group_share, a.per_group[0].count as f64 / a.total_in_bin as f64);
            }
        }

        #[test]
        fn scan_is_order_invariant(
            extra in proptest::collection::vec((0usize..3, 100u64..2000, 0.3f64..0.9, 0.3f64..0.9), 0..60),
            cluster in 20usize..40,
            rotation in 0usize..100,
        ) {
            let mut records = saratov(cluster);
            for (i, &(g, n, t, l)) in extra.iter().enumerate() {
                let ballots = (n as f64 * t) as u64;
                records.push(station(["Saratov", "P", "Q"][g], 1000 + i, n, ballots, (ballots as f64 * l) as u64));
            }
            let spec = ProductScanSpec { min_cluster: 3, ..ProductScanSpec::default() };
            let a = round_product_scan(&ds(records.clone()), &spec).unwrap();
            let k = rotation % records.len();
            records.rotate_left(k);
            records.reverse();
            let b = round_product_scan(&ds(records.clone()), &spec).unwrap();
            prop_assert_eq!(hits_to_json(&a), hits_to_json(&b));

            let by_id: BTreeMap<&str, &StationRecord> = records.iter().map(|r| (r.station_id.as_str(), r)).collect();
            for hit in &a {
                for id in &hit.station_ids {
                    let r = by_id[id.as_str()];
                    let turnout = 100.0 * r.ballots as f64 / r.registered as f64;
                    let result = 100.0 * r.leader_votes as f64 / r.ballots as f64;
                    let share = 100.0 * r.leader_votes as f64 / r.registered as f64;
                    prop_assert!((share - turnout * result / 100.0).abs() <= 1e-9);
                    prop_assert!((share - hit.target).abs() <= spec.tolerance + EDGE_SLACK);
                }
            }
        }
    }
}
