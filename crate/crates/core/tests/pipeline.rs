use elforensics::anomaly::{run_anomaly, run_series, AnomalyConfig};
use elforensics::dataset::{DatasetError, IngestMode};
use elforensics::histogram::{build_histogram, emit_histogram, find_peaks, HistogramSpec, OutputFormat};
use elforensics::regional::{attribute_bin, round_product_scan, Grouping, ProductScanSpec};
use elforensics::synth::{generate_honest, inject_fraud, FraudSpec, SynthSpec};
use elforensics::{ElectionDataset, MetricKind};
use tempfile::TempDir;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        station_count: 3000,
        median_registered: 2000.0,
        size_dispersion: 0.4,
        min_registered: 500,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn csv_round_trip_keeps_records_and_digest() {
    let dir = TempDir::new().unwrap();
    let ds = generate_honest(&small_spec(1)).unwrap();
    let path = dir.path().join("e.csv");
    ds.write_csv(&path).unwrap();
    let back = ElectionDataset::ingest(&path, "e").unwrap();
    assert_eq!(back.records(), ds.records());
    assert_eq!(back.source_digest(), ds.source_digest());
    assert_eq!(back.to_csv_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn lenient_ingest_skips_only_bad_rows() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("mixed.csv");
    std::fs::write(
        &path,
        "region,territory,station_id,registered,ballots,leader_votes\n\
         A,T,1,100,50,20\n\
         A,T,2,100,150,20\n\
         A,T,3,x,50,20\n\
         A,T,4,100,60,30\n",
    )
    .unwrap();
    assert!(matches!(
        ElectionDataset::ingest(&path, "m"),
        Err(DatasetError::Invariant(_) | DatasetError::Malformed { .. })
    ));
    let (ds, skipped) = ElectionDataset::ingest_with(&path, "m", IngestMode::Lenient).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(skipped.iter().map(|s| s.row).collect::<Vec<_>>(), vec![3, 4]);
}

#[test]
fn fraud_shows_up_in_every_view() {
    let dir = TempDir::new().unwrap();
    let honest = generate_honest(&small_spec(5)).unwrap();
    let fraud = FraudSpec { fraction: 0.1, seed: 5, ..FraudSpec::default() };
    let (dirty, truth) = inject_fraud(&honest, &fraud).unwrap();
    assert_eq!(truth.falsified_count(), 300);

    let config = AnomalyConfig { iterations: 300, seed: 2, ..AnomalyConfig::default() };
    let series = run_series(&[honest.clone(), dirty.clone()], &config).unwrap();
    assert!(series.table[1].turnout_excess > series.table[1].turnout_threshold);
    assert!(series.table[1].either_excess > series.table[0].either_excess);
    assert_eq!(series.reports[0], run_anomaly(&honest, &config).unwrap());

    let hist = build_histogram(&dirty, &HistogramSpec { seed: 3, ..HistogramSpec::default() }).unwrap();
    let peaks = find_peaks(&hist, 11, 0.0).unwrap();
    assert!(peaks.iter().take(5).all(|p| p.is_integer_centered), "{:?}", &peaks[..5]);

    let out = dir.path().join("h.svg");
    emit_histogram(&hist, OutputFormat::Svg, &out).unwrap();
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("<svg"));

    let top = peaks[0].bin_center;
    let attribution = attribute_bin(&dirty, MetricKind::Turnout, top, 0.05, Grouping::Territory).unwrap();
    assert!(attribution.total_in_bin > 0);
    assert_eq!(attribution.per_group.iter().map(|g| g.count).sum::<u64>(), attribution.total_in_bin);

    // Turnout-only fraud keeps leader results honest, so no round shares cluster.
    assert!(round_product_scan(&dirty, &ProductScanSpec::default()).unwrap().is_empty());
}
