use std::path::{Path, PathBuf};

use elforensics::anomaly::{run_series, AnomalyConfig};
use elforensics::dataset::{DatasetError, IngestMode};
use elforensics::histogram::{
    build_histogram, find_peaks, render_svg, HistogramSpec, OutputFormat, DEFAULT_PEAK_WINDOW,
};
use elforensics::regional::{attribute_bin, hits_to_json, round_product_scan, ProductScanSpec};
use elforensics::synth::{generate_honest, inject_fraud, FraudSpec, GroundTruth, SynthError, SynthSpec};
use elforensics::{ElectionDataset, FilterSpec, IntegerBand, JitterSpec};
use serde_json::json;

use crate::manifest::{InputDigest, RunManifest};
use crate::{AnomalyArgs, HistogramArgs, InputArgs, ProductScanArgs, RegionArgs, SynthArgs};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn domain(message: impl std::fmt::Display) -> Self {
        CliError { code: 1, message: message.to_string() }
    }

    pub fn io(message: impl std::fmt::Display) -> Self {
        CliError { code: 2, message: message.to_string() }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = if e.is_io() { 2 } else { 1 };
        let message = match &e {
            DatasetError::Invariant(violations) => {
                let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                format!("{} invalid row(s)\n  {}", violations.len(), lines.join("\n  "))
            }
            _ => e.to_string(),
        };
        CliError { code, message }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(inner) => inner.into(),
            SynthError::Io { .. } => CliError::io(e),
            SynthError::InvalidSpec(_) => CliError::domain(e),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn election_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn load(path: &Path, args: &InputArgs) -> Result<ElectionDataset, CliError> {
    let mode = if args.lenient { IngestMode::Lenient } else { IngestMode::Strict };
    let (dataset, skipped) = ElectionDataset::ingest_with(path, election_id(path), mode)?;
    for row in &skipped {
        eprintln!("{}: {row}", path.display());
    }
    Ok(dataset)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random();
        eprintln!("seed: {seed}");
        seed
    })
}

fn emit(out: Option<&PathBuf>, body: &str, manifest: RunManifest) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut manifest = manifest;
            write_file(path, body)?;
            manifest.output(path);
            manifest.write_beside(path)
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

pub fn validate(input: &Path) -> Result<(), CliError> {
    let dataset = ElectionDataset::ingest(input, election_id(input))?;
    println!("{}: {} stations, sha256 {}", input.display(), dataset.len(), dataset.source_digest());
    Ok(())
}

pub fn histogram(args: &HistogramArgs) -> Result<(), CliError> {
    let format = match args.format {
        Some(f) => f,
        None if args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) => OutputFormat::Svg,
        None => OutputFormat::Csv,
    };
    if format == OutputFormat::Csv && args.metric.len() != 1 {
        return Err(CliError::domain("CSV output takes exactly one --metric"));
    }
    let dataset = load(&args.input, &args.input_args)?;
    let seed = resolve_seed(args.seed);
    let specs: Vec<HistogramSpec> = args
        .metric
        .iter()
        .map(|&metric| HistogramSpec {
            metric,
            bin_width: args.bin_width,
            jitter: JitterSpec { enabled: !args.no_jitter, draws: args.jitter_draws },
            filter: FilterSpec {
                min_registered: args.min_registered,
                exclude_full_turnout: !args.include_full_turnout,
            },
            seed,
        })
        .collect();
    let histograms = specs
        .iter()
        .map(|spec| build_histogram(&dataset, spec).map_err(CliError::domain))
        .collect::<Result<Vec<_>, _>>()?;

    for hist in &histograms {
        let peaks = find_peaks(hist, DEFAULT_PEAK_WINDOW, 0.0).map_err(CliError::domain)?;
        println!(
            "{}: {} stations included, {} excluded",
            hist.spec.metric,
            hist.included_count,
            hist.exclusions.total()
        );
        for peak in peaks.iter().take(5) {
            println!(
                "  peak {:.*} prominence {:.2}{}",
                hist.center_decimals(),
                peak.bin_center,
                peak.prominence,
                if peak.is_integer_centered { " (integer)" } else { "" }
            );
        }
    }

    let body = match format {
        OutputFormat::Csv => histograms[0].to_csv(),
        OutputFormat::Svg => render_svg(&histograms.iter().collect::<Vec<_>>(), 5),
    };
    let mut manifest = RunManifest::new(
        "histogram",
        json!({
            "specs": specs,
            "format": match format { OutputFormat::Csv => "csv", OutputFormat::Svg => "svg" },
            "lenient": args.input_args.lenient,
        }),
    );
    manifest.inputs.push(InputDigest::of(&args.input, &dataset));
    emit(Some(&args.out), &body, manifest)
}

pub fn anomaly(args: &AnomalyArgs) -> Result<(), CliError> {
    let band = IntegerBand::new(args.halfwidth, args.integer_lo, args.integer_hi).map_err(CliError::domain)?;
    let config = AnomalyConfig {
        iterations: args.iterations,
        seed: resolve_seed(args.seed),
        band,
        jitter: JitterSpec { enabled: !args.no_jitter, draws: args.jitter_draws },
        filter: FilterSpec { min_registered: args.min_registered, exclude_full_turnout: false },
        percentile: args.percentile,
    };
    config.validate().map_err(CliError::domain)?;
    let datasets = args.inputs.iter().map(|p| load(p, &args.input_args)).collect::<Result<Vec<_>, _>>()?;
    let series = run_series(&datasets, &config).map_err(CliError::domain)?;

    for row in &series.table {
        eprintln!(
            "{}: either excess {:.1} (threshold {:.1}), p = {}",
            row.election_id, row.either_excess, row.either_threshold, row.either_p_value
        );
    }

    let mut manifest = RunManifest::new("anomaly", json!({ "anomaly": config, "lenient": args.input_args.lenient }));
    for (path, dataset) in args.inputs.iter().zip(&datasets) {
        manifest.inputs.push(InputDigest::of(path, dataset));
    }
    if let Some(table) = &args.table {
        write_file(table, &series.table_csv())?;
        manifest.output(table);
    }
    emit(args.out.as_ref(), &series.to_json(), manifest)
}

pub fn region(args: &RegionArgs) -> Result<(), CliError> {
    let dataset = load(&args.input, &args.input_args)?;
    let attribution = attribute_bin(&dataset, args.metric, args.bin_center, args.halfwidth, args.group_by)
        .map_err(CliError::domain)?;
    let mut manifest = RunManifest::new(
        "region",
        json!({
            "metric": args.metric,
            "bin_center": args.bin_center,
            "halfwidth": args.halfwidth,
            "group_by": args.group_by,
            "lenient": args.input_args.lenient,
        }),
    );
    manifest.inputs.push(InputDigest::of(&args.input, &dataset));
    emit(args.out.as_ref(), &attribution.to_json(), manifest)
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed);
    let spec = SynthSpec {
        station_count: args.stations,
        median_registered: args.median_registered,
        size_dispersion: args.size_dispersion,
        min_registered: args.min_registered,
        max_registered: args.max_registered,
        region_count: args.regions,
        seed,
        ..SynthSpec::default()
    };
    let fraud =
        FraudSpec { fraction: args.fraud_fraction, target_metric: args.target_metric, seed, ..FraudSpec::default() };
    fraud.validate()?;
    let honest = generate_honest(&spec)?;
    let (dataset, truth): (ElectionDataset, GroundTruth) = inject_fraud(&honest, &fraud)?;

    dataset.write_csv(&args.out)?;
    let mut manifest = RunManifest::new("synth", json!({ "election": spec, "fraud": fraud }));
    manifest.output(&args.out);
    if let Some(path) = &args.truth {
        truth.write_csv(path)?;
        manifest.output(path);
    }
    eprintln!("{} stations, {} falsified", dataset.len(), truth.falsified_count());
    manifest.write_beside(&args.out)
}

pub fn product_scan(args: &ProductScanArgs) -> Result<(), CliError> {
    let dataset = load(&args.input, &args.input_args)?;
    let spec = ProductScanSpec {
        grouping: args.group_by,
        round_step: args.round_step,
        tolerance: args.tolerance,
        min_cluster: args.min_cluster,
        ..ProductScanSpec::default()
    };
    let hits = round_product_scan(&dataset, &spec).map_err(CliError::domain)?;
    let mut manifest = RunManifest::new("product-scan", json!({ "scan": spec, "lenient": args.input_args.lenient }));
    manifest.inputs.push(InputDigest::of(&args.input, &dataset));
    emit(args.out.as_ref(), &hits_to_json(&hits), manifest)
}
