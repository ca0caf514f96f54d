//! Jittered fixed-width percentage histograms and peak detection.
//!
//! Bin `k` is centered at `k * bin_width` and covers the half-open interval
//! `[(k - 1/2) w, (k + 1/2) w)`. With the default 0.1% width, the bin at 50
//! holds values in `[49.95, 50.05)`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{exclusion_reason, ElectionDataset, ExclusionTally, FilterSpec};
use crate::metrics::{percent, JitterSpec, MetricKind};
use crate::rng::{substream, Domain};

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("invalid histogram spec: {0}")]
    InvalidSpec(String),
    #[error("invalid peak window: {0}")]
    InvalidWindow(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub metric: MetricKind,
    pub bin_width: f64,
    pub jitter: JitterSpec,
    pub filter: FilterSpec,
    pub seed: u64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            metric: MetricKind::Turnout,
            bin_width: 0.1,
            jitter: JitterSpec::default(),
            filter: FilterSpec::histogram(),
            seed: 0,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<(), HistogramError> {
        if !(self.bin_width > 0.0 && self.bin_width <= 100.0) {
            return Err(HistogramError::InvalidSpec(format!("bin width {} outside (0, 100]", self.bin_width)));
        }
        let tiles = 100.0 / self.bin_width;
        if (tiles - tiles.round()).abs() > 1e-9 * tiles.max(1.0) {
            return Err(HistogramError::InvalidSpec(format!("bin width {} does not divide 100", self.bin_width)));
        }
        self.jitter.validate().map_err(|e| HistogramError::InvalidSpec(e.to_string()))
    }

    /// Centers run over `0, w, 2w, ..., 100`.
    pub fn bin_count(&self) -> usize {
        (100.0 / self.bin_width).round() as usize + 1
    }
}

/// Lower edge of bin `k`; bin `k` spans `[edge(k), edge(k + 1))`.
#[inline]
pub fn bin_edge(k: usize, bin_width: f64) -> f64 {
    (k as f64 - 0.5) * bin_width
}

/// Bin holding `value`, with out-of-range values clamped into the end bins.
#[inline]
pub fn bin_index(value: f64, bin_width: f64, bins: usize) -> usize {
    let last = bins - 1;
    let mut k = (value / bin_width + 0.5).floor().clamp(0.0, last as f64) as usize;
    // The guess can be off by one near edges; settle it against the edges.
    while k > 0 && value < bin_edge(k, bin_width) {
        k -= 1;
    }
    while k < last && value >= bin_edge(k + 1, bin_width) {
        k += 1;
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: HistogramSpec,
    /// One increment per included station per jitter draw.
    pub counts: Vec<u64>,
    pub draws: u32,
    pub included_count: u64,
    pub exclusions: ExclusionTally,
}

impl Histogram {
    pub fn center(&self, k: usize) -> f64 {
        k as f64 * self.spec.bin_width
    }

    /// Station count of bin `k`, averaged over jitter draws.
    pub fn normalized(&self, k: usize) -> f64 {
        self.counts[k] as f64 / self.draws as f64
    }

    pub fn heights(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|k| self.normalized(k)).collect()
    }

    /// Total normalized mass; equals `included_count`.
    pub fn normalized_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.draws as f64
    }

    pub fn center_decimals(&self) -> usize {
        decimals_of(self.spec.bin_width)
    }

    pub fn to_csv(&self) -> String {
        let decimals = self.center_decimals();
        let mut out = String::from("bin_center,count_normalized\n");
        for (k, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                writeln!(out, "{:.*},{}", decimals, self.center(k), self.normalized(k)).expect("write to String");
            }
        }
        out
    }
}

fn decimals_of(width: f64) -> usize {
    (1..=9)
        .find(|&d| {
            let scaled = width * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-6
        })
        .unwrap_or(9)
}

pub fn build_histogram(dataset: &ElectionDataset, spec: &HistogramSpec) -> Result<Histogram, HistogramError> {
    spec.validate()?;
    let bins = spec.bin_count();
    let draws = spec.jitter.effective_draws();
    let width = spec.bin_width;

    let mut exclusions = ExclusionTally::default();
    let mut included = Vec::with_capacity(dataset.len());
    for (i, record) in dataset.records().iter().enumerate() {
        match exclusion_reason(record, &spec.filter, spec.metric) {
            Some(reason) => exclusions.add(reason),
            None => included.push((i, spec.metric.fraction(record))),
        }
    }

    let counts = included
        .par_iter()
        .fold(
            || vec![0u64; bins],
            |mut counts, &(i, (num, den))| {
                let mut rng = substream(spec.seed, Domain::HistogramJitter, i as u64, 0);
                for _ in 0..draws {
                    let u = if spec.jitter.enabled { rng.random::<f64>() - 0.5 } else { 0.0 };
                    let value = percent(num, den, u).expect("filter removed zero denominators");
                    counts[bin_index(value, width, bins)] += 1;
                }
                counts
            },
        )
        .reduce(
            || vec![0u64; bins],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );

    Ok(Histogram { spec: *spec, counts, draws, included_count: included.len() as u64, exclusions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bin_center: f64,
    pub height: f64,
    pub baseline: f64,
    pub prominence: f64,
    pub is_integer_centered: bool,
}

pub const DEFAULT_PEAK_WINDOW: usize = 11;

pub fn find_peaks(hist: &Histogram, window: usize, min_prominence: f64) -> Result<Vec<Peak>, HistogramError> {
    peaks_in(&hist.heights(), hist.spec.bin_width, window, min_prominence)
}

/// Local maxima that rise above the median of the surrounding `window` bins
/// by more than zero and at least `min_prominence`. Near the ends the window
/// is shifted inward to stay full. Sorted by prominence, largest first.
pub fn peaks_in(
    heights: &[f64],
    bin_width: f64,
    window: usize,
    min_prominence: f64,
) -> Result<Vec<Peak>, HistogramError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(HistogramError::InvalidWindow(format!("window {window} must be odd and at least 3")));
    }
    if window > heights.len() {
        return Err(HistogramError::InvalidWindow(format!("window {window} exceeds {} bins", heights.len())));
    }
    let half = window / 2;
    let mut scratch = Vec::with_capacity(window);
    let mut peaks = Vec::new();
    for (k, &height) in heights.iter().enumerate() {
        let left_ok = k == 0 || height > heights[k - 1];
        let right_ok = k + 1 == heights.len() || height >= heights[k + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let start = k.saturating_sub(half).min(heights.len() - window);
        scratch.clear();
        scratch.extend_from_slice(&heights[start..start + window]);
        scratch.sort_by(f64::total_cmp);
        let baseline = scratch[half];
        let prominence = height - baseline;
        if prominence > 0.0 && prominence >= min_prominence {
            let center = k as f64 * bin_width;
            peaks.push(Peak {
                bin_center: center,
                height,
                baseline,
                prominence,
                is_integer_centered: (center - center.round()).abs() < 1e-9,
            });
        }
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.bin_center.total_cmp(&b.bin_center)));
    Ok(peaks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(format!("unknown format '{other}' (expected csv or svg)")),
        }
    }
}

pub fn emit_histogram(hist: &Histogram, format: OutputFormat, path: impl AsRef<Path>) -> Result<(), HistogramError> {
    let body = match format {
        OutputFormat::Csv => hist.to_csv(),
        OutputFormat::Svg => render_svg(&[hist], 5),
    };
    let path = path.as_ref();
    std::fs::write(path, body).map_err(|source| HistogramError::Io { path: path.display().to_string(), source })
}

const SERIES_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG line chart: one polyline per histogram, gridlines at every
/// integer percentage, and the `annotate` most prominent peaks of each
/// series marked with their bin centers.
pub fn render_svg(series: &[&Histogram], annotate: usize) -> String {
    const W: f64 = 960.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let y_max = series.iter().flat_map(|h| h.heights()).fold(0.0f64, f64::max).max(1.0) * 1.08;
    let x_px = |x: f64| LEFT + x / 100.0 * plot_w;
    let y_px = |y: f64| TOP + plot_h - y / y_max * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);

    let _ = writeln!(s, r#"<g class="grid">"#);
    for k in 0..=100 {
        let x = x_px(k as f64);
        let (stroke, opacity) = if k % 10 == 0 { ("#999999", 0.8) } else { ("#cccccc", 0.5) };
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="0.5" stroke-opacity="{opacity}"/>"#,
            TOP + plot_h
        );
        if k % 10 == 0 {
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#, TOP + plot_h + 16.0);
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#, TOP + plot_h);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y_px(v) + 4.0,
            format_tick(v)
        );
    }

    let names: Vec<&str> = series.iter().map(|h| h.spec.metric.name()).collect();
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} (%)</text>"#,
        LEFT + plot_w / 2.0,
        H - 16.0,
        xml_escape(&names.join(", "))
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">stations per bin</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    if let Some(first) = series.first() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="13">Histogram, {}% bins</text>"#,
            LEFT + plot_w / 2.0,
            first.spec.bin_width
        );
    }

    for (i, hist) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let points: Vec<String> = (0..hist.counts.len())
            .map(|k| format!("{:.2},{:.2}", x_px(hist.center(k)), y_px(hist.normalized(k))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-metric="{}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            hist.spec.metric.name(),
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            LEFT + 10.0,
            TOP + 14.0 + 14.0 * i as f64,
            hist.spec.metric.name()
        );
        if let Ok(peaks) = find_peaks(hist, DEFAULT_PEAK_WINDOW, 0.0) {
            let decimals = hist.center_decimals();
            for peak in peaks.iter().take(annotate) {
                let (x, y) = (x_px(peak.bin_center), y_px(peak.height));
                let _ = writeln!(
                    s,
                    r#"<g class="peak"><path d="M {x:.2} {:.2} L {x:.2} {:.2}" stroke="black" stroke-width="1.2"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{:.*}</text></g>"#,
                    y - 16.0,
                    y - 3.0,
                    y - 19.0,
                    decimals,
                    peak.bin_center
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::StationRecord;
    use proptest::prelude::*;

    fn rec(i: usize, registered: u64, ballots: u64) -> StationRecord {
        StationRecord {
            region: "R".into(),
            territory: "T".into(),
            station_id: format!("PS-{i}"),
            registered,
            ballots,
            leader_votes: ballots / 2,
        }
    }

    fn dataset(records: Vec<StationRecord>) -> ElectionDataset {
        ElectionDataset::from_records("h", records).unwrap()
    }

    /// Linear scan over the edge definition.
    fn naive_bin(value: f64, width: f64, bins: usize) -> usize {
        if value < bin_edge(1, width) {
            return 0;
        }
        (0..bins).find(|&k| bin_edge(k, width) <= value && value < bin_edge(k + 1, width)).unwrap_or(bins - 1)
    }

    #[test]
    fn spec_validation() {
        assert!(HistogramSpec { bin_width: 0.0, ..HistogramSpec::default() }.validate().is_err());
        assert!(HistogramSpec { bin_width: 0.3, ..HistogramSpec::default() }.validate().is_err());
        assert!(HistogramSpec { bin_width: 0.25, ..HistogramSpec::default() }.validate().is_ok());
        assert_eq!(HistogramSpec::default().bin_count(), 1001);
    }

    #[test]
    fn boundary_goes_to_upper_bin() {
        // 0.5 is the shared edge of bins 0 ([-0.5, 0.5)) and 1 at width 1.
        assert_eq!(bin_index(0.5, 1.0, 101), 1);
        assert_eq!(bin_index(0.4999, 1.0, 101), 0);
        assert_eq!(bin_index(-3.0, 1.0, 101), 0);
        assert_eq!(bin_index(100.2, 0.1, 1001), 1000);
        assert_eq!(bin_index(250.0, 0.1, 1001), 1000);
    }

    #[test]
    fn single_station_unjittered() {
        let ds = dataset(vec![rec(0, 200, 100)]);
        let spec = HistogramSpec { jitter: JitterSpec::disabled(), ..HistogramSpec::default() };
        let h = build_histogram(&ds, &spec).unwrap();
        let nonzero: Vec<usize> = (0..h.counts.len()).filter(|&k| h.counts[k] > 0).collect();
        assert_eq!(nonzero, vec![500]);
        assert_eq!(h.center(500), 50.0);
        assert_eq!(h.to_csv(), "bin_center,count_normalized\n50.0,1\n");
    }

    #[test]
    fn full_turnout_only_in_tally() {
        let ds = dataset(vec![rec(0, 300, 300)]);
        let h = build_histogram(&ds, &HistogramSpec::default()).unwrap();
        assert_eq!(h.included_count, 0);
        assert_eq!(h.exclusions.full_turnout, 1);
        assert!(h.counts.iter().all(|&c| c == 0));
        assert_eq!(h.to_csv(), "bin_center,count_normalized\n");
    }

    #[test]
    fn full_turnout_clamps_into_top_bin_when_kept() {
        let ds = dataset(vec![rec(0, 3000, 3000)]);
        let spec = HistogramSpec { filter: FilterSpec::default(), ..HistogramSpec::default() };
        let h = build_histogram(&ds, &spec).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 100);
        assert!(h.counts[..999].iter().all(|&c| c == 0));
    }

    #[test]
    fn jitter_keeps_643_in_its_bin() {
        let ds = dataset((0..1000).map(|i| rec(i, 1000, 643)).collect());
        let h = build_histogram(&ds, &HistogramSpec { seed: 4, ..HistogramSpec::default() }).unwrap();
        // Jitter moves 64.3 by at most 0.05, i.e. within [64.25, 64.35].
        let center_bin = bin_index(64.3, 0.1, 1001);
        assert_eq!(h.center(center_bin), 64.3 * 1.0);
        let share = h.normalized(center_bin) / h.included_count as f64;
        assert!(share >= 0.9, "share {share}");
        let occupied: Vec<usize> = (0..h.counts.len()).filter(|&k| h.counts[k] > 0).collect();
        assert!(occupied.iter().all(|&k| k.abs_diff(center_bin) <= 1));
    }

    #[test]
    fn mass_written_to_csv() {
        let ds = dataset((0..7).map(|i| rec(i, 200, 100)).collect());
        let spec = HistogramSpec { jitter: JitterSpec::disabled(), ..HistogramSpec::default() };
        let h = build_histogram(&ds, &spec).unwrap();
        assert!(h.to_csv().lines().any(|l| l == "50.0,7"));
    }

    #[test]
    fn flat_histogram_has_no_peaks() {
        let heights = vec![3.0; 200];
        assert!(peaks_in(&heights, 0.5, 11, 0.0).unwrap().is_empty());
    }

    #[test]
    fn window_errors() {
        let heights = vec![1.0; 5];
        assert!(peaks_in(&heights, 1.0, 4, 0.0).is_err());
        assert!(peaks_in(&heights, 1.0, 1, 0.0).is_err());
        assert!(peaks_in(&heights, 1.0, 7, 0.0).is_err());
        assert!(peaks_in(&heights, 1.0, 5, 0.0).is_ok());
    }

    #[test]
    fn peak_labels() {
        let mut heights = vec![1.0; 1001];
        heights[850] = 30.0;
        heights[643] = 12.0;
        let peaks = peaks_in(&heights, 0.1, 11, 1.0).unwrap();
        assert_eq!(peaks.len(), 2);
        assert_eq!(peaks[0].bin_center, 85.0);
        assert!(peaks[0].is_integer_centered);
        assert_eq!(peaks[0].prominence, 29.0);
        assert!((peaks[1].bin_center - 64.3).abs() < 1e-9);
        assert!(!peaks[1].is_integer_centered);
    }

    #[test]
    fn svg_structure() {
        let ds = dataset((0..50).map(|i| rec(i, 1000, 600 + i as u64)).collect());
        let a = build_histogram(&ds, &HistogramSpec::default()).unwrap();
        let b = build_histogram(&ds, &HistogramSpec { metric: MetricKind::LeaderResult, ..HistogramSpec::default() })
            .unwrap();
        let svg = render_svg(&[&a, &b], 5);
        assert!(svg.starts_with("<svg"));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let polylines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        assert_eq!(polylines, 2);
        assert!(!svg.contains("href"));
    }

    #[test]
    fn emit_to_unwritable_path_fails() {
        let ds = dataset(vec![rec(0, 200, 100)]);
        let h = build_histogram(&ds, &HistogramSpec::default()).unwrap();
        assert!(emit_histogram(&h, OutputFormat::Csv, "/nonexistent-dir/x.csv").is_err());
    }

    proptest! {
        #[test]
        fn bin_index_matches_naive(value in -5.0f64..105.0, which in 0usize..4) {
            let width: f64 = [0.1, 0.25, 0.5, 1.0][which];
            let bins = (100.0 / width).round() as usize + 1;
            prop_assert_eq!(bin_index(value, width, bins), naive_bin(value, width, bins));
        }

        #[test]
        fn mass_conservation_and_locality(
            sizes in proptest::collection::vec((1u64..3000, 0.0f64..=1.0), 1..40),
            seed: u64,
            draws in 1u32..20,
            exclude_full_turnout: bool,
        ) {
            let records: Vec<_> = sizes.iter().enumerate().map(|(i, &(n, t))| rec(i, n, (n as f64 * t) as u64)).collect();
            let ds = dataset(records);
            let spec = HistogramSpec {
                jitter: JitterSpec { enabled: true, draws },
                filter: FilterSpec { exclude_full_turnout, ..FilterSpec::default() },
                seed,
                ..HistogramSpec::default()
            };
            let h = build_histogram(&ds, &spec).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), h.included_count * draws as u64);
            prop_assert_eq!(h.normalized_mass(), h.included_count as f64);
            prop_assert_eq!(h.included_count + h.exclusions.total(), ds.len() as u64);
            prop_assert_eq!(&build_histogram(&ds, &spec).unwrap(), &h);

            // A single station only reaches bins within 50 / registered of its value.
            let single = dataset(vec![ds.records()[0].clone()]);
            let hs = build_histogram(&single, &spec).unwrap();
            let r = &single.records()[0];
            let exact = 100.0 * r.ballots as f64 / r.registered as f64;
            let reach = 50.0 / r.registered as f64;
            for k in (0..hs.counts.len()).filter(|&k| hs.counts[k] > 0) {
                prop_assert!(bin_edge(k + 1, 0.1) >= exact - reach - 1e-9 || k == 0);
                prop_assert!(bin_edge(k, 0.1) <= exact + reach + 1e-9 || k == hs.counts.len() - 1);
            }
        }

        #[test]
        fn peaks_invariant_under_offset(
            heights in proptest::collection::vec(0u32..50, 30..120),
            offset in 0u32..1000,
            min_prominence in 0u32..10,
        ) {
            let base: Vec<f64> = heights.iter().map(|&h| h as f64).collect();
            let shifted: Vec<f64> = base.iter().map(|h| h + offset as f64).collect();
            let a = peaks_in(&base, 0.5, 11, min_prominence as f64).unwrap();
            let b = peaks_in(&shifted, 0.5, 11, min_prominence as f64).unwrap();
            let centers = |p: &[Peak]| p.iter().map(|x| (x.bin_center, x.prominence)).collect::<Vec<_>>();
            prop_assert_eq!(centers(&a), centers(&b));
            prop_assert!(a.iter().all(|p| p.prominence > 0.0));
        }
    }
}
