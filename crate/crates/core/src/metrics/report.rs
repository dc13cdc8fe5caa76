//! Efficiency report: per-image rows, corpus aggregates, histogram and
//! reversed-CDF exports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loop-count inflation percent: how much extra decoding the input buys.
pub fn i_loop(loop_benign: usize, loop_adv: usize) -> f64 {
    debug_assert!(loop_benign >= 1);
    (loop_adv as f64 - loop_benign as f64) / loop_benign as f64 * 100.0
}

/// Latency inflation percent.
pub fn i_latency(benign_ns: u64, adv_ns: u64) -> f64 {
    debug_assert!(benign_ns > 0);
    (adv_ns as f64 - benign_ns as f64) / benign_ns as f64 * 100.0
}

/// Where the latency columns of a report came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencySource {
    /// Deterministic loops × cost-per-step proxy (default; bit-reproducible).
    Proxy,
    /// Measured wall-clock medians.
    WallClock,
}

impl LatencySource {
    pub fn label(self) -> &'static str {
        match self {
            LatencySource::Proxy => "proxy",
            LatencySource::WallClock => "wall_clock",
        }
    }
}

/// One attacked image's worth of measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub image_index: usize,
    pub benign_loops: usize,
    pub adv_loops: usize,
    pub i_loop_pct: f64,
    pub benign_latency_ns: u64,
    pub adv_latency_ns: u64,
    pub i_latency_pct: f64,
    pub l2: f64,
    pub linf: f64,
    pub benign_bleu: f64,
    pub adv_bleu: f64,
}

impl ReportRow {
    pub fn validate(&self) -> Result<()> {
        let want = i_loop(self.benign_loops, self.adv_loops);
        if (self.i_loop_pct - want).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "i_loop column {} disagrees with loop counts ({want})",
                self.i_loop_pct
            )));
        }
        Ok(())
    }
}

/// Corpus aggregates; every value is recomputable from the rows exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_benign_loops: f64,
    pub mean_adv_loops: f64,
    pub mean_i_loop_pct: f64,
    pub median_i_loop_pct: f64,
    pub mean_i_latency_pct: f64,
    pub median_i_latency_pct: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub mean_benign_bleu: f64,
    pub mean_adv_bleu: f64,
}

/// Per-method efficiency report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub method: String,
    pub latency_source: LatencySource,
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        return 0.0;
    }
    collected.iter().sum::<f64>() / collected.len() as f64
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        return 0.0;
    }
    collected.sort_by(f64::total_cmp);
    collected[collected.len() / 2]
}

fn compute_aggregates(rows: &[ReportRow]) -> Aggregates {
    Aggregates {
        mean_benign_loops: mean(rows.iter().map(|r| r.benign_loops as f64)),
        mean_adv_loops: mean(rows.iter().map(|r| r.adv_loops as f64)),
        mean_i_loop_pct: mean(rows.iter().map(|r| r.i_loop_pct)),
        median_i_loop_pct: median(rows.iter().map(|r| r.i_loop_pct)),
        mean_i_latency_pct: mean(rows.iter().map(|r| r.i_latency_pct)),
        median_i_latency_pct: median(rows.iter().map(|r| r.i_latency_pct)),
        mean_l2: mean(rows.iter().map(|r| r.l2)),
        mean_linf: mean(rows.iter().map(|r| r.linf)),
        mean_benign_bleu: mean(rows.iter().map(|r| r.benign_bleu)),
        mean_adv_bleu: mean(rows.iter().map(|r| r.adv_bleu)),
    }
}

/// Assemble a report from per-image rows.
pub fn build_report(
    method: &str,
    latency_source: LatencySource,
    rows: Vec<ReportRow>,
) -> Result<EfficiencyReport> {
    if rows.is_empty() {
        return Err(Error::contract("report needs at least one row"));
    }
    for row in &rows {
        row.validate()?;
    }
    let aggregates = compute_aggregates(&rows);
    Ok(EfficiencyReport {
        method: method.to_string(),
        latency_source,
        rows,
        aggregates,
    })
}

impl EfficiencyReport {
    /// Recompute the aggregates from the rows (must equal the stored ones).
    pub fn recompute_aggregates(&self) -> Aggregates {
        compute_aggregates(&self.rows)
    }

    /// Write the CSVs and reversed-CDF charts for this report into `dir`.
    /// Returns the created paths. The GPU latency column is a placeholder
    /// (this lab measures CPU only).
    pub fn write_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        let per_image = dir.join("per_image.csv");
        let mut csv = String::from(
            "image_index,benign_loops,adv_loops,i_loop_pct,benign_latency_ns,adv_latency_ns,i_latency_pct,latency_source,i_latency_gpu_pct,l2,linf,benign_bleu,adv_bleu\n",
        );
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{:.6},{},{},{:.6},{},unavailable,{:.9},{:.9},{:.6},{:.6}\n",
                r.image_index,
                r.benign_loops,
                r.adv_loops,
                r.i_loop_pct,
                r.benign_latency_ns,
                r.adv_latency_ns,
                r.i_latency_pct,
                self.latency_source.label(),
                r.l2,
                r.linf,
                r.benign_bleu,
                r.adv_bleu,
            ));
        }
        fs::write(&per_image, csv)?;
        written.push(per_image);

        let aggregate = dir.join("aggregate.csv");
        let a = &self.aggregates;
        let csv = format!(
            "metric,value\nmean_benign_loops,{:.6}\nmean_adv_loops,{:.6}\nmean_i_loop_pct,{:.6}\nmedian_i_loop_pct,{:.6}\nmean_i_latency_pct,{:.6}\nmedian_i_latency_pct,{:.6}\nmean_l2,{:.9}\nmean_linf,{:.9}\nmean_benign_bleu,{:.6}\nmean_adv_bleu,{:.6}\n",
            a.mean_benign_loops,
            a.mean_adv_loops,
            a.mean_i_loop_pct,
            a.median_i_loop_pct,
            a.mean_i_latency_pct,
            a.median_i_latency_pct,
            a.mean_l2,
            a.mean_linf,
            a.mean_benign_bleu,
            a.mean_adv_bleu,
        );
        fs::write(&aggregate, csv)?;
        written.push(aggregate);

        let benign_loops: Vec<f64> = self.rows.iter().map(|r| r.benign_loops as f64).collect();
        let adv_loops: Vec<f64> = self.rows.iter().map(|r| r.adv_loops as f64).collect();
        let benign_lat: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.benign_latency_ns as f64)
            .collect();
        let adv_lat: Vec<f64> = self.rows.iter().map(|r| r.adv_latency_ns as f64).collect();

        for (name, benign, adv) in [
            ("loops", &benign_loops, &adv_loops),
            ("latency", &benign_lat, &adv_lat),
        ] {
            let hist_path = dir.join(format!("{name}_hist.csv"));
            let mut csv = String::from("bin_lo,bin_hi,benign_count,adv_count\n");
            for bin in histogram(benign, adv, 12) {
                csv.push_str(&format!(
                    "{:.6},{:.6},{},{}\n",
                    bin.lo, bin.hi, bin.benign_count, bin.adv_count
                ));
            }
            fs::write(&hist_path, csv)?;
            written.push(hist_path);

            let svg_path = dir.join(format!("{name}_cdf.svg"));
            fs::write(&svg_path, reversed_cdf_svg(name, benign, adv))?;
            written.push(svg_path);
        }

        Ok(written)
    }
}

/// Equal-width histogram over the combined range of both samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub benign_count: usize,
    pub adv_count: usize,
}

pub fn histogram(benign: &[f64], adv: &[f64], bins: usize) -> Vec<HistBin> {
    assert!(bins > 0);
    let all = benign.iter().chain(adv);
    let min = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let max = all.cloned().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return Vec::new();
    }
    let width = ((max - min) / bins as f64).max(1e-12);
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: min + i as f64 * width,
            hi: min + (i + 1) as f64 * width,
            benign_count: 0,
            adv_count: 0,
        })
        .collect();
    let index = |v: f64| (((v - min) / width) as usize).min(bins - 1);
    for &v in benign {
        out[index(v)].benign_count += 1;
    }
    for &v in adv {
        out[index(v)].adv_count += 1;
    }
    out
}

/// Reversed CDF (1 − F): starts at 1.0 at the minimum value and decreases to
/// 0; the area under it over [0, ∞) equals the sample mean, so a larger area
/// means longer decodes.
pub fn reversed_cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push((sorted.first().copied().unwrap_or(0.0), 1.0));
    let mut i = 0usize;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        // P(X > v) after consuming all copies of v
        points.push((v, (sorted.len() - j) as f64 / n));
        i = j;
    }
    points
}

/// Staircase integral of the reversed CDF from 0; equals the mean for
/// non-negative samples.
pub fn area_under_reversed_cdf(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut area = 0.0;
    let mut prev = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let survivors = (sorted.len() - i) as f64 / n;
        area += survivors * (v - prev);
        prev = v;
    }
    area
}

fn reversed_cdf_svg(title: &str, benign: &[f64], adv: &[f64]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const ML: f64 = 50.0;
    const MB: f64 = 40.0;
    const MT: f64 = 30.0;
    const MR: f64 = 20.0;

    let min = benign
        .iter()
        .chain(adv)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = benign
        .iter()
        .chain(adv)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);

    let sx = |v: f64| ML + (v - min) / span * (W - ML - MR);
    let sy = |p: f64| H - MB - p * (H - MB - MT);

    let staircase = |values: &[f64]| -> String {
        let pts = reversed_cdf_points(values);
        let mut d = String::new();
        let mut last_p = 1.0;
        for (k, (v, p)) in pts.iter().enumerate() {
            if k == 0 {
                d.push_str(&format!("{:.2},{:.2} ", sx(*v), sy(1.0)));
            } else {
                // horizontal run at the previous level, then the drop
                d.push_str(&format!("{:.2},{:.2} ", sx(*v), sy(last_p)));
                d.push_str(&format!("{:.2},{:.2} ", sx(*v), sy(*p)));
            }
            last_p = *p;
        }
        d
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">reversed CDF: {title}</text>\n",
        ML
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{:.0}\" x2=\"{:.0}\" y2=\"{:.0}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.0}\" stroke=\"black\"/>\n",
        H - MB
    ));
    svg.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"green\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        staircase(benign)
    ));
    svg.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"red\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        staircase(adv)
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"green\">benign</text>\n",
        W - MR - 80.0,
        MT + 14.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"red\">adversarial</text>\n",
        W - MR - 80.0,
        MT + 28.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(a.len() >= 2);
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j - 1) as f64 / 2.0 + 1.0;
        for &idx in &order[i..j] {
            out[idx] = avg_rank;
        }
        i = j;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i_loop_formula() {
        assert_eq!(i_loop(10, 25), 150.0);
        assert_eq!(i_loop(7, 7), 0.0);
        assert!(i_loop(10, 5) < 0.0);
    }

    fn row(i: usize, benign: usize, adv: usize) -> ReportRow {
        ReportRow {
            image_index: i,
            benign_loops: benign,
            adv_loops: adv,
            i_loop_pct: i_loop(benign, adv),
            benign_latency_ns: latency(benign),
            adv_latency_ns: latency(adv),
            i_latency_pct: i_latency(latency(benign), latency(adv)),
            l2: 1.0,
            linf: 0.02,
            benign_bleu: 0.8,
            adv_bleu: 0.2,
        }
    }

    fn latency(steps: usize) -> u64 {
        crate::metrics::latency_proxy_ns(steps)
    }

    #[test]
    fn single_row_report_aggregates_equal_the_row() {
        let report = build_report("demo", LatencySource::Proxy, vec![row(0, 10, 30)]).unwrap();
        assert_eq!(report.aggregates.mean_i_loop_pct, 200.0);
        assert_eq!(report.aggregates.median_i_loop_pct, 200.0);
        assert_eq!(report.aggregates.mean_benign_loops, 10.0);
    }

    #[test]
    fn aggregates_are_recomputable_exactly() {
        let rows = vec![row(0, 10, 30), row(1, 5, 60), row(2, 20, 20)];
        let report = build_report("demo", LatencySource::Proxy, rows).unwrap();
        assert_eq!(report.aggregates, report.recompute_aggregates());
    }

    #[test]
    fn mismatched_i_loop_column_is_rejected() {
        let mut bad = row(0, 10, 30);
        bad.i_loop_pct = 123.0;
        assert!(build_report("demo", LatencySource::Proxy, vec![bad]).is_err());
    }

    #[test]
    fn reversed_cdf_starts_at_one_and_never_increases() {
        let values = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let pts = reversed_cdf_points(&values);
        assert_eq!(pts[0].1, 1.0);
        assert_eq!(pts[0].0, 1.0); // minimum value
        for w in pts.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        assert_eq!(pts.last().unwrap().1, 0.0);
    }

    #[test]
    fn area_under_reversed_cdf_is_the_mean() {
        let values = [2.0, 4.0, 6.0, 8.0];
        let area = area_under_reversed_cdf(&values);
        assert!((area - 5.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_covers_every_sample() {
        let benign = [1.0, 2.0, 3.0, 4.0];
        let adv = [2.0, 4.0, 6.0, 8.0];
        let bins = histogram(&benign, &adv, 5);
        let b: usize = bins.iter().map(|x| x.benign_count).sum();
        let a: usize = bins.iter().map(|x| x.adv_count).sum();
        assert_eq!(b, benign.len());
        assert_eq!(a, adv.len());
        assert_eq!(bins.len(), 5);
    }

    #[test]
    fn spearman_detects_monotone_and_reversed_orderings() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 2.5, 2.5, 4.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn write_files_emits_the_full_set() {
        let dir = tempfile::tempdir().unwrap();
        let report = build_report(
            "demo",
            LatencySource::Proxy,
            vec![row(0, 10, 30), row(1, 8, 40)],
        )
        .unwrap();
        let files = report.write_files(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        for f in &files {
            assert!(f.exists());
        }
        let csv = std::fs::read_to_string(dir.path().join("per_image.csv")).unwrap();
        assert!(csv.contains("i_latency_gpu_pct"));
        assert!(csv.contains("unavailable"));
    }
}
