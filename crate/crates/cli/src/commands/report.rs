//! `nicg-lab report`

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use nicg_core::attacks::{load_results, AttackMethod, AttackRecord};
use nicg_core::autodiff::Tensor;
use nicg_core::captioner::CaptionModel;
use nicg_core::checkpoint::load_model;
use nicg_core::datagen::load_dataset;
use nicg_core::metrics::{
    bleu, build_report, i_latency, i_loop, latency_proxy_ns, measure_latency, EfficiencyReport,
    LatencySource, ReportRow,
};
use nicg_core::trainer::strip_eos;
use nicg_core::{Error, Result};

use crate::manifest::ManifestBuilder;
use crate::{guard_overwrite, resolve_out};

#[derive(ClapArgs, Serialize)]
pub struct Args {
    /// Model checkpoint the results were produced against.
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    /// Dataset directory (for reference captions and benign images).
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// One or more attack-result directories.
    #[arg(long, required = true, num_args = 1..)]
    #[serde(skip)]
    pub results: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Measure wall-clock latency instead of the deterministic proxy.
    /// Wall-clock timing runs strictly single-threaded.
    #[arg(long = "wall-clock")]
    pub wall_clock: bool,
    /// Timing trials per image (wall-clock mode).
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Warmup decodes per image (wall-clock mode).
    #[arg(long, default_value_t = 3)]
    pub warmups: usize,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let out = resolve_out(args.out.clone(), "report")?;
    guard_overwrite(&out, &["comparison.csv"], args.force)?;
    let mut manifest = ManifestBuilder::start("report", &args);
    manifest.input(&args.model)?;

    let (model, _) = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;

    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut reports: Vec<(String, EfficiencyReport, Option<f64>)> = Vec::new();

    for (idx, dir) in args.results.iter().enumerate() {
        let records = load_results(dir)?;
        if records.is_empty() {
            return Err(Error::Config(format!("{} holds no results", dir.display())));
        }
        let method = records[0].0.method;
        let lambda_per = records[0].0.config.lambda_per;
        let run_name = format!("{:02}_{}", idx, method.label());

        let mut rows = Vec::with_capacity(records.len());
        for (record, adv_image) in &records {
            rows.push(build_row(&model, &dataset, record, adv_image, &args)?);
        }
        let source = if args.wall_clock {
            LatencySource::WallClock
        } else {
            LatencySource::Proxy
        };
        let report = build_report(method.label(), source, rows)?;
        let run_dir = out.join(&run_name);
        outputs.extend(report.write_files(&run_dir)?);
        let lambda = (method == AttackMethod::Slowdown).then_some(lambda_per);
        reports.push((run_name, report, lambda));
    }

    fs::create_dir_all(&out)?;
    let comparison = comparison_csv(&reports);
    let comparison_path = out.join("comparison.csv");
    fs::write(&comparison_path, comparison)?;
    outputs.push(comparison_path);

    // Table of the slowdown runs by penalty weight, when the inputs sweep it.
    let sweep: BTreeMap<String, &EfficiencyReport> = reports
        .iter()
        .filter_map(|(_, report, lambda)| lambda.map(|l| (format!("{l:e}"), report)))
        .collect();
    if sweep.len() >= 2 {
        let sweep_path = out.join("lambda_sweep.csv");
        fs::write(&sweep_path, sweep_csv(&sweep))?;
        outputs.push(sweep_path);
    }

    manifest.finish(&out, &outputs)?;
    println!("report over {} runs -> {}", reports.len(), out.display());
    Ok(())
}

fn build_row(
    model: &CaptionModel,
    dataset: &nicg_core::datagen::Dataset,
    record: &AttackRecord,
    adv_image: &Tensor,
    args: &Args,
) -> Result<ReportRow> {
    let example = dataset.test.get(record.image_index).ok_or_else(|| {
        Error::Config(format!(
            "result references test image {} but the dataset has {}",
            record.image_index,
            dataset.test.len()
        ))
    })?;

    let (benign_ns, adv_ns) = if args.wall_clock {
        let benign = measure_latency(model, &example.image, args.trials, args.warmups)?;
        let adv = measure_latency(model, adv_image, args.trials, args.warmups)?;
        (benign.median_ns, adv.median_ns)
    } else {
        (
            latency_proxy_ns(record.benign.steps),
            latency_proxy_ns(record.adversarial.steps),
        )
    };

    let refs = strip_eos(&example.captions);
    let benign_tokens = caption_tokens(&record.benign.tokens, model);
    let adv_tokens = caption_tokens(&record.adversarial.tokens, model);

    Ok(ReportRow {
        image_index: record.image_index,
        benign_loops: record.benign.steps,
        adv_loops: record.adversarial.steps,
        i_loop_pct: i_loop(record.benign.steps, record.adversarial.steps),
        benign_latency_ns: benign_ns,
        adv_latency_ns: adv_ns,
        i_latency_pct: i_latency(benign_ns, adv_ns),
        l2: record.l2,
        linf: record.linf,
        benign_bleu: bleu(&benign_tokens, &refs),
        adv_bleu: bleu(&adv_tokens, &refs),
    })
}

fn caption_tokens(tokens: &[usize], model: &CaptionModel) -> Vec<usize> {
    match tokens.last() {
        Some(&t) if t == model.vocab.eos() => tokens[..tokens.len() - 1].to_vec(),
        _ => tokens.to_vec(),
    }
}

/// Metric rows × run columns, with a flag column naming the run that
/// achieved the highest loop inflation per row.
fn comparison_csv(reports: &[(String, EfficiencyReport, Option<f64>)]) -> String {
    let metrics: [(&str, fn(&EfficiencyReport) -> f64); 6] = [
        ("mean_i_loop_pct", |r| r.aggregates.mean_i_loop_pct),
        ("mean_i_latency_pct", |r| r.aggregates.mean_i_latency_pct),
        ("median_i_loop_pct", |r| r.aggregates.median_i_loop_pct),
        ("mean_l2", |r| r.aggregates.mean_l2),
        ("mean_linf", |r| r.aggregates.mean_linf),
        ("mean_adv_bleu", |r| r.aggregates.mean_adv_bleu),
    ];
    let mut csv = String::from("metric");
    for (name, _, _) in reports {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push_str(",best\n");
    for (metric, get) in metrics {
        csv.push_str(metric);
        let values: Vec<f64> = reports.iter().map(|(_, r, _)| get(r)).collect();
        for v in &values {
            csv.push_str(&format!(",{v:.6}"));
        }
        // first strict maximum, so ties resolve to the earliest run
        let mut best_idx = 0usize;
        for (i, v) in values.iter().enumerate().skip(1) {
            if *v > values[best_idx] {
                best_idx = i;
            }
        }
        let best = reports[best_idx].0.as_str();
        csv.push_str(&format!(",{best}\n"));
    }
    csv
}

fn sweep_csv(sweep: &BTreeMap<String, &EfficiencyReport>) -> String {
    let mut csv = String::from("metric");
    for lambda in sweep.keys() {
        csv.push_str(&format!(",lambda_{lambda}"));
    }
    csv.push('\n');
    let metrics: [(&str, fn(&EfficiencyReport) -> f64); 3] = [
        ("mean_i_loop_pct", |r| r.aggregates.mean_i_loop_pct),
        ("mean_i_latency_pct", |r| r.aggregates.mean_i_latency_pct),
        ("mean_adv_bleu", |r| r.aggregates.mean_adv_bleu),
    ];
    for (metric, get) in metrics {
        csv.push_str(metric);
        for report in sweep.values() {
            csv.push_str(&format!(",{:.6}", get(report)));
        }
        csv.push('\n');
    }
    csv
}
