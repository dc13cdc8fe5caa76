//! `nicg-lab attack`

use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use nicg_core::attacks::{
    attack_corpus, save_results, AttackConfig, CorruptionParams, Expectation, RESULT_FILES,
};
use nicg_core::checkpoint::load_model;
use nicg_core::datagen::load_dataset;
use nicg_core::{Error, Result};

use crate::manifest::ManifestBuilder;
use crate::{guard_overwrite, resolve_out, MethodArg, NormArg};

#[derive(ClapArgs, Serialize)]
pub struct Args {
    /// Model checkpoint (from train).
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    /// Dataset directory; test-split images are attacked in order.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Attack method.
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Budget norm.
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    pub norm: NormArg,
    /// Perturbation budget; defaults to the norm's reference value
    /// (5.714 for L2 at 32x32, 0.03 for Linf).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Iteration budget.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Weight on the dependency-breaking loss.
    #[arg(long = "lambda-dep", default_value_t = 1.0)]
    pub lambda_dep: f64,
    /// Weight on the perturbation penalty.
    #[arg(long = "lambda-per", default_value_t = 1e4)]
    pub lambda_per: f64,
    /// Gradient step size.
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Attack seed; per-image streams derive from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attack only the first N test images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Worker threads for fanning out over images (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Monte Carlo samples for the loss expectation (0 = exact).
    #[arg(long = "mc-samples", default_value_t = 0)]
    pub mc_samples: usize,
    /// Quantization bit depth (quantize method).
    #[arg(long = "quant-bits", default_value_t = 3)]
    pub quant_bits: u32,
    /// Gaussian noise scale; defaults to matching the budget.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Compression quality 1..=100 (jpeg method).
    #[arg(long = "jpeg-quality", default_value_t = 75)]
    pub jpeg_quality: u32,
    /// Smoothing weight (tvm method).
    #[arg(long = "tvm-tau", default_value_t = 0.1)]
    pub tvm_tau: f64,
    /// Descent iterations (tvm method).
    #[arg(long = "tvm-iters", default_value_t = 30)]
    pub tvm_iters: usize,
    /// Descent step (tvm method).
    #[arg(long = "tvm-step", default_value_t = 0.02)]
    pub tvm_step: f64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let out = resolve_out(args.out.clone(), "attack")?;
    guard_overwrite(&out, &RESULT_FILES, args.force)?;
    let mut manifest = ManifestBuilder::start("attack", &args);
    manifest.input(&args.model)?;
    manifest.input_dir(&args.data, &nicg_core::datagen::DATASET_FILES)?;

    let (model, _) = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;

    let norm = args.norm.to_core();
    let config = AttackConfig {
        norm,
        eps: args
            .eps
            .unwrap_or_else(|| AttackConfig::default_for(norm).eps),
        iters: args.iters,
        lr: args.lr,
        lambda_dep: args.lambda_dep,
        lambda_per: args.lambda_per,
        seed: args.seed,
        expectation: if args.mc_samples == 0 {
            Expectation::Exact
        } else {
            Expectation::Sampled { m: args.mc_samples }
        },
    };
    config.validate()?;
    let corruption = CorruptionParams {
        quant_bits: args.quant_bits,
        sigma: args.sigma,
        jpeg_quality: args.jpeg_quality,
        tvm_tau: args.tvm_tau,
        tvm_iters: args.tvm_iters,
        tvm_step: args.tvm_step,
    };
    corruption.validate()?;

    let limit = args
        .limit
        .unwrap_or(dataset.test.len())
        .min(dataset.test.len());
    if limit == 0 {
        return Err(Error::Config("no test images to attack".into()));
    }
    let images: Vec<_> = dataset.test[..limit]
        .iter()
        .map(|ex| ex.image.clone())
        .collect();

    let method = args.method.to_core();
    let results = if args.jobs == 0 {
        attack_corpus(&model, &images, method, &config, &corruption)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| attack_corpus(&model, &images, method, &config, &corruption))?
    };

    save_results(&out, &results, &config, &corruption)?;
    let outputs: Vec<PathBuf> = RESULT_FILES.iter().map(|f| out.join(f)).collect();
    manifest.finish(&out, &outputs)?;

    let mean_iloop: f64 = results
        .iter()
        .map(|r| nicg_core::metrics::i_loop(r.benign.steps, r.adversarial.steps))
        .sum::<f64>()
        / results.len() as f64;
    let successes = results.iter().filter(|r| r.success).count();
    println!(
        "{} on {} images: mean loop inflation {:.1}%, {} reported successes -> {}",
        method.label(),
        results.len(),
        mean_iloop,
        successes,
        out.display()
    );
    Ok(())
}
