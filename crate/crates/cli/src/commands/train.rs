//! `nicg-lab train`

use std::fs;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use nicg_core::checkpoint::save_model;
use nicg_core::datagen::load_dataset;
use nicg_core::trainer::{train, TrainConfig};
use nicg_core::Result;

use crate::manifest::ManifestBuilder;
use crate::{guard_overwrite, resolve_out};

const OUTPUT_FILES: [&str; 2] = ["model.ckpt", "training_log.csv"];

#[derive(ClapArgs, Serialize)]
pub struct Args {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Training epochs.
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    /// Seed for parameter init and shuffling.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Minibatch size.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let out = resolve_out(args.out.clone(), "model")?;
    guard_overwrite(&out, &OUTPUT_FILES, args.force)?;
    let mut manifest = ManifestBuilder::start("train", &args);
    manifest.input_dir(&args.data, &nicg_core::datagen::DATASET_FILES)?;

    let dataset = load_dataset(&args.data)?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        clip: args.clip,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&dataset, &config)?;

    fs::create_dir_all(&out)?;
    let ckpt = out.join("model.ckpt");
    save_model(&model, args.seed, &ckpt)?;

    let mut csv = String::from("epoch,train_loss,val_loss,val_bleu\n");
    for s in &log {
        csv.push_str(&format!(
            "{},{:.9},{:.9},{:.9}\n",
            s.epoch, s.train_loss, s.val_loss, s.val_bleu
        ));
    }
    let log_path = out.join("training_log.csv");
    fs::write(&log_path, csv)?;

    manifest.finish(&out, &[ckpt, log_path])?;
    let last = log.last().expect("at least one epoch");
    println!(
        "trained {} epochs: val loss {:.4}, val BLEU {:.4} -> {}",
        log.len(),
        last.val_loss,
        last.val_bleu,
        out.display()
    );
    Ok(())
}
