//! `nicg-lab gen-data`

use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use nicg_core::datagen::{generate_dataset, save_dataset, DATASET_FILES};
use nicg_core::Result;

use crate::manifest::ManifestBuilder;
use crate::{guard_overwrite, resolve_out};

#[derive(ClapArgs, Serialize)]
pub struct Args {
    /// Dataset seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Training examples.
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    /// Validation examples.
    #[arg(long, default_value_t = 200)]
    pub val: usize,
    /// Test examples.
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let out = resolve_out(args.out.clone(), "dataset")?;
    guard_overwrite(&out, &DATASET_FILES, args.force)?;
    let manifest = ManifestBuilder::start("gen-data", &args);

    let dataset = generate_dataset(args.seed, args.train, args.val, args.test)?;
    save_dataset(&dataset, &out)?;

    let outputs: Vec<PathBuf> = DATASET_FILES.iter().map(|f| out.join(f)).collect();
    manifest.finish(&out, &outputs)?;
    println!(
        "dataset: {} train / {} val / {} test, vocabulary of {} tokens -> {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        dataset.vocab.size(),
        out.display()
    );
    Ok(())
}
