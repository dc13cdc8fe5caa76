//! Attack result persistence: a structured-text record per image plus a raw
//! binary sidecar holding the adversarial images.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::captioner::TraceSummary;
use crate::error::{Error, Result};

use super::{AttackConfig, AttackMethod, AttackResult, CorruptionParams, LossSample};

/// Files a saved result set is made of.
pub const RESULT_FILES: [&str; 2] = ["results.jsonl", "adv_images.bin"];

/// Serializable per-image record. The adversarial pixels live in the binary
/// sidecar at `image_index`-independent record order; `image_shape` pins the
/// slice width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub method: AttackMethod,
    pub image_index: usize,
    pub config: AttackConfig,
    pub corruption: CorruptionParams,
    pub image_shape: Vec<usize>,
    pub l2: f64,
    pub linf: f64,
    pub success: bool,
    pub iterations: usize,
    pub benign: TraceSummary,
    pub adversarial: TraceSummary,
    pub loss_curve: Vec<LossSample>,
}

impl AttackRecord {
    pub fn from_result(
        result: &AttackResult,
        config: &AttackConfig,
        corruption: &CorruptionParams,
    ) -> Self {
        AttackRecord {
            method: result.method,
            image_index: result.image_index,
            config: config.clone(),
            corruption: corruption.clone(),
            image_shape: result.adv_image.shape().to_vec(),
            l2: result.l2,
            linf: result.linf,
            success: result.success,
            iterations: result.iterations,
            benign: result.benign.summary(),
            adversarial: result.adversarial.summary(),
            loss_curve: result.loss_curve.clone(),
        }
    }
}

/// Write `results.jsonl` and `adv_images.bin` into `dir`. The config echoed
/// in each record is the corpus-level config (per-image seeds derive from
/// it).
pub fn save_results(
    dir: &Path,
    results: &[AttackResult],
    config: &AttackConfig,
    corruption: &CorruptionParams,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = BufWriter::new(fs::File::create(dir.join("results.jsonl"))?);
    let mut sidecar = BufWriter::new(fs::File::create(dir.join("adv_images.bin"))?);
    for result in results {
        let record = AttackRecord::from_result(result, config, corruption);
        serde_json::to_writer(&mut jsonl, &record)?;
        jsonl.write_all(b"\n")?;
        for v in result.adv_image.data() {
            sidecar.write_all(&v.to_le_bytes())?;
        }
    }
    jsonl.flush()?;
    sidecar.flush()?;
    Ok(())
}

/// Read a result set back: records in file order, each paired with its
/// adversarial image from the sidecar.
pub fn load_results(dir: &Path) -> Result<Vec<(AttackRecord, Tensor)>> {
    let reader = BufReader::new(fs::File::open(dir.join("results.jsonl"))?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AttackRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("results.jsonl:{}: {e}", lineno + 1)))?;
        records.push(record);
    }

    let bytes = fs::read(dir.join("adv_images.bin"))?;
    let expected: usize = records
        .iter()
        .map(|r| r.image_shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "sidecar holds {} bytes, records imply {expected}",
            bytes.len()
        )));
    }

    let mut out = Vec::with_capacity(records.len());
    let mut offset = 0usize;
    for record in records {
        let count: usize = record.image_shape.iter().product();
        let data: Vec<f64> = bytes[offset..offset + count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        offset += count * 8;
        let image = Tensor::new(record.image_shape.clone(), data)?;
        out.push((record, image));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::untrained_tiny;
    use super::super::{attack_corpus, NormKind};
    use super::*;

    #[test]
    fn result_round_trip_preserves_records_and_images() {
        let (model, image) = untrained_tiny();
        let config = AttackConfig {
            iters: 3,
            seed: 9,
            ..AttackConfig::default_for(NormKind::L2)
        };
        let corruption = CorruptionParams::default();
        let images = vec![image.clone(), image];
        let results = attack_corpus(
            &model,
            &images,
            AttackMethod::Slowdown,
            &config,
            &corruption,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_results(dir.path(), &results, &config, &corruption).unwrap();
        let loaded = load_results(dir.path()).unwrap();
        assert_eq!(loaded.len(), results.len());
        for ((record, image), original) in loaded.iter().zip(&results) {
            assert_eq!(record.image_index, original.image_index);
            assert_eq!(record.l2, original.l2);
            assert_eq!(image, &original.adv_image);
            assert_eq!(record.benign.steps, original.benign.steps);
            assert_eq!(record.loss_curve, original.loss_curve);
        }
    }

    #[test]
    fn sidecar_length_mismatch_is_detected() {
        let (model, image) = untrained_tiny();
        let config = AttackConfig {
            iters: 2,
            ..AttackConfig::default_for(NormKind::L2)
        };
        let corruption = CorruptionParams::default();
        let results = attack_corpus(
            &model,
            &[image],
            AttackMethod::Slowdown,
            &config,
            &corruption,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_results(dir.path(), &results, &config, &corruption).unwrap();
        let sidecar = dir.path().join("adv_images.bin");
        let bytes = fs::read(&sidecar).unwrap();
        fs::write(&sidecar, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_results(dir.path()).unwrap_err(),
            Error::Format(_)
        ));
    }
}
