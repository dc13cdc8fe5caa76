//! Dataset files: line-delimited JSON records plus a manifest.
//!
//! Each record carries the image as base-16 little-endian `f64` bytes
//! alongside its caption token lists; the manifest records the seed, split
//! sizes, image shape, and full vocabulary.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::captioner::Vocabulary;
use crate::error::{Error, Result};

use super::{CaptionedExample, Dataset};

/// File names a saved dataset is made of, in write order.
pub const DATASET_FILES: [&str; 4] = ["manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"];

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_shape: Vec<usize>,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct Record {
    image_hex: String,
    captions: Vec<Vec<usize>>,
}

/// Hex-encode `f64` values as little-endian bytes.
pub(crate) fn floats_to_hex(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 16);
    for v in values {
        for b in v.to_le_bytes() {
            s.push_str(&format!("{b:02x}"));
        }
    }
    s
}

pub(crate) fn hex_to_floats(hex: &str) -> Result<Vec<f64>> {
    if hex.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "hex image payload of {} chars is not a multiple of 16",
            hex.len()
        )));
    }
    let bytes: Result<Vec<u8>> = (0..hex.len() / 2)
        .map(|i| {
            u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::Format(format!("bad hex byte at {i}: {e}")))
        })
        .collect();
    let bytes = bytes?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Write `manifest.json` and the three split files into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let image_shape = dataset
        .train
        .first()
        .map(|ex| ex.image.shape().to_vec())
        .unwrap_or_default();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        seed: dataset.seed,
        n_train: dataset.train.len(),
        n_val: dataset.val.len(),
        n_test: dataset.test.len(),
        image_shape,
        vocab: dataset.vocab.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (name, split) in [
        ("train.jsonl", &dataset.train),
        ("val.jsonl", &dataset.val),
        ("test.jsonl", &dataset.test),
    ] {
        let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
        for ex in split.iter() {
            let record = Record {
                image_hex: floats_to_hex(ex.image.data()),
                captions: ex.captions.clone(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read a dataset saved by [`save_dataset`], validating counts and shapes.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} unsupported",
            manifest.format_version
        )));
    }
    manifest.vocab.validate()?;

    let read_split = |name: &str, expect: usize| -> Result<Vec<CaptionedExample>> {
        let reader = BufReader::new(fs::File::open(dir.join(name))?);
        let mut out = Vec::with_capacity(expect);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{name}:{}: {e}", lineno + 1)))?;
            let data = hex_to_floats(&record.image_hex)?;
            let image = Tensor::new(manifest.image_shape.clone(), data)
                .map_err(|e| Error::Format(format!("{name}:{}: {e}", lineno + 1)))?;
            out.push(CaptionedExample {
                image,
                captions: record.captions,
            });
        }
        if out.len() != expect {
            return Err(Error::Format(format!(
                "{name} holds {} records, manifest says {expect}",
                out.len()
            )));
        }
        Ok(out)
    };

    Ok(Dataset {
        seed: manifest.seed,
        vocab: manifest.vocab.clone(),
        train: read_split("train.jsonl", manifest.n_train)?,
        val: read_split("val.jsonl", manifest.n_val)?,
        test: read_split("test.jsonl", manifest.n_test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;

    #[test]
    fn hex_round_trip_is_exact() {
        let vals = vec![0.0, 1.0, -1.5, 0.1, f64::MIN_POSITIVE, 123456.789];
        let hex = floats_to_hex(&vals);
        assert_eq!(hex_to_floats(&hex).unwrap(), vals);
    }

    #[test]
    fn bad_hex_is_a_format_error() {
        assert!(hex_to_floats("zz").is_err());
        assert!(hex_to_floats("0102").is_err());
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(17, 12, 3, 3).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn truncated_split_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(17, 5, 2, 2).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // chop one record off the training file
        let path = dir.path().join("train.jsonl");
        let contents = std::fs::read_to_string(&path).unwrap();
        let shorter: Vec<&str> = contents.lines().take(4).collect();
        std::fs::write(&path, shorter.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()).unwrap_err(),
            Error::Format(_)
        ));
    }
}
