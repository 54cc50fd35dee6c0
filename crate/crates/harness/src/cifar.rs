//! CIFAR-100 binary format: fixed 3074-byte records of one coarse-label byte,
//! one fine-label byte and 3072 pixel bytes (three 32×32 row-major planes,
//! red, green, blue).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use emoc_core::{Sample, Tensor};

use crate::{HarnessError, Result};

pub const RECORD_LEN: usize = 3074;
pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
pub const FINE_CLASSES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

impl CifarSplit {
    pub fn file_name(self) -> &'static str {
        match self {
            CifarSplit::Train => "train.bin",
            CifarSplit::Test => "test.bin",
        }
    }
}

/// Resolves `path` to a data file: a directory is joined with the split's
/// file name, anything else is taken as the file itself.
pub fn split_path(path: &Path, split: CifarSplit) -> PathBuf {
    if path.is_dir() {
        path.join(split.file_name())
    } else {
        path.to_path_buf()
    }
}

/// Undecoded records, kept as bytes so the 50k-image training split fits in
/// memory comfortably.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCifar {
    pub coarse_labels: Vec<u8>,
    pub fine_labels: Vec<u8>,
    pixels: Vec<u8>,
}

impl RawCifar {
    pub fn load(path: &Path, split: CifarSplit) -> Result<Self> {
        let file = split_path(path, split);
        if !file.is_file() {
            return Err(HarnessError::MissingFile(file));
        }
        let bytes = fs::read(&file).map_err(HarnessError::io(&file))?;
        Self::parse(&file, &bytes)
    }

    fn parse(file: &Path, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(RECORD_LEN) {
            return Err(HarnessError::TruncatedRecord {
                path: file.to_path_buf(),
                len: bytes.len() as u64,
            });
        }
        let n = bytes.len() / RECORD_LEN;
        let mut raw = Self {
            coarse_labels: Vec::with_capacity(n),
            fine_labels: Vec::with_capacity(n),
            pixels: Vec::with_capacity(n * PIXELS),
        };
        for (record, chunk) in bytes.chunks_exact(RECORD_LEN).enumerate() {
            let fine = chunk[1];
            if usize::from(fine) >= FINE_CLASSES {
                return Err(HarnessError::LabelOutOfRange {
                    path: file.to_path_buf(),
                    record,
                    label: fine,
                });
            }
            raw.coarse_labels.push(chunk[0]);
            raw.fine_labels.push(fine);
            raw.pixels.extend_from_slice(&chunk[2..]);
        }
        Ok(raw)
    }

    pub fn len(&self) -> usize {
        self.fine_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine_labels.is_empty()
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Image `i` as a `[3, 32, 32]` tensor scaled to `[0, 1]`.
    pub fn features(&self, i: usize) -> Tensor<f64> {
        let values = self.pixels(i).iter().map(|&b| f64::from(b) / 255.0).collect();
        Tensor::new(vec![CHANNELS, IMAGE_SIDE, IMAGE_SIDE], values).expect("fixed image shape")
    }
}

/// Loads every record of a split as samples labeled with their fine class.
pub fn load_cifar100(path: &Path, split: CifarSplit) -> Result<Vec<Sample<f64>>> {
    let raw = RawCifar::load(path, split)?;
    Ok((0..raw.len())
        .map(|i| Sample::new(i, raw.features(i), Some(usize::from(raw.fine_labels[i]))))
        .collect())
}

/// Encodes a sample as one record, quantizing features to the nearest
/// multiple of 1/255.
pub fn encode_record(features: &Tensor<f64>, coarse: u8, fine: u8) -> Result<Vec<u8>> {
    if features.len() != PIXELS {
        return Err(HarnessError::Config(format!(
            "CIFAR records hold {PIXELS} values, got {}",
            features.len()
        )));
    }
    let mut rec = Vec::with_capacity(RECORD_LEN);
    rec.push(coarse);
    rec.push(fine);
    rec.extend(
        features
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(rec)
}

pub fn write_records(path: &Path, records: &[Vec<u8>]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(HarnessError::io(path))?;
    for r in records {
        f.write_all(r).map_err(HarnessError::io(path))?;
    }
    Ok(())
}
