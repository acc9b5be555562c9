use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Origin, StoredSample};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 8] = b"RKBUF\0\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub origin: Origin,
    pub score: Option<f64>,
}

/// Deep copy of a buffer's contents: the only thing the raw-buffer baseline
/// may look at.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub samples: Vec<SnapshotSample>,
}

impl BufferSnapshot {
    pub fn from_samples<'a>(samples: impl Iterator<Item = &'a StoredSample>) -> Self {
        Self {
            samples: samples
                .map(|s| SnapshotSample {
                    features: s.features.clone(),
                    label: s.label,
                    origin: s.origin,
                    score: s.score,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Samples as a feature matrix and label vector.
    pub fn to_arrays(&self) -> (Array2<f64>, Vec<usize>) {
        let d = self.feature_dim();
        let flat: Vec<f64> = self.samples.iter().flat_map(|s| s.features.iter().copied()).collect();
        (
            Array2::from_shape_vec((self.samples.len(), d), flat).expect("uniform feature length"),
            self.samples.iter().map(|s| s.label).collect(),
        )
    }

    /// CSV with columns `label,origin,score,f0,f1,…`; an empty score cell
    /// means no score.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string(), "origin".into(), "score".into()];
        header.extend((0..self.feature_dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![
                s.label.to_string(),
                match s.origin {
                    Origin::Real => "real".into(),
                    Origin::Averaged => "averaged".into(),
                },
                s.score.map(|v| v.to_string()).unwrap_or_default(),
            ];
            rec.extend(s.features.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = csv::Reader::from_path(path)?;
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(bad(format!("record with {} fields", rec.len())));
            }
            let label = rec[0].parse().map_err(|e| bad(format!("label: {e}")))?;
            let origin = match &rec[1] {
                "real" => Origin::Real,
                "averaged" => Origin::Averaged,
                other => return Err(bad(format!("unknown origin {other:?}"))),
            };
            let score = match &rec[2] {
                "" => None,
                v => Some(v.parse().map_err(|e| bad(format!("score: {e}")))?),
            };
            let features = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("feature: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            samples.push(SnapshotSample {
                features,
                label,
                origin,
                score,
            });
        }
        Ok(Self { samples })
    }

    /// Little-endian binary dump: magic, sample count, feature dim, then per
    /// sample `label: u32, origin: u8, has_score: u8, score: f64, features: f64 × dim`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        w.write_all(&(self.feature_dim() as u64).to_le_bytes())?;
        for s in &self.samples {
            w.write_all(&(s.label as u32).to_le_bytes())?;
            w.write_all(&[u8::from(s.origin == Origin::Averaged), u8::from(s.score.is_some())])?;
            w.write_all(&s.score.unwrap_or(0.0).to_le_bytes())?;
            for v in &s.features {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated"))?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let count = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let mut head = [0u8; 4 + 2 + 8];
            r.read_exact(&mut head).map_err(|_| bad("truncated sample"))?;
            let label = u32::from_le_bytes(head[0..4].try_into().expect("4 bytes")) as usize;
            let origin = if head[4] == 1 { Origin::Averaged } else { Origin::Real };
            let score = (head[5] == 1).then(|| f64::from_le_bytes(head[6..14].try_into().expect("8 bytes")));
            let mut raw = vec![0u8; dim * 8];
            r.read_exact(&mut raw).map_err(|_| bad("truncated features"))?;
            let features = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            samples.push(SnapshotSample {
                features,
                label,
                origin,
                score,
            });
        }
        Ok(Self { samples })
    }

    /// Picks the reader from the file extension (`.csv`, otherwise binary).
    pub fn read(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(path)
        } else if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
        } else {
            Self::read_binary(path)
        }
    }
}
