//! Tab-separated dataset manifests: `id  image_path  label_path  split`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!(
                    "manifest line {}: expected 4 tab-separated fields, found {}",
                    i + 1,
                    fields.len()
                )));
            }
            let entry = ManifestEntry {
                id: fields[0].to_string(),
                image: PathBuf::from(fields[1]),
                label: PathBuf::from(fields[2]),
                split: fields[3].trim_end().parse()?,
            };
            if let Some(prev) = seen.insert(entry.id.clone(), i + 1) {
                return Err(Error::Data(format!(
                    "manifest line {}: id {} already listed on line {prev}",
                    i + 1,
                    entry.id
                )));
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                e.image.display(),
                e.label.display(),
                e.split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Assign splits by a seeded shuffle followed by a contiguous partition into
/// `(train, val, test)` fractions. Entry order is preserved; only the split
/// tags change.
pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let n = manifest.entries.len();
    if n == 0 {
        return Err(Error::Data("cannot split an empty manifest".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.entries[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            entries: (0..n)
                .map(|i| ManifestEntry {
                    id: format!("s{i:04}"),
                    image: format!("images/s{i:04}.pgm").into(),
                    label: format!("labels/s{i:04}.pgm").into(),
                    split: Split::Train,
                })
                .collect(),
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = split(&manifest(10), [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_and_bad_rows_rejected() {
        assert!(DatasetManifest::parse("a\tx\ty\ttrain\na\tx\ty\tval\n").is_err());
        assert!(DatasetManifest::parse("a\tx\ty\n").is_err());
        assert!(DatasetManifest::parse("a\tx\ty\tholdout\n").is_err());
    }

    #[test]
    fn all_train_fraction() {
        let m = split(&manifest(7), [1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(m.count(Split::Train), 7);
    }

    #[test]
    fn rounded_fractions_hit_exact_counts() {
        let n = 647.0;
        let m = split(&manifest(647), [487.0 / n, 80.0 / n, 80.0 / n], 11).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (487, 80, 80));
    }

    #[test]
    fn seeded_and_stable() {
        let a = split(&manifest(50), [0.7, 0.15, 0.15], 5).unwrap();
        let b = split(&manifest(50), [0.7, 0.15, 0.15], 5).unwrap();
        let c = split(&manifest(50), [0.7, 0.15, 0.15], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(split(&DatasetManifest::default(), [1.0, 0.0, 0.0], 0).is_err());
        assert!(split(&manifest(3), [0.5, 0.2, 0.2], 0).is_err());
    }
}
