//! Number formatting, CSV writing and the hashed artifact manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// 17 significant digits: enough for any f64 to parse back bit-exactly.
/// Moderate magnitudes use positional notation, the rest scientific.
/// Missing or non-finite values are written as `NA`.
pub fn fmt17(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt17)
}

pub fn fmt_opt_int<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

/// Header plus rows of pre-formatted fields.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every artifact written by a run, sorted by file name. No timestamps, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct Manifest {
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn from_files(dir: &Path, files: &[PathBuf]) -> std::io::Result<Self> {
        let mut artifacts = files
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                Ok(ArtifactEntry {
                    file: p
                        .strip_prefix(dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .replace('\\', "/"),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        Ok(Self { artifacts })
    }

    pub fn get(&self, file: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.file == file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn format_examples() {
        assert_eq!(fmt17(0.0), "0");
        assert_eq!(fmt17(1.0), "1.0000000000000000");
        assert_eq!(fmt17(86.3), "86.299999999999997");
        assert_eq!(fmt17(f64::NAN), "NA");
        assert_eq!(fmt17(f64::NEG_INFINITY), "-Inf");
        assert_eq!(fmt17(1e-300), "1.0000000000000000e-300");
        assert_eq!(fmt17(-2.5e20), "-2.5000000000000000e20");
        assert_eq!(fmt_opt(None), "NA");
        assert_eq!(fmt_opt_int(Some(2014)), "2014");
    }

    proptest! {
        #[test]
        fn fmt17_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back: f64 = fmt17(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() });
        }
    }

    #[test]
    fn manifest_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("b.txt");
        let a = dir.path().join("a.txt");
        write_text(&b, "bee").unwrap();
        write_text(&a, "").unwrap();
        let m = Manifest::from_files(dir.path(), &[b, a]).unwrap();
        assert_eq!(m.artifacts[0].file, "a.txt");
        assert_eq!(
            m.artifacts[0].sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(m.to_json(), Manifest::from_files(dir.path(), &[dir.path().join("a.txt"), dir.path().join("b.txt")]).unwrap().to_json());
    }
}
