//! Epoch bundles: a text manifest plus a raw `f32` payload.
//!
//! The manifest holds one `key=value` per line:
//!
//! ```text
//! fs=250
//! n_epochs=10
//! n_components=9
//! n_samples=1250
//! subject_id=s001
//! site=UdeA1
//! group=ACr
//! age=35.5
//! sex=F
//! ```
//!
//! Optional keys: `epoch_seconds` (checked against `n_samples / fs`) and
//! `payload` (file name relative to the manifest; defaults to the manifest
//! path with extension `.f32`). The payload is little-endian 32-bit floats in
//! epoch-major, component-middle, sample-minor order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datamodel::{Group, RecordMeta, Sex};
use crate::error::{Error, Result};

use super::table::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub meta: RecordMeta,
    pub fs: f64,
    n_epochs: usize,
    n_components: usize,
    n_samples: usize,
    data: Vec<f64>,
}

impl EpochSet {
    /// `data` is epoch-major, component-middle, sample-minor.
    pub fn new(
        meta: RecordMeta,
        fs: f64,
        n_epochs: usize,
        n_components: usize,
        n_samples: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        meta.validate()?;
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Validation(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if n_components == 0 || n_epochs == 0 || n_samples == 0 {
            return Err(Error::Validation(
                "epoch set needs at least one epoch, component and sample".into(),
            ));
        }
        if data.len() != n_epochs * n_components * n_samples {
            return Err(Error::Validation(format!(
                "data length {} does not match {n_epochs}x{n_components}x{n_samples}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite sample in epoch {} (component {}, sample {})",
                i / (n_components * n_samples),
                (i / n_samples) % n_components,
                i % n_samples
            )));
        }
        Ok(Self {
            meta,
            fs,
            n_epochs,
            n_components,
            n_samples,
            data,
        })
    }

    /// Builds from per-component continuous series, cutting consecutive
    /// epochs of `n_samples` each (any tail shorter than an epoch is
    /// discarded).
    pub fn from_continuous(
        meta: RecordMeta,
        fs: f64,
        n_samples: usize,
        series: &[Vec<f64>],
    ) -> Result<Self> {
        let len = series.iter().map(Vec::len).min().unwrap_or(0);
        let n_epochs = len / n_samples.max(1);
        let mut data = Vec::with_capacity(n_epochs * series.len() * n_samples);
        for e in 0..n_epochs {
            for s in series {
                data.extend_from_slice(&s[e * n_samples..(e + 1) * n_samples]);
            }
        }
        Self::new(meta, fs, n_epochs, series.len(), n_samples, data)
    }

    pub fn n_epochs(&self) -> usize {
        self.n_epochs
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn epoch_seconds(&self) -> f64 {
        self.n_samples as f64 / self.fs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn segment(&self, epoch: usize, component: usize) -> &[f64] {
        let start = (epoch * self.n_components + component) * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    /// All epochs of one component.
    pub fn component_epochs(&self, component: usize) -> Vec<&[f64]> {
        (0..self.n_epochs)
            .map(|e| self.segment(e, component))
            .collect()
    }

    fn manifest_text(&self, payload: &str) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "fs={}", fmt_f64(self.fs));
        let _ = writeln!(s, "n_epochs={}", self.n_epochs);
        let _ = writeln!(s, "n_components={}", self.n_components);
        let _ = writeln!(s, "n_samples={}", self.n_samples);
        let _ = writeln!(s, "subject_id={}", m.subject_id);
        let _ = writeln!(s, "site={}", m.site);
        let _ = writeln!(s, "group={}", m.group);
        let _ = writeln!(s, "age={}", fmt_f64(m.age));
        let _ = writeln!(s, "sex={}", m.sex);
        let _ = writeln!(s, "payload={payload}");
        s
    }
}

fn default_payload(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

/// Writes the manifest at `manifest_path` and the payload next to it.
/// Samples are stored as `f32`.
pub fn write_epochs(set: &EpochSet, manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let payload = default_payload(manifest_path);
    let payload_name = payload
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("bad manifest path {}", manifest_path.display())))?
        .to_owned();
    let mut bytes = Vec::with_capacity(set.data.len() * 4);
    for &v in &set.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    fs::write(manifest_path, set.manifest_text(&payload_name))
        .map_err(|e| Error::io(manifest_path, e))
}

pub fn load_epochs(manifest_path: impl AsRef<Path>) -> Result<EpochSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut kv = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: lineno + 1,
            column: String::new(),
            message: format!("expected key=value, got `{line}`"),
        })?;
        kv.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingColumn(k.into()))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Parse {
            row: 0,
            column: k.into(),
            message: format!("`{v}` is not a valid number"),
        })
    }
    let fs_hz: f64 = num("fs", get("fs")?)?;
    if !(fs_hz > 0.0) {
        return Err(Error::Validation(format!(
            "fs must be positive, got {fs_hz}"
        )));
    }
    let n_epochs: usize = num("n_epochs", get("n_epochs")?)?;
    let n_components: usize = num("n_components", get("n_components")?)?;
    let n_samples: usize = num("n_samples", get("n_samples")?)?;
    if let Some(secs) = kv.get("epoch_seconds") {
        let secs: f64 = num("epoch_seconds", secs)?;
        if (fs_hz * secs).round() as usize != n_samples {
            return Err(Error::Validation(format!(
                "n_samples {n_samples} != round(fs x epoch_seconds) = {}",
                (fs_hz * secs).round()
            )));
        }
    }
    let meta = RecordMeta {
        subject_id: get("subject_id")?.to_owned(),
        site: get("site")?.to_owned(),
        group: get("group")?.parse::<Group>().map_err(|m| Error::Parse {
            row: 0,
            column: "group".into(),
            message: m,
        })?,
        age: num("age", get("age")?)?,
        sex: get("sex")?.parse::<Sex>().map_err(|m| Error::Parse {
            row: 0,
            column: "sex".into(),
            message: m,
        })?,
    };
    let payload = match kv.get("payload") {
        Some(name) => manifest_path.with_file_name(name),
        None => default_payload(manifest_path),
    };
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = n_epochs * n_components * n_samples * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: payload,
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EpochSet::new(meta, fs_hz, n_epochs, n_components, n_samples, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RecordMeta {
        RecordMeta {
            subject_id: "s001".into(),
            site: "UdeA1".into(),
            group: Group::ACr,
            age: 35.5,
            sex: Sex::F,
        }
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i % 97) as f64 - 48.0) / 8.0).collect()
    }

    #[test]
    fn full_recording_shape_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.epochs");
        let set = EpochSet::new(meta(), 250.0, 10, 9, 1250, ramp(10 * 9 * 1250)).unwrap();
        write_epochs(&set, &path).unwrap();
        let back = load_epochs(&path).unwrap();
        assert_eq!(back.n_epochs(), 10);
        assert_eq!(back.n_components(), 9);
        assert_eq!(back.n_samples(), 1250);
        assert_eq!(back.epoch_seconds(), 5.0);
        assert_eq!(back, set);
    }

    #[test]
    fn short_payload_is_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.epochs");
        let set = EpochSet::new(meta(), 250.0, 2, 2, 500, ramp(2000)).unwrap();
        write_epochs(&set, &path).unwrap();
        let payload = path.with_extension("f32");
        let mut bytes = fs::read(&payload).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&payload, bytes).unwrap();
        assert!(matches!(
            load_epochs(&path),
            Err(Error::Truncated {
                expected: 8000,
                found: 7996,
                ..
            })
        ));
    }

    #[test]
    fn nan_reports_epoch_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.epochs");
        let set = EpochSet::new(meta(), 250.0, 3, 2, 500, ramp(3000)).unwrap();
        write_epochs(&set, &path).unwrap();
        let payload = path.with_extension("f32");
        let mut bytes = fs::read(&payload).unwrap();
        let idx = (2 * 2 * 500 + 17) * 4;
        bytes[idx..idx + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&payload, bytes).unwrap();
        match load_epochs(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("epoch 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_positive_fs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.epochs");
        let set = EpochSet::new(meta(), 250.0, 1, 1, 10, ramp(10)).unwrap();
        write_epochs(&set, &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("fs=250.0", "fs=0");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_epochs(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn epoch_seconds_key_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.epochs");
        let set = EpochSet::new(meta(), 250.0, 1, 1, 1250, ramp(1250)).unwrap();
        write_epochs(&set, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("epoch_seconds=5\n");
        fs::write(&path, &text).unwrap();
        assert!(load_epochs(&path).is_ok());
        fs::write(&path, text.replace("epoch_seconds=5", "epoch_seconds=4")).unwrap();
        assert!(matches!(load_epochs(&path), Err(Error::Validation(_))));
    }
}
