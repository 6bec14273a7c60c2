//! Artifact files. Every CSV row carries the config hash: first column in
//! tables, last column in coefficient files.

use crate::error::CliError;
use fdp_core::wavelet::MultiresCoefficients;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub struct OutputDir {
    root: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, hash: &str) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(OutputDir { root, hash: hash.to_string(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.root.join(name))?;
        let mut head = vec!["config_hash"];
        head.extend_from_slice(header);
        w.write_record(&head)?;
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            w.write_record(std::iter::once(self.hash.as_str()).chain(r.iter().map(String::as_str)))?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// `kind,level,shift,value,config_hash`, readable by
    /// `fdp_core::wavelet::read_coefficients_csv`.
    pub fn write_coefficients(&mut self, name: &str, coeffs: &MultiresCoefficients) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.root.join(name))?;
        w.write_record(["kind", "level", "shift", "value", "config_hash"])?;
        let idx = coeffs.index_set();
        for (r, v) in coeffs.approx().iter().enumerate() {
            w.write_record(["approx", &idx.l0().to_string(), &(r + 1).to_string(), &num(*v), &self.hash])?;
        }
        for (p, v) in coeffs.detail().iter().enumerate() {
            let (l, k) = idx.detail_index(p);
            w.write_record(["detail", &l.to_string(), &k.to_string(), &num(*v), &self.hash])?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.root.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Shortest round-trip formatting, so equal values give equal bytes.
pub fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
