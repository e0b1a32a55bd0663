//! Per-face saliency fields and their text serialization.
//!
//! File layout: one header line
//!
//! ```text
//! # meshsal-saliency kind=ground-truth normalization=distribution faces=2000 params={"aperture_deg":"1"}
//! ```
//!
//! followed by one value per line, line `k` holding face `k`. Values are written in
//! shortest round-trip form so a reload is bit-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    GroundTruth,
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Unnormalized accumulated density.
    Raw,
    /// Sums to one.
    Distribution,
    /// Divided by its maximum.
    Max,
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::GroundTruth => "ground-truth",
            MapKind::Prediction => "prediction",
        })
    }
}

impl FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ground-truth" => Ok(MapKind::GroundTruth),
            "prediction" => Ok(MapKind::Prediction),
            other => Err(format!("unknown map kind '{other}'")),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Raw => "raw",
            Normalization::Distribution => "distribution",
            Normalization::Max => "max",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "distribution" => Ok(Normalization::Distribution),
            "max" => Ok(Normalization::Max),
            other => Err(format!("unknown normalization '{other}'")),
        }
    }
}

/// Nonnegative scalar per mesh face.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Vec<f64>,
    pub kind: MapKind,
    pub normalization: Normalization,
    pub params: BTreeMap<String, String>,
}

impl SaliencyMap {
    pub fn new(values: Vec<f64>, kind: MapKind, normalization: Normalization) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric(format!(
                "saliency value at face {i} is {} (must be finite and nonnegative)",
                values[i]
            )));
        }
        Ok(SaliencyMap {
            values,
            kind,
            normalization,
            params: BTreeMap::new(),
        })
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn face_count(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Values scaled to sum to one; all zeros stays all zeros.
    pub fn distribution(&self) -> Vec<f64> {
        scaled(&self.values, self.total())
    }

    /// Values scaled so the maximum is one; all zeros stays all zeros.
    pub fn max_normalized(&self) -> Vec<f64> {
        scaled(&self.values, self.max())
    }

    pub fn to_text(&self) -> String {
        let params = serde_json::to_string(&self.params).expect("string map serializes");
        let mut out = format!(
            "# meshsal-saliency kind={} normalization={} faces={} params={}\n",
            self.kind,
            self.normalization,
            self.values.len(),
            params
        );
        for v in &self.values {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty saliency file"))?;
        let rest = header
            .strip_prefix("# meshsal-saliency ")
            .ok_or_else(|| format_err(1, "missing '# meshsal-saliency' header"))?;
        let (fields, params) = match rest.split_once(" params=") {
            Some((f, p)) => (f, Some(p)),
            None => (rest, None),
        };
        let mut kind = None;
        let mut normalization = None;
        let mut faces = None;
        for field in fields.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| format_err(1, &format!("malformed header field '{field}'")))?;
            match k {
                "kind" => kind = Some(v.parse::<MapKind>().map_err(|e| format_err(1, &e))?),
                "normalization" => normalization = Some(v.parse::<Normalization>().map_err(|e| format_err(1, &e))?),
                "faces" => faces = Some(v.parse::<usize>().map_err(|e| format_err(1, &e.to_string()))?),
                _ => {}
            }
        }
        let params: BTreeMap<String, String> = match params {
            Some(p) => serde_json::from_str(p).map_err(|e| format_err(1, &format!("params: {e}")))?,
            None => BTreeMap::new(),
        };
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|e| format_err(i + 1, &format!("'{line}': {e}")))?,
            );
        }
        if let Some(n) = faces {
            if n != values.len() {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: values.len(),
                });
            }
        }
        let mut map = SaliencyMap::new(
            values,
            kind.unwrap_or(MapKind::GroundTruth),
            normalization.unwrap_or(Normalization::Raw),
        )?;
        map.params = params;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn scaled(values: &[f64], by: f64) -> Vec<f64> {
    if by > 0.0 {
        values.iter().map(|v| v / by).collect()
    } else {
        values.to_vec()
    }
}

fn format_err(line: usize, message: &str) -> Error {
    Error::Format {
        line,
        message: message.to_string(),
    }
}
