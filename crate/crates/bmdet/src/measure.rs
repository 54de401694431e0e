//! Finite atomic probability measures on the real line.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A finite atomic probability measure: a list of `(location, weight)` atoms.
///
/// Weights must be nonnegative and sum to 1 within `1e-12`. Duplicate
/// locations are permitted and merged by [`SpectralMeasure::normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    pub atoms: Vec<(f64, f64)>,
}

const WEIGHT_TOL: f64 = 1e-12;

impl SpectralMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidInput("measure needs at least one atom".into()));
        }
        let mut total = 0.0;
        for &(loc, w) in &atoms {
            if !loc.is_finite() || !w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite atom ({loc}, {w})"
                )));
            }
            if w < 0.0 {
                return Err(Error::InvalidInput(format!("negative weight {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(SpectralMeasure { atoms })
    }

    /// Point mass at `a`.
    pub fn dirac(a: f64) -> Self {
        SpectralMeasure { atoms: vec![(a, 1.0)] }
    }

    /// Uniform measure on the given locations (the empirical spectral
    /// distribution of a diagonal matrix).
    pub fn empirical(locations: &[f64]) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidInput("empty location list".into()));
        }
        let w = 1.0 / locations.len() as f64;
        SpectralMeasure::new(locations.iter().map(|&x| (x, w)).collect())
    }

    /// Sort atoms and merge duplicate locations, renormalizing exactly.
    pub fn normalize(&self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (loc, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == loc => last.1 += w,
                _ => merged.push((loc, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        for a in &mut merged {
            a.1 /= total;
        }
        SpectralMeasure { atoms: merged }
    }

    /// Measure with every atom location shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        SpectralMeasure {
            atoms: self.atoms.iter().map(|&(x, w)| (x + c, w)).collect(),
        }
    }

    /// Measure reflected through the origin.
    pub fn reflected(&self) -> Self {
        SpectralMeasure {
            atoms: self.atoms.iter().map(|&(x, w)| (-x, w)).collect(),
        }
    }

    pub fn min_location(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min)
    }

    pub fn max_location(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(x, w)| x * w).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|&(x, w)| x * x * w).sum()
    }

    /// Serialize to the on-disk JSON format `{"atoms": [[location, weight], ...]}`
    /// with 17 significant digits.
    pub fn to_json(&self) -> String {
        let parts: Vec<String> = self
            .atoms
            .iter()
            .map(|&(x, w)| format!("[{:.16e},{:.16e}]", x, w))
            .collect();
        format!("{{\"atoms\": [{}]}}", parts.join(","))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            atoms: Vec<(f64, f64)>,
        }
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("atoms file: {e}")))?;
        SpectralMeasure::new(raw.atoms)
    }
}
