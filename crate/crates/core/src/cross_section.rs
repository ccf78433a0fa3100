//! Scattering cross-sections: symmetric positive kernels sigma(v, v') with
//! uniform lower/upper bounds.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::VelocityGrid;

/// Registry entry, config-file friendly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "sigma", rename_all = "snake_case")]
pub enum CrossSectionSpec {
    /// sigma = 1/tau (relaxation-time model)
    Constant { tau: f64 },
    /// sigma = a + b exp(-|v - v'|^2)
    GaussMix { a: f64, b: f64 },
    /// node-indexed table loaded from CSV (v-index, v'-index, value)
    Tabulated { path: String },
}

#[derive(Debug, Clone)]
pub enum CrossSectionKind {
    Constant { rate: f64 },
    GaussMix { a: f64, b: f64 },
    /// Dense node-indexed table, row-major over (i, j).
    Tabulated { n: usize, values: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct CrossSection {
    kind: CrossSectionKind,
    alpha1: f64,
    alpha2: f64,
    label: String,
}

impl CrossSection {
    /// Relaxation-time model sigma = 1/tau.
    pub fn constant(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(CoreError::Param(format!("tau must be positive, got {tau}")));
        }
        let rate = 1.0 / tau;
        Ok(Self {
            kind: CrossSectionKind::Constant { rate },
            alpha1: rate,
            alpha2: rate,
            label: format!("constant(tau={tau})"),
        })
    }

    /// sigma = a + b exp(-|v - v'|^2), bounded in [a, a + b].
    pub fn gauss_mix(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b >= 0.0) {
            return Err(CoreError::Param(format!(
                "gauss_mix needs a > 0 and b >= 0, got a={a}, b={b}"
            )));
        }
        let cs = Self {
            kind: CrossSectionKind::GaussMix { a, b },
            alpha1: a,
            alpha2: a + b,
            label: format!("gauss_mix(a={a},b={b})"),
        };
        cs.spot_check()?;
        Ok(cs)
    }

    /// Node-indexed table on `grid`. Values must be a full n x n matrix,
    /// symmetric and positive; the bounds are taken from the data.
    pub fn tabulated(grid: &Arc<VelocityGrid>, values: Vec<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        if values.len() != n * n {
            return Err(CoreError::Format(format!(
                "tabulated cross-section has {} entries, grid needs {}",
                values.len(),
                n * n
            )));
        }
        let mut alpha1 = f64::INFINITY;
        let mut alpha2 = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..=i {
                let s = values[i * n + j];
                let t = values[j * n + i];
                if (s - t).abs() > 1e-12 * (1.0 + s.abs()) {
                    return Err(CoreError::Format(format!(
                        "tabulated cross-section is not symmetric at ({i}, {j}): {s} vs {t}"
                    )));
                }
                if !(s > 0.0) || !s.is_finite() {
                    return Err(CoreError::Format(format!(
                        "tabulated cross-section entry ({i}, {j}) = {s} is not positive"
                    )));
                }
                alpha1 = alpha1.min(s);
                alpha2 = alpha2.max(s);
            }
        }
        Ok(Self {
            kind: CrossSectionKind::Tabulated { n, values },
            alpha1,
            alpha2,
            label: "tabulated".into(),
        })
    }

    /// Load a tabulated kernel from CSV rows `i,j,value` (header optional).
    /// Missing symmetric partners are filled from the given entry; every
    /// (i, j) pair must be covered by the file one way or the other.
    pub fn tabulated_from_csv(grid: &Arc<VelocityGrid>, path: &Path) -> Result<Self> {
        let n = grid.n_nodes();
        let mut values = vec![f64::NAN; n * n];
        let text = std::fs::read_to_string(path)?;
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (row == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(CoreError::Format(format!(
                    "cross-section CSV row {row}: expected 3 fields"
                )));
            }
            let i: usize = parts[0]
                .parse()
                .map_err(|_| CoreError::Format(format!("bad index in CSV row {row}")))?;
            let j: usize = parts[1]
                .parse()
                .map_err(|_| CoreError::Format(format!("bad index in CSV row {row}")))?;
            let s: f64 = parts[2]
                .parse()
                .map_err(|_| CoreError::Format(format!("bad value in CSV row {row}")))?;
            if i >= n || j >= n {
                return Err(CoreError::Format(format!(
                    "cross-section CSV row {row}: index out of range for {n} nodes"
                )));
            }
            values[i * n + j] = s;
            if values[j * n + i].is_nan() {
                values[j * n + i] = s;
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(CoreError::Format(
                "cross-section CSV does not cover every node pair".into(),
            ));
        }
        Self::tabulated(grid, values)
    }

    pub fn from_spec(spec: &CrossSectionSpec, grid: &Arc<VelocityGrid>) -> Result<Self> {
        match spec {
            CrossSectionSpec::Constant { tau } => Self::constant(*tau),
            CrossSectionSpec::GaussMix { a, b } => Self::gauss_mix(*a, *b),
            CrossSectionSpec::Tabulated { path } => {
                Self::tabulated_from_csv(grid, Path::new(path))
            }
        }
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn kind(&self) -> &CrossSectionKind {
        &self.kind
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, CrossSectionKind::Constant { .. })
    }

    /// Evaluate at arbitrary velocity pairs (analytic kinds only).
    pub fn eval(&self, v: [f64; 3], vp: [f64; 3]) -> f64 {
        match &self.kind {
            CrossSectionKind::Constant { rate } => *rate,
            CrossSectionKind::GaussMix { a, b } => {
                let d2 = (v[0] - vp[0]).powi(2) + (v[1] - vp[1]).powi(2) + (v[2] - vp[2]).powi(2);
                a + b * (-d2).exp()
            }
            CrossSectionKind::Tabulated { .. } => {
                panic!("tabulated cross-sections are node-indexed; use eval_nodes")
            }
        }
    }

    /// Evaluate between two grid nodes.
    pub fn eval_nodes(&self, grid: &VelocityGrid, i: usize, j: usize) -> f64 {
        match &self.kind {
            CrossSectionKind::Tabulated { n, values } => values[i * n + j],
            _ => self.eval(grid.node(i), grid.node(j)),
        }
    }

    /// Symmetry and bound spot check on random velocity pairs in the thermal
    /// ball; analytic kinds only, with a fixed seed for reproducibility.
    fn spot_check(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ec7_10b5);
        for _ in 0..256 {
            let v = [(); 3].map(|_| rng.gen_range(-6.0..6.0));
            let vp = [(); 3].map(|_| rng.gen_range(-6.0..6.0));
            let s = self.eval(v, vp);
            let t = self.eval(vp, v);
            if (s - t).abs() > 1e-12 * (1.0 + s.abs()) {
                return Err(CoreError::Param(format!(
                    "cross-section {} is not symmetric",
                    self.label
                )));
            }
            if s < self.alpha1 * (1.0 - 1e-12) || s > self.alpha2 * (1.0 + 1e-12) {
                return Err(CoreError::Param(format!(
                    "cross-section {} leaves its stated bounds",
                    self.label
                )));
            }
        }
        Ok(())
    }
}
