//! Expert-knowledge model: a weight vector `ω` with `Σω = 1` over
//! standardized expert features, fitted by equality-constrained least squares.
//!
//! For unit-normalized rows `g_i = F_i / ‖F_i‖` and targets `y_i ∈ {-1, +1}`
//! the fit minimizes `Σ (1 - y_i ω·g_i)²` subject to `1ᵀω = 1`. Since
//! `y_i² = 1` this is `Σ (y_i - ω·g_i)²`, whose KKT system is
//!
//! ```text
//! [ 2GᵀG + 2εI  1 ] [ω]   [2Gᵀy]
//! [ 1ᵀ          0 ] [λ] = [  1 ]
//! ```

use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::balance::{smote_oversample, SmoteConfig};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::features::{Feature, FeatureVector, N_FEATURES};
use crate::io::write_atomic;

pub const RIDGE: f64 = 1e-8;
const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations, floored at 1e-9.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::arg("cannot fit a standardizer on zero rows"));
        };
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::arg("linear system must be square"));
    }
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() <= scale * 1e-14 {
            return Err(Error::Numeric(format!(
                "singular system: pivot {:e} in column {col}",
                a[piv][col]
            )));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Rows scaled to unit length; zero rows are dropped together with their targets.
pub fn normalize_rows(rows: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    rows.iter()
        .zip(y)
        .filter_map(|(r, &t)| {
            let n = norm(r);
            (n > 0.0).then(|| (r.iter().map(|x| x / n).collect(), t))
        })
        .unzip()
}

/// `Σ (1 - y_i ω·g_i)²` over already normalized rows.
pub fn objective(omega: &[f64], g: &[Vec<f64>], y: &[f64]) -> f64 {
    g.iter()
        .zip(y)
        .map(|(gi, yi)| (1.0 - yi * dot(omega, gi)).powi(2))
        .sum()
}

/// Closed-form constrained least-squares weights for targets in `{-1, +1}`.
pub fn fit_weights(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    if rows.len() != y.len() {
        return Err(Error::arg("feature rows and targets differ in length"));
    }
    if y.iter().any(|&t| t != 1.0 && t != -1.0) {
        return Err(Error::arg("targets must be -1 or +1"));
    }
    let (g, y) = normalize_rows(rows, y);
    if g.len() < 2 {
        return Err(Error::arg("need at least 2 non-zero feature vectors"));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::arg("both labels must be present"));
    }
    let d = g[0].len();
    if d == 0 || g.iter().any(|r| r.len() != d) {
        return Err(Error::arg("feature rows have inconsistent dimensions"));
    }
    let mut a = vec![vec![0.0; d + 1]; d + 1];
    let mut b = vec![0.0; d + 1];
    for (gi, &yi) in g.iter().zip(&y) {
        for j in 0..d {
            b[j] += 2.0 * gi[j] * yi;
            for k in 0..d {
                a[j][k] += 2.0 * gi[j] * gi[k];
            }
        }
    }
    for j in 0..d {
        a[j][j] += 2.0 * RIDGE;
        a[j][d] = 1.0;
        a[d][j] = 1.0;
    }
    b[d] = 1.0;
    let mut x = solve_linear(a, b)?;
    x.truncate(d);
    Ok(x)
}

/// `ω·z / ‖z‖`, or 0 for a zero vector.
pub fn confidence_score(omega: &[f64], z: &[f64]) -> f64 {
    let n = norm(z);
    if n == 0.0 {
        0.0
    } else {
        dot(omega, z) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EkiLabel {
    #[serde(rename = "SOZ")]
    Soz,
    #[serde(rename = "RSN")]
    Rsn,
}

impl From<EkiLabel> for Label {
    fn from(l: EkiLabel) -> Label {
        match l {
            EkiLabel::Soz => Label::Soz,
            EkiLabel::Rsn => Label::Rsn,
        }
    }
}

/// SOZ iff `rho > threshold`; the boundary goes to RSN.
pub fn eki_label(rho: f64, threshold: f64) -> EkiLabel {
    if rho > threshold {
        EkiLabel::Soz
    } else {
        EkiLabel::Rsn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkiConfig {
    pub standardize: bool,
    pub smote: bool,
    pub smote_k: usize,
    pub seed: u64,
    pub soz_threshold: f64,
    pub override_threshold: f64,
}

impl Default for EkiConfig {
    fn default() -> Self {
        Self {
            standardize: true,
            smote: true,
            smote_k: 5,
            seed: 0,
            soz_threshold: 0.0,
            override_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub soz: f64,
    #[serde(rename = "override")]
    pub override_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkiModel {
    pub format: String,
    pub version: u32,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub omega: Vec<f64>,
    pub thresholds: Thresholds,
    /// Feature zeroed before fitting, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<Feature>,
}

pub const EKI_FORMAT: &str = "sozloc-eki";
pub const EKI_VERSION: u32 = 1;

/// Counts from one fit, for logs and reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rsn: usize,
    pub soz: usize,
    pub synthetic_soz: usize,
}

fn masked(f: &FeatureVector, dropped: Option<Feature>) -> Vec<f64> {
    let mut a = f.to_array();
    if let Some(d) = dropped {
        a[d.index()] = 0.0;
    }
    a.to_vec()
}

impl EkiModel {
    pub fn standardizer(&self) -> Standardizer {
        Standardizer {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Feature vector in the model's input space.
    pub fn transform(&self, f: &FeatureVector) -> Vec<f64> {
        self.standardizer().transform(&masked(f, self.dropped))
    }

    pub fn score(&self, f: &FeatureVector) -> f64 {
        confidence_score(&self.omega, &self.transform(f))
    }

    pub fn label(&self, rho: f64) -> EkiLabel {
        eki_label(rho, self.thresholds.soz)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: EkiModel =
            serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
        if m.format != EKI_FORMAT {
            return Err(Error::load(path, format!("unexpected format {:?}", m.format)));
        }
        if m.omega.len() != N_FEATURES || m.mean.len() != N_FEATURES || m.std.len() != N_FEATURES
        {
            return Err(Error::load(path, "expected 4-component vectors"));
        }
        if m.omega.iter().chain(&m.mean).chain(&m.std).any(|v| !v.is_finite()) {
            return Err(Error::load(path, "non-finite model parameters"));
        }
        Ok(m)
    }
}

/// Fits the model on real RSN/SOZ samples: standardizer first, then SMOTE on
/// standardized SOZ rows up to the RSN count, then the weights. NOISE rows
/// are ignored.
pub fn fit_eki(
    samples: &[(FeatureVector, Label)],
    cfg: &EkiConfig,
    dropped: Option<Feature>,
) -> Result<(EkiModel, FitSummary)> {
    let rsn: Vec<Vec<f64>> = samples
        .iter()
        .filter(|s| s.1 == Label::Rsn)
        .map(|s| masked(&s.0, dropped))
        .collect();
    let soz: Vec<Vec<f64>> = samples
        .iter()
        .filter(|s| s.1 == Label::Soz)
        .map(|s| masked(&s.0, dropped))
        .collect();
    if rsn.is_empty() || soz.is_empty() {
        return Err(Error::arg(format!(
            "EKI fitting needs both RSN and SOZ samples (got {} RSN, {} SOZ)",
            rsn.len(),
            soz.len()
        )));
    }
    let real: Vec<Vec<f64>> = rsn.iter().chain(&soz).cloned().collect();
    let standardizer = if cfg.standardize {
        Standardizer::fit(&real)?
    } else {
        Standardizer::identity(N_FEATURES)
    };
    let rsn_z: Vec<Vec<f64>> = rsn.iter().map(|r| standardizer.transform(r)).collect();
    let mut soz_z: Vec<Vec<f64>> = soz.iter().map(|r| standardizer.transform(r)).collect();
    let mut synthetic = 0;
    if cfg.smote && soz_z.len() >= 2 && soz_z.len() < rsn_z.len() {
        let smote = SmoteConfig {
            k_neighbors: cfg.smote_k.min(soz_z.len() - 1),
            target_count: rsn_z.len(),
            seed: cfg.seed,
        };
        let extra = smote_oversample(&soz_z, &smote)?;
        synthetic = extra.len();
        soz_z.extend(extra);
    }
    let y: Vec<f64> = std::iter::repeat_n(-1.0, rsn_z.len())
        .chain(std::iter::repeat_n(1.0, soz_z.len()))
        .collect();
    let rows: Vec<Vec<f64>> = rsn_z.into_iter().chain(soz_z).collect();
    let omega = fit_weights(&rows, &y)?;
    let summary = FitSummary {
        rsn: rsn.len(),
        soz: soz.len(),
        synthetic_soz: synthetic,
    };
    debug!("EKI fit {summary:?} omega {omega:?}");
    Ok((
        EkiModel {
            format: EKI_FORMAT.into(),
            version: EKI_VERSION,
            mean: standardizer.mean,
            std: standardizer.std,
            omega,
            thresholds: Thresholds {
                soz: cfg.soz_threshold,
                override_: cfg.override_threshold,
            },
            dropped,
        },
        summary,
    ))
}
