//! SMOTE oversampling of a minority class in feature space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Size of the minority class after oversampling.
    pub target_count: usize,
    pub seed: u64,
}

/// One synthetic point and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub point: Vec<f64>,
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `k` nearest other points to `points[i]`; ties by index.
pub fn nearest_neighbors(points: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (sq_dist(&points[i], p), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

fn check(minority: &[Vec<f64>], cfg: &SmoteConfig) -> Result<()> {
    if minority.len() < 2 {
        return Err(Error::arg(format!(
            "SMOTE needs at least 2 minority samples, got {}",
            minority.len()
        )));
    }
    if cfg.k_neighbors == 0 || cfg.k_neighbors >= minority.len() {
        return Err(Error::arg(format!(
            "k_neighbors must lie in 1..{}, got {}",
            minority.len(),
            cfg.k_neighbors
        )));
    }
    if cfg.target_count < minority.len() {
        return Err(Error::arg(format!(
            "target count {} is below the current minority count {}",
            cfg.target_count,
            minority.len()
        )));
    }
    let d = minority[0].len();
    if minority.iter().any(|p| p.len() != d) {
        return Err(Error::arg("minority points have mixed dimensions"));
    }
    Ok(())
}

/// Synthetic samples with their provenance. Bases cycle through the minority
/// points in order; `lambda` draws each interpolation weight.
pub fn smote_with(
    minority: &[Vec<f64>],
    cfg: &SmoteConfig,
    mut lambda: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> Result<Vec<Synthetic>> {
    check(minority, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| nearest_neighbors(minority, i, cfg.k_neighbors))
        .collect();
    let n_new = cfg.target_count - minority.len();
    let mut out = Vec::with_capacity(n_new);
    for s in 0..n_new {
        let base = s % minority.len();
        let neighbor = neighbours[base][rng.random_range(0..cfg.k_neighbors)];
        let lam = lambda(&mut rng);
        let point = minority[base]
            .iter()
            .zip(&minority[neighbor])
            .map(|(x, n)| x + lam * (n - x))
            .collect();
        out.push(Synthetic {
            point,
            base,
            neighbor,
            lambda: lam,
        });
    }
    Ok(out)
}

/// `target_count - minority.len()` synthetic points `x + λ(nn - x)` with
/// `λ ~ U(0, 1)` and `nn` one of the `k` nearest neighbours of `x`.
pub fn smote_oversample(minority: &[Vec<f64>], cfg: &SmoteConfig) -> Result<Vec<Vec<f64>>> {
    Ok(smote_with(minority, cfg, |rng| rng.random::<f64>())?
        .into_iter()
        .map(|s| s.point)
        .collect())
}
