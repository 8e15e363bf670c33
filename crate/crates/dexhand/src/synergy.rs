//! Action synergies: PCA of logged actions and their correlation matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyReport {
    pub samples: usize,
    pub action_dim: usize,
    /// Component variances, largest first.
    pub explained_variance: Vec<f64>,
    pub cumulative_variance: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
    /// `K x K` Pearson correlations, row-major. Constant actuators have zero
    /// correlation with everything but themselves.
    pub correlation: Vec<f64>,
    /// Set when the log has no variance at all.
    pub degenerate: bool,
    /// Components with (numerically) zero variance.
    pub zero_variance_components: usize,
}

/// `actions` holds `n` rows of `k` values. Needs `n >= k`.
pub fn analyze(actions: &[f64], k: usize) -> Result<SynergyReport> {
    if k == 0 || actions.len() % k != 0 {
        return Err(Error::Config(format!("{} values do not form rows of {k}", actions.len())));
    }
    let n = actions.len() / k;
    if n < k || n < 2 {
        return Err(Error::Config(format!("{n} samples for {k} actuators; need at least max(K, 2)")));
    }
    let x = DMatrix::from_row_slice(n, k, actions);
    let mean = x.row_mean();
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov.clone());
    let mut var: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    var.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = cov.diagonal().iter().sum();
    // rounding in the mean leaves ~eps^2 of spurious variance on constant logs
    let scale = actions.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let degenerate = !(total > 1e-24 * scale);
    let tol = if degenerate { f64::INFINITY } else { 1e-12 * total };
    let mut cumulative_variance = Vec::with_capacity(k);
    let mut acc = 0.0;
    for v in &var {
        acc += v;
        cumulative_variance.push(acc);
    }
    let cumulative_ratio = if degenerate {
        vec![1.0; k]
    } else {
        cumulative_variance.iter().map(|c| (c / total).min(1.0)).collect()
    };
    let sd: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
    let mut correlation = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            correlation[i * k + j] = if i == j {
                1.0
            } else if sd[i] > 0.0 && sd[j] > 0.0 {
                (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(SynergyReport {
        samples: n,
        action_dim: k,
        zero_variance_components: var.iter().filter(|v| **v <= tol).count(),
        explained_variance: var,
        cumulative_variance,
        cumulative_ratio,
        correlation,
        degenerate,
    })
}
