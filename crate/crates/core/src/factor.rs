//! Principal-component factor model for unconstrained curve matrices.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of components the ratio criterion may pick.
pub const EVR_K_MAX: usize = 10;
const ORTHONORMAL_TOL: f64 = 1e-8;

/// How many components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Selector {
    /// Maximise the ratio of consecutive eigenvalues.
    Evr,
    Fixed(usize),
}

impl Selector {
    pub const PAIRED: [Selector; 2] = [Selector::Evr, Selector::Fixed(6)];
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Evr => f.write_str("evr"),
            Selector::Fixed(k) => write!(f, "k{k}"),
        }
    }
}

impl TryFrom<String> for Selector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Selector> for String {
    fn from(s: Selector) -> String {
        s.to_string()
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "evr" {
            return Ok(Selector::Evr);
        }
        s.strip_prefix('k')
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(Selector::Fixed)
            .ok_or_else(|| Error::Config(format!("unknown selector '{s}' (use evr or k<N>)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub mean_row: Vec<f64>,
    /// `k` unit-norm components, each of length `m`.
    pub components: Vec<Vec<f64>>,
    /// Full spectrum of the sample covariance, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// `n x k` score series.
    pub scores: Vec<Vec<f64>>,
    pub k: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Picks `argmax_k lambda_k / (lambda_{k+1} + eps)` over `1..=k_max`, smallest
/// `k` on ties. `k_max` is clamped so every ratio has a denominator.
pub fn select_k_evr(eigenvalues: &[f64], k_max: usize) -> usize {
    let k_max = k_max.min(eigenvalues.len().saturating_sub(1));
    let lead = eigenvalues.first().copied().unwrap_or(0.0);
    if k_max == 0 || lead <= 0.0 {
        if lead <= 0.0 {
            warn!("all eigenvalues are zero; retaining one component");
        }
        return 1;
    }
    let eps = lead * 1e-12;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_max {
        let ratio = eigenvalues[k - 1] / (eigenvalues[k] + eps);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    best.0
}

/// Eigen-decomposes the `(n-1)`-divisor covariance of the time-centred rows.
/// Components are signed so their largest-magnitude entry is positive.
pub fn fit_pca(rows: &[Vec<f64>], selector: Selector) -> Result<FactorFit> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::domain(format!("PCA needs at least 2 rows, got {n}")));
    }
    let m = rows[0].len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::domain("PCA rows must share a non-zero length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("PCA input contains non-finite values"));
    }

    let mean_row: Vec<f64> = (0..m)
        .map(|x| rows.iter().map(|r| r[x]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, m, |t, x| rows[t][x] - mean_row[x]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let selected = match selector {
        Selector::Evr => select_k_evr(&eigenvalues, EVR_K_MAX),
        Selector::Fixed(k) => k,
    };
    let k = selected.min(n - 1).min(m).max(1);

    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    let scores = (0..n)
        .map(|t| {
            let row: Vec<f64> = (0..m).map(|x| centred[(t, x)]).collect();
            components.iter().map(|c| dot(&row, c)).collect()
        })
        .collect();

    let fit = FactorFit {
        mean_row,
        components,
        eigenvalues,
        scores,
        k,
    };
    fit.check_invariants()?;
    Ok(fit)
}

impl FactorFit {
    pub fn n_cols(&self) -> usize {
        self.mean_row.len()
    }

    /// Orthonormal components and a sorted, non-negative spectrum.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate().skip(i) {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = dot(a, b);
                if (got - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::domain(format!(
                        "components {i} and {j} have inner product {got}"
                    )));
                }
            }
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) || self.eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::domain("eigenvalues are not sorted and non-negative"));
        }
        Ok(())
    }

    /// `mean_row + sum_k scores[k] * component_k`.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.k {
            return Err(Error::domain(format!(
                "expected {} scores, got {}",
                self.k,
                scores.len()
            )));
        }
        let mut out = self.mean_row.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += s * v;
            }
        }
        Ok(out)
    }

    /// Score series of component `k` over the fitted years.
    pub fn score_series(&self, k: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[k]).collect()
    }

    /// Part of each row not captured by the retained components.
    pub fn residuals(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                let centred: Vec<f64> = row.iter().zip(&self.mean_row).map(|(v, m)| v - m).collect();
                let scores: Vec<f64> = self.components.iter().map(|c| dot(&centred, c)).collect();
                let fitted = self.reconstruct(&scores)?;
                Ok(row.iter().zip(fitted).map(|(v, f)| v - f).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mean = vec![1.0, -2.0, 0.5, 3.0];
        let v = vec![0.5, 0.5, -0.5, 0.5];
        let rows = (0..n)
            .map(|t| {
                let c = t as f64 - 2.0;
                mean.iter().zip(&v).map(|(m, x)| m + c * x).collect()
            })
            .collect();
        (rows, mean, v)
    }

    #[test]
    fn evr_examples() {
        assert_eq!(select_k_evr(&[8.0, 4.0, 1.0, 0.5], EVR_K_MAX), 2);
        assert_eq!(select_k_evr(&[9.0, 3.0, 1.0, 1.0 / 3.0], EVR_K_MAX), 1);
        assert_eq!(select_k_evr(&[5.0, 0.0, 0.0, 0.0], EVR_K_MAX), 1);
        assert_eq!(select_k_evr(&[0.0, 0.0, 0.0], EVR_K_MAX), 1);
    }

    #[test]
    fn rank_one_matrix() {
        let (rows, _, v) = rank_one(5);
        let fit = fit_pca(&rows, Selector::Evr).unwrap();
        assert_eq!(fit.k, 1);
        let total: f64 = fit.eigenvalues.iter().sum();
        assert!((fit.eigenvalues[0] / total - 1.0).abs() < 1e-12);
        // The pivot rule fixes the sign: every |entry| ties, so the first wins.
        for (a, b) in fit.components[0].iter().zip(&v) {
            assert!((a - b).abs() < 1e-10);
        }
        for (t, row) in rows.iter().enumerate() {
            let r = fit.reconstruct(&fit.scores[t]).unwrap();
            for (a, b) in r.iter().zip(row) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fixed_selector_is_capped_by_rank() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|t| (0..8).map(|x| ((t * 7 + x * 3) % 11) as f64 + (t * x) as f64 * 0.1).collect())
            .collect();
        assert_eq!(fit_pca(&rows, Selector::Fixed(6)).unwrap().k, 6);
        assert_eq!(fit_pca(&rows[..4], Selector::Fixed(6)).unwrap().k, 3);
    }

    #[test]
    fn zero_scores_give_mean_row() {
        let (rows, _, _) = rank_one(6);
        let fit = fit_pca(&rows, Selector::Fixed(1)).unwrap();
        let r = fit.reconstruct(&[0.0]).unwrap();
        let col_mean: Vec<f64> = (0..4).map(|j| rows.iter().map(|row| row[j]).sum::<f64>() / 6.0).collect();
        for (a, b) in r.iter().zip(&col_mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fit.reconstruct(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn needs_two_rows() {
        assert!(fit_pca(&[vec![1.0, 2.0]], Selector::Evr).is_err());
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("evr".parse::<Selector>().unwrap(), Selector::Evr);
        assert_eq!("K6".parse::<Selector>().unwrap(), Selector::Fixed(6));
        assert!("k0".parse::<Selector>().is_err());
        assert_eq!(Selector::Fixed(6).to_string(), "k6");
    }
}
