//! Maps between the simplex of death curves and unconstrained real space.
//!
//! Two routes are provided. The centred log-ratio route divides every count by
//! its per-age geometric mean over time and takes logs. The CDF route
//! accumulates the density over age and applies the logit to every cumulative
//! value except the last, which is identically one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve::{floor_density, normalize, DeathCurve, Panel, DENSITY_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Clr,
    Cdf,
}

impl Transform {
    pub const ALL: [Transform; 2] = [Transform::Clr, Transform::Cdf];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Clr => "clr",
            Transform::Cdf => "cdf",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clr" => Ok(Transform::Clr),
            "cdf" => Ok(Transform::Cdf),
            other => Err(Error::Config(format!("unknown transform '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    ClrBeta,
    CdfLogit,
}

/// Per-age geometric means used to centre the log counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrBasis {
    pub alpha: Vec<f64>,
    pub radix: f64,
}

/// Rows are years, columns ages (all ages for CLR, all but the last for CDF).
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedMatrix {
    pub kind: MatrixKind,
    pub years: Vec<i32>,
    pub rows: Vec<Vec<f64>>,
}

impl UnconstrainedMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Floors each year's density at [`DENSITY_FLOOR`], renormalises, and
/// rescales to the radix. Applied before either forward transform.
pub fn floor_panel(panel: &Panel) -> Result<Panel> {
    let curves = (0..panel.n_years())
        .map(|t| {
            let c = panel.curve(t);
            let density = floor_density(&normalize(c.counts())?, DENSITY_FLOOR);
            let counts = density.iter().map(|p| p * panel.radix()).collect();
            DeathCurve::new(c.country, c.sex, c.year, counts, panel.radix())
        })
        .collect::<Result<Vec<_>>>()?;
    Panel::new(curves)
}

pub fn clr_forward(panel: &Panel) -> Result<(UnconstrainedMatrix, ClrBasis)> {
    let n = panel.n_years();
    let m = panel.n_ages();
    let mut logs = Vec::with_capacity(n);
    for (t, row) in panel.rows().iter().enumerate() {
        if let Some((age, &v)) = row.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::domain(format!(
                "year {}, age {age}: non-positive count {v} has no logarithm",
                panel.years()[t]
            )));
        }
        logs.push(row.iter().map(|v| v.ln()).collect::<Vec<f64>>());
    }
    let mean_log: Vec<f64> = (0..m)
        .map(|x| logs.iter().map(|r| r[x]).sum::<f64>() / n as f64)
        .collect();
    let rows = logs
        .into_iter()
        .map(|r| r.iter().zip(&mean_log).map(|(l, mu)| l - mu).collect())
        .collect();
    let basis = ClrBasis {
        alpha: mean_log.iter().map(|v| v.exp()).collect(),
        radix: panel.radix(),
    };
    Ok((
        UnconstrainedMatrix {
            kind: MatrixKind::ClrBeta,
            years: panel.years().to_vec(),
            rows,
        },
        basis,
    ))
}

/// Exponentiates, multiplies back the geometric means, and rescales to the radix.
pub fn clr_inverse(beta: &[f64], basis: &ClrBasis) -> Result<Vec<f64>> {
    if beta.len() != basis.alpha.len() {
        return Err(Error::domain(format!(
            "beta has {} ages, basis has {}",
            beta.len(),
            basis.alpha.len()
        )));
    }
    // Shifting by the max log keeps exp() in range; the shift cancels on rescaling.
    let logs: Vec<f64> = beta
        .iter()
        .zip(&basis.alpha)
        .map(|(b, a)| b + a.ln())
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() || logs.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("non-finite CLR coordinates"));
    }
    let mass: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    rescale(mass, basis.radix)
}

fn rescale(mass: Vec<f64>, radix: f64) -> Result<Vec<f64>> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::domain(format!("cannot rescale mass {total} to radix")));
    }
    Ok(mass.into_iter().map(|v| v / total * radix).collect())
}

fn inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logit of the cumulative density at every age but the last.
pub fn cdf_forward(panel: &Panel) -> Result<UnconstrainedMatrix> {
    let mut rows = Vec::with_capacity(panel.n_years());
    for (t, row) in panel.rows().iter().enumerate() {
        let year = panel.years()[t];
        let density = normalize(row)?;
        rows.push(cdf_logit_row(&density).map_err(|e| match e {
            Error::Domain(msg) => Error::domain(format!("year {year}, {msg}")),
            other => other,
        })?);
    }
    Ok(UnconstrainedMatrix {
        kind: MatrixKind::CdfLogit,
        years: panel.years().to_vec(),
        rows,
    })
}

pub(crate) fn cdf_logit_row(density: &[f64]) -> Result<Vec<f64>> {
    let retained = density.len().saturating_sub(1);
    // Upper tails summed from the oldest age, so 1 - D never loses precision.
    let mut upper = vec![0.0; retained];
    let mut tail = 0.0;
    for x in (0..retained).rev() {
        tail += density[x + 1];
        upper[x] = tail;
    }
    let mut cumulative = 0.0;
    let mut z = Vec::with_capacity(retained);
    for (age, p) in density[..retained].iter().enumerate() {
        cumulative += p;
        if !(cumulative > 0.0 && upper[age] > 0.0) {
            return Err(Error::domain(format!(
                "age {age}: cumulative density {cumulative} has no finite logit"
            )));
        }
        z.push(cumulative.ln() - upper[age].ln());
    }
    Ok(z)
}

/// Inverse logit, then first differences with the last cumulative value
/// pinned at one. Negative differences from a non-monotone row are clipped
/// to zero before rescaling to the radix.
pub fn cdf_inverse(z: &[f64], radix: f64) -> Result<Vec<f64>> {
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("non-finite CDF coordinates"));
    }
    // (cdf, 1 - cdf) pairs; near the top the upper tail is differenced
    // instead so old-age masses keep their relative precision.
    let points = z
        .iter()
        .map(|&v| (inv_logit(v), inv_logit(-v)))
        .chain(std::iter::once((1.0, 0.0)));
    let mut prev = (0.0, 1.0);
    let mut mass = Vec::with_capacity(z.len() + 1);
    for cur in points {
        let diff = if prev.0 + cur.0 <= 1.0 {
            cur.0 - prev.0
        } else {
            prev.1 - cur.1
        };
        mass.push(diff.max(0.0));
        prev = cur;
    }
    rescale(mass, radix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Sex;
    use std::f64::consts::E;

    fn panel(rows: &[&[f64]]) -> Panel {
        let radix: f64 = rows[0].iter().sum();
        let curves = rows
            .iter()
            .enumerate()
            .map(|(t, r)| DeathCurve::new("T", Sex::Female, 2000 + t as i32, r.to_vec(), radix).unwrap())
            .collect();
        Panel::new(curves).unwrap()
    }

    #[test]
    fn clr_constant_panel_has_zero_beta() {
        let p = panel(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let (m, basis) = clr_forward(&p).unwrap();
        assert!(m.rows.iter().flatten().all(|v| v.abs() < 1e-15));
        for (a, e) in basis.alpha.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn clr_hand_logarithms() {
        // d = (e, e^3) at age 0; the second age pads each year to the radix.
        let p = Panel::new(vec![
            DeathCurve::new("T", Sex::Male, 1, vec![E, 30.0 - E], 30.0).unwrap(),
            DeathCurve::new("T", Sex::Male, 2, vec![E.powi(3), 30.0 - E.powi(3)], 30.0).unwrap(),
        ])
        .unwrap();
        let (m, basis) = clr_forward(&p).unwrap();
        assert!((basis.alpha[0] - E * E).abs() < 1e-12);
        assert!((m.rows[0][0] + 1.0).abs() < 1e-12);
        assert!((m.rows[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clr_scale_invariance() {
        let a = panel(&[&[1.0, 2.0, 5.0], &[2.0, 2.0, 4.0]]);
        let b = panel(&[&[10.0, 20.0, 50.0], &[20.0, 20.0, 40.0]]);
        let (ma, _) = clr_forward(&a).unwrap();
        let (mb, _) = clr_forward(&b).unwrap();
        for (ra, rb) in ma.rows.iter().zip(&mb.rows) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clr_rejects_zero_counts() {
        let p = panel(&[&[1.0, 0.0, 3.0], &[1.0, 1.0, 2.0]]);
        let err = clr_forward(&p).unwrap_err().to_string();
        assert!(err.contains("year 2000, age 1"), "{err}");
    }

    #[test]
    fn clr_inverse_examples() {
        let basis = ClrBasis { alpha: vec![1.0, 2.0, 1.0], radix: 8.0 };
        let d = clr_inverse(&[0.0, 0.0, 0.0], &basis).unwrap();
        assert_eq!(d, vec![2.0, 4.0, 2.0]);

        let uniform = ClrBasis { alpha: vec![1.0; 4], radix: 1.0 };
        let d = clr_inverse(&[2f64.ln(), 0.0, 0.0, 0.0], &uniform).unwrap();
        for (got, want) in d.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_hand_logit() {
        let z = cdf_logit_row(&[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[1] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(cdf_logit_row(&[0.5, 0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn cdf_inverse_examples() {
        let d = cdf_inverse(&[0.0, 3f64.ln()], 1.0).unwrap();
        for (got, want) in d.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
        let d = cdf_inverse(&[800.0, 801.0, 802.0], 1.0).unwrap();
        assert!(d[0] > 1.0 - 1e-12);
    }

    #[test]
    fn cdf_inverse_clips_non_monotone_rows() {
        let d = cdf_inverse(&[1.0, -1.0, 2.0], 10.0).unwrap();
        assert_eq!(d[1], 0.0);
        assert!(d.iter().all(|&v| v >= 0.0));
        assert!((d.iter().sum::<f64>() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_rejects_saturated_cumulative() {
        let p = panel(&[&[2.0, 0.0, 0.0], &[1.0, 0.5, 0.5]]);
        assert!(cdf_forward(&p).is_err());
    }

    #[test]
    fn transform_names_round_trip() {
        for t in Transform::ALL {
            assert_eq!(t.as_str().parse::<Transform>().unwrap(), t);
        }
    }
}
