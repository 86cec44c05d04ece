//! Death-count curves and the time-ordered panels built from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-year ages 0, 1, ..., 109, 110+.
pub const N_AGES: usize = 111;
pub const DEFAULT_RADIX: f64 = 1e5;
/// Relative tolerance on `sum(counts) == radix`.
pub const RADIX_TOL: f64 = 1e-6;
/// Floor applied to densities before logarithms or logits.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    /// Prefix used by the HMD period life-table file names (`fltper`, `mltper`).
    pub fn hmd_prefix(self) -> char {
        match self {
            Sex::Female => 'f',
            Sex::Male => 'm',
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" | "females" => Ok(Sex::Female),
            "male" | "m" | "males" => Ok(Sex::Male),
            other => Err(Error::Config(format!("unknown sex '{other}'"))),
        }
    }
}

/// Life-table death counts for one population and one year.
#[derive(Debug, Clone, PartialEq)]
pub struct DeathCurve {
    pub country: String,
    pub sex: Sex,
    pub year: i32,
    counts: Vec<f64>,
    radix: f64,
}

impl DeathCurve {
    /// Validates non-negativity and that the counts sum to `radix`.
    pub fn new(
        country: impl Into<String>,
        sex: Sex,
        year: i32,
        counts: Vec<f64>,
        radix: f64,
    ) -> Result<Self> {
        if !(radix > 0.0 && radix.is_finite()) {
            return Err(Error::domain(format!("radix must be positive, got {radix}")));
        }
        if counts.is_empty() {
            return Err(Error::domain("death curve has no ages"));
        }
        if let Some((age, v)) = counts
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::domain(format!(
                "year {year}, age {age}: invalid death count {v}"
            )));
        }
        let total: f64 = counts.iter().sum();
        if ((total - radix) / radix).abs() > RADIX_TOL {
            return Err(Error::domain(format!(
                "year {year}: counts sum to {total}, expected radix {radix}"
            )));
        }
        Ok(Self {
            country: country.into(),
            sex,
            year,
            counts,
            radix,
        })
    }

    /// Builds a curve from arbitrary non-negative mass, rescaling it to `radix`.
    pub fn from_mass(
        country: impl Into<String>,
        sex: Sex,
        year: i32,
        mass: Vec<f64>,
        radix: f64,
    ) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain(format!(
                "year {year}: cannot rescale curve with total mass {total}"
            )));
        }
        let scale = radix / total;
        let counts = mass.into_iter().map(|v| v * scale).collect();
        Self::new(country, sex, year, counts, radix)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn radix(&self) -> f64 {
        self.radix
    }

    pub fn n_ages(&self) -> usize {
        self.counts.len()
    }
}

/// Scales a curve to a probability vector summing to one.
pub fn normalize_to_density(curve: &DeathCurve) -> Result<Vec<f64>> {
    normalize(curve.counts())
}

pub(crate) fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::domain(format!(
            "cannot normalise a curve with total {total}"
        )));
    }
    Ok(values.iter().map(|v| v / total).collect())
}

/// Floors every entry at `floor` and renormalises to sum one.
pub fn floor_density(density: &[f64], floor: f64) -> Vec<f64> {
    let floored: Vec<f64> = density.iter().map(|&v| v.max(floor)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// Time-ordered stack of death curves for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub country: String,
    pub sex: Sex,
    years: Vec<i32>,
    rows: Vec<Vec<f64>>,
    radix: f64,
}

impl Panel {
    pub fn new(curves: Vec<DeathCurve>) -> Result<Self> {
        if curves.len() < 2 {
            return Err(Error::domain(format!(
                "a panel needs at least 2 years, got {}",
                curves.len()
            )));
        }
        let first = &curves[0];
        let (country, sex, radix, m) = (
            first.country.clone(),
            first.sex,
            first.radix,
            first.n_ages(),
        );
        let mut years = Vec::with_capacity(curves.len());
        let mut rows = Vec::with_capacity(curves.len());
        for c in curves {
            if c.n_ages() != m {
                return Err(Error::domain(format!(
                    "year {}: {} ages, expected {m}",
                    c.year,
                    c.n_ages()
                )));
            }
            if c.radix != radix || c.country != country || c.sex != sex {
                return Err(Error::domain(format!(
                    "year {}: curve does not belong to panel {country}/{sex}",
                    c.year
                )));
            }
            if let Some(&prev) = years.last() {
                if c.year <= prev {
                    return Err(Error::domain(format!(
                        "years must be strictly increasing ({prev} then {})",
                        c.year
                    )));
                }
            }
            years.push(c.year);
            rows.push(c.counts);
        }
        Ok(Self {
            country,
            sex,
            years,
            rows,
            radix,
        })
    }

    pub fn n_years(&self) -> usize {
        self.rows.len()
    }

    pub fn n_ages(&self) -> usize {
        self.rows[0].len()
    }

    pub fn radix(&self) -> f64 {
        self.radix
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().expect("panel has at least 2 years")
    }

    pub fn curve(&self, t: usize) -> DeathCurve {
        DeathCurve {
            country: self.country.clone(),
            sex: self.sex,
            year: self.years[t],
            counts: self.rows[t].clone(),
            radix: self.radix,
        }
    }

    /// Sub-panel of the first `len` years.
    pub fn head(&self, len: usize) -> Result<Panel> {
        if len < 2 || len > self.n_years() {
            return Err(Error::domain(format!(
                "cannot take the first {len} of {} years",
                self.n_years()
            )));
        }
        Ok(Panel {
            country: self.country.clone(),
            sex: self.sex,
            years: self.years[..len].to_vec(),
            rows: self.rows[..len].to_vec(),
            radix: self.radix,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let mut counts = vec![0.0; N_AGES];
        counts[0] = DEFAULT_RADIX;
        let c = DeathCurve::new("X", Sex::Female, 2000, counts, DEFAULT_RADIX).unwrap();
        let d = normalize_to_density(&c).unwrap();
        assert_eq!(d[0], 1.0);
        assert!(d[1..].iter().all(|&v| v == 0.0));

        let uniform = vec![DEFAULT_RADIX / N_AGES as f64; N_AGES];
        let c = DeathCurve::new("X", Sex::Female, 2000, uniform, DEFAULT_RADIX).unwrap();
        let d = normalize_to_density(&c).unwrap();
        assert!(d.iter().all(|&v| (v - 1.0 / 111.0).abs() < 1e-15));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let c = DeathCurve::new("X", Sex::Male, 2000, vec![2.0, 1.0, 1.0, 0.0], 4.0).unwrap();
        assert_eq!(
            normalize_to_density(&c).unwrap(),
            vec![0.5, 0.25, 0.25, 0.0]
        );
    }

    #[test]
    fn all_zero_curve_cannot_be_normalised() {
        assert!(normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn curve_rejects_bad_sums_and_negatives() {
        assert!(DeathCurve::new("X", Sex::Male, 1, vec![1.0, 2.0], 4.0).is_err());
        assert!(DeathCurve::new("X", Sex::Male, 1, vec![5.0, -1.0], 4.0).is_err());
        assert!(DeathCurve::new("X", Sex::Male, 1, vec![2.0, 2.0], 4.0).is_ok());
    }

    #[test]
    fn panel_requires_increasing_years() {
        let a = DeathCurve::new("X", Sex::Male, 2001, vec![1.0, 1.0], 2.0).unwrap();
        let b = DeathCurve::new("X", Sex::Male, 2000, vec![1.0, 1.0], 2.0).unwrap();
        assert!(Panel::new(vec![a.clone(), b.clone()]).is_err());
        assert!(Panel::new(vec![b, a.clone()]).is_ok());
        assert!(Panel::new(vec![a]).is_err());
    }

    #[test]
    fn floor_density_keeps_unit_sum() {
        let d = floor_density(&[1.0, 0.0, 0.0], 1e-12);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(d.iter().all(|&v| v > 0.0));
    }
}
