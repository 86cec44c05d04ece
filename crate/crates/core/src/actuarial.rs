//! Life tables from death counts, cohort survival along forecast diagonals
//! and temporary immediate annuity prices.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::curve::{DeathCurve, Sex};
use crate::error::{Error, Result};
use crate::hmd::OPEN_AGE;
use crate::uncertainty::IntervalForecast;

/// Fraction of the year lived by those dying in it.
pub const DEFAULT_SEPARATION: f64 = 0.5;
pub const ENTRY_AGES: [usize; 10] = [60, 65, 70, 75, 80, 85, 90, 95, 100, 105];
pub const MATURITIES: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableDerived {
    pub lx: Vec<f64>,
    pub qx: Vec<f64>,
    pub px: Vec<f64>,
    /// Person-years lived in each age interval.
    pub person_years: Vec<f64>,
    pub tx: Vec<f64>,
    pub ex: Vec<f64>,
}

pub fn derive_lifetable(curve: &DeathCurve) -> LifeTableDerived {
    derive_lifetable_with(curve.counts(), curve.radix(), DEFAULT_SEPARATION)
}

/// Life table for death counts summing to `radix`. The last age is closed
/// out with `q = 1`.
pub fn derive_lifetable_with(dx: &[f64], radix: f64, separation: f64) -> LifeTableDerived {
    let n = dx.len();
    let mut lx = Vec::with_capacity(n);
    let mut l = radix;
    for &d in dx {
        lx.push(l);
        l = (l - d).max(0.0);
    }
    let qx: Vec<f64> = (0..n)
        .map(|x| {
            if x == n - 1 {
                1.0
            } else if lx[x] > 0.0 {
                (dx[x] / lx[x]).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let px = qx.iter().map(|q| 1.0 - q).collect();
    let person_years: Vec<f64> = (0..n)
        .map(|x| {
            let next = if x + 1 < n { lx[x + 1] } else { 0.0 };
            next + separation * dx[x]
        })
        .collect();
    let mut tx = vec![0.0; n];
    let mut acc = 0.0;
    for x in (0..n).rev() {
        acc += person_years[x];
        tx[x] = acc;
    }
    let ex = (0..n)
        .map(|x| if lx[x] > 0.0 { tx[x] / lx[x] } else { 0.0 })
        .collect();
    LifeTableDerived {
        lx,
        qx,
        px,
        person_years,
        tx,
        ex,
    }
}

/// `tau_p_x` for `tau = 1..=T` along the diagonal of consecutive forecast years.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSurvival {
    pub entry_age: usize,
    pub entry_year: i32,
    /// `survival[tau - 1] = tau_p_x`.
    pub survival: Vec<f64>,
}

fn check_term(entry_age: usize, maturity: usize) -> Result<()> {
    if maturity == 0 {
        return Err(Error::domain("maturity must be at least 1"));
    }
    if entry_age + maturity > OPEN_AGE {
        return Err(Error::domain(format!(
            "entry age {entry_age} plus maturity {maturity} exceeds {OPEN_AGE}"
        )));
    }
    Ok(())
}

fn check_years(years: &[i32], maturity: usize) -> Result<()> {
    if years.len() < maturity {
        return Err(Error::domain(format!(
            "maturity {maturity} needs {maturity} forecast years, got {}",
            years.len()
        )));
    }
    if let Some(w) = years[..maturity].windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(Error::domain(format!("forecast year {} is missing", w[0] + 1)));
    }
    Ok(())
}

/// Survival of a cohort aged `entry_age` at the first forecast year: the
/// one-year survival at age `x + j - 1` comes from forecast year `j`.
pub fn cohort_survival(curves: &[DeathCurve], entry_age: usize, maturity: usize) -> Result<CohortSurvival> {
    check_term(entry_age, maturity)?;
    let years: Vec<i32> = curves.iter().map(|c| c.year).collect();
    check_years(&years, maturity)?;
    let one_year: Vec<f64> = curves[..maturity]
        .iter()
        .enumerate()
        .map(|(j, c)| derive_lifetable(c).px[entry_age + j])
        .collect();
    Ok(CohortSurvival {
        entry_age,
        entry_year: years[0],
        survival: cumulative(&one_year),
    })
}

fn cumulative(one_year: &[f64]) -> Vec<f64> {
    one_year
        .iter()
        .scan(1.0, |acc, p| {
            *acc *= p;
            Some(*acc)
        })
        .collect()
}

/// Flat continuously compounded rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountCurve {
    rate: f64,
}

impl DiscountCurve {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("rate must be finite and non-negative, got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Zero-coupon bond price `B(0, tau) = exp(-rate * tau)`.
    pub fn bond(&self, tau: f64) -> f64 {
        (-self.rate * tau).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnuityQuote {
    pub entry_age: usize,
    pub maturity: usize,
    pub rate: f64,
    pub price: f64,
    pub interval: Option<(f64, f64)>,
    pub coverage: Option<f64>,
}

fn price_of(survival: &[f64], discount: DiscountCurve) -> f64 {
    survival
        .iter()
        .enumerate()
        .map(|(i, p)| discount.bond((i + 1) as f64) * p)
        .sum()
}

/// Unit payments annually in arrears while alive, up to `maturity` years.
pub fn annuity_price(survival: &CohortSurvival, rate: f64, maturity: usize) -> Result<AnnuityQuote> {
    let discount = DiscountCurve::new(rate)?;
    if maturity == 0 || maturity > survival.survival.len() {
        return Err(Error::domain(format!(
            "maturity {maturity} outside the {} years of survival data",
            survival.survival.len()
        )));
    }
    Ok(AnnuityQuote {
        entry_age: survival.entry_age,
        maturity,
        rate,
        price: price_of(&survival.survival[..maturity], discount),
        interval: None,
        coverage: None,
    })
}

/// One-year survival at `age` for a cohort whose survivors at `entry_age`
/// come from the point forecast and whose deaths from `entry_age` on come
/// from `bound`.
fn spliced_survival(point: &DeathCurve, bound: &[f64], entry_age: usize, age: usize) -> f64 {
    let mut l = derive_lifetable(point).lx[entry_age];
    for &d in &bound[entry_age..age] {
        l = (l - d).max(0.0);
    }
    if l <= 0.0 {
        return 0.0;
    }
    1.0 - (bound[age] / l).clamp(0.0, 1.0)
}

/// Price bounds from pointwise death-count intervals. More deaths mean lower
/// survival, so the upper death-count curves give the lower price. Each
/// bound curve replaces the point forecast at ages from `entry_age` on; the
/// survivors reaching `entry_age` are taken from the point forecast. This is
/// a plug-in approximation that ignores dependence across ages and years.
pub fn annuity_interval(
    point: &[DeathCurve],
    intervals: &[IntervalForecast],
    entry_age: usize,
    rate: f64,
    maturity: usize,
) -> Result<(f64, f64)> {
    check_term(entry_age, maturity)?;
    let discount = DiscountCurve::new(rate)?;
    let years: Vec<i32> = point.iter().map(|c| c.year).collect();
    check_years(&years, maturity)?;
    if intervals.len() < maturity {
        return Err(Error::domain(format!(
            "maturity {maturity} needs {maturity} interval years, got {}",
            intervals.len()
        )));
    }
    for (c, iv) in point.iter().zip(intervals).take(maturity) {
        if c.year != iv.year || iv.lb.len() != c.n_ages() || iv.ub.len() != c.n_ages() {
            return Err(Error::domain(format!("interval for {} does not match its point forecast", c.year)));
        }
    }
    let price_with = |pick: fn(&IntervalForecast) -> &[f64]| {
        let one_year: Vec<f64> = (0..maturity)
            .map(|j| spliced_survival(&point[j], pick(&intervals[j]), entry_age, entry_age + j))
            .collect();
        price_of(&cumulative(&one_year), discount)
    };
    let low = price_with(|iv| &iv.ub);
    let high = price_with(|iv| &iv.lb);
    Ok((low.min(high), low.max(high)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifeExpectancyRow {
    pub country: String,
    pub sex: Sex,
    pub year: i32,
    pub age: usize,
    pub ex: f64,
}

pub const LIFE_EXPECTANCY_AGES: [usize; 2] = [0, 60];

/// Period life expectancy at each of `ages` for every forecast year.
pub fn life_expectancy_table(curves: &[DeathCurve], ages: &[usize]) -> Result<Vec<LifeExpectancyRow>> {
    let mut out = Vec::with_capacity(curves.len() * ages.len());
    for c in curves {
        let table = derive_lifetable(c);
        for &age in ages {
            let ex = *table
                .ex
                .get(age)
                .ok_or_else(|| Error::domain(format!("age {age} beyond the {} ages of the table", c.n_ages())))?;
            out.push(LifeExpectancyRow {
                country: c.country.clone(),
                sex: c.sex,
                year: c.year,
                age,
                ex,
            });
        }
    }
    Ok(out)
}

/// Default per-country discount rates, editable as a TOML `[rates]` table.
pub const DEFAULT_RATES_TOML: &str = include_str!("../config/rates.toml");

#[derive(Debug, Deserialize)]
struct RatesFile {
    rates: BTreeMap<String, f64>,
}

pub fn parse_rates(text: &str) -> Result<BTreeMap<String, f64>> {
    let file: RatesFile = toml::from_str(text).map_err(|e| Error::Config(format!("rates: {e}")))?;
    if let Some((c, r)) = file.rates.iter().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("rate for {c} must be non-negative, got {r}")));
    }
    Ok(file.rates)
}

pub fn default_rates() -> BTreeMap<String, f64> {
    parse_rates(DEFAULT_RATES_TOML).expect("bundled rates parse")
}
