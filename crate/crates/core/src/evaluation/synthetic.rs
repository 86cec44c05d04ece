//! Offline fixture generator: Gompertz-Makeham mortality with an infant
//! component, whose modal age at death drifts upward over time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::curve::{DeathCurve, Panel, Sex, DEFAULT_RADIX, N_AGES};
use crate::error::{Error, Result};
use crate::hmd::rebuild_death_counts;

pub const SYNTH_COUNTRY: &str = "SYN";
pub const SYNTH_FIRST_YEAR: i32 = 1940;
pub const MIN_SYNTH_YEARS: usize = 30;

const MODAL_AGE_START: f64 = 72.0;
const GOMPERTZ_SLOPE: f64 = 0.09;
const MAKEHAM: f64 = 5e-4;
const INFANT_LEVEL: f64 = 0.03;
const INFANT_DECAY: f64 = 1.2;

/// Hazard at exact age `x` given the year's modal age, Gompertz slope and
/// infant level.
fn hazard(x: f64, modal_age: f64, slope: f64, infant: f64) -> f64 {
    infant * (-INFANT_DECAY * x).exp() + MAKEHAM + slope * (slope * (x - modal_age)).exp()
}

fn qx_curve(modal_age: f64, slope: f64, infant: f64) -> Vec<f64> {
    let mut q: Vec<f64> = (0..N_AGES - 1)
        .map(|x| 1.0 - (-hazard(x as f64 + 0.5, modal_age, slope, infant)).exp())
        .collect();
    q.push(1.0);
    q
}

/// Deterministic for a fixed seed. The modal age follows a random walk with
/// non-negative increments of mean `drift`, so with `drift = 0` every year is
/// identical; infant mortality declines and wobbles in proportion to `drift`.
pub fn make_synthetic_panel(n_years: usize, drift: f64, seed: u64) -> Result<Panel> {
    make_synthetic_panel_for(n_years, drift, seed, Sex::Female)
}

pub fn make_synthetic_panel_for(n_years: usize, drift: f64, seed: u64, sex: Sex) -> Result<Panel> {
    if n_years < MIN_SYNTH_YEARS {
        return Err(Error::domain(format!(
            "synthetic panels need at least {MIN_SYNTH_YEARS} years, got {n_years}"
        )));
    }
    if !(drift >= 0.0 && drift.is_finite()) {
        return Err(Error::domain(format!("drift must be non-negative, got {drift}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modal_age = MODAL_AGE_START;
    let mut curves = Vec::with_capacity(n_years);
    for t in 0..n_years {
        let z_modal: f64 = StandardNormal.sample(&mut rng);
        let z_infant: f64 = StandardNormal.sample(&mut rng);
        if t > 0 {
            modal_age += drift * (1.0 + 0.6 * z_modal).max(0.0);
        }
        let slope = GOMPERTZ_SLOPE + 0.002 * drift * t as f64;
        let infant = INFANT_LEVEL * (-0.25 * drift * t as f64 + 0.5 * drift * z_infant).exp();
        let dx = rebuild_death_counts(&qx_curve(modal_age, slope, infant), DEFAULT_RADIX)?;
        curves.push(DeathCurve::new(
            SYNTH_COUNTRY,
            sex,
            SYNTH_FIRST_YEAR + t as i32,
            dx,
            DEFAULT_RADIX,
        )?);
    }
    Panel::new(curves)
}
