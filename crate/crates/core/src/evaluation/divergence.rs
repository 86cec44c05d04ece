//! Divergences between an observed and a forecast age-at-death density.

use crate::curve::{floor_density, normalize, DENSITY_FLOOR};
use crate::error::{Error, Result};

fn prepare(p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "densities have different lengths ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    Ok((
        floor_density(&normalize(p)?, DENSITY_FLOOR),
        floor_density(&normalize(q)?, DENSITY_FLOOR),
    ))
}

/// Sum of both Kullback-Leibler directions. Inputs are normalised, floored
/// at [`DENSITY_FLOOR`] and renormalised first, so radix-scaled counts work.
pub fn kld_sym(p: &[f64], q: &[f64]) -> Result<f64> {
    let (p, q) = prepare(p, q)?;
    Ok(p.iter()
        .zip(&q)
        .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
        .sum())
}

/// Jensen-Shannon divergence with the geometric mean `sqrt(p q)` as the
/// common reference. Algebraically this is a quarter of [`kld_sym`].
pub fn jsd_geo(p: &[f64], q: &[f64]) -> Result<f64> {
    let (p, q) = prepare(p, q)?;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(&q) {
        let log_delta = 0.5 * (a.ln() + b.ln());
        total += 0.5 * a * (a.ln() - log_delta) + 0.5 * b * (b.ln() - log_delta);
    }
    Ok(total)
}

/// Averages age-summed divergences over the `test_len + 1 - h` forecasts at
/// horizon `h`, dividing by `ages * (test_len + 1 - h)`.
pub fn aggregate_point_errors(
    pairs: &[(Vec<f64>, Vec<f64>)],
    h: usize,
    test_len: usize,
) -> Result<(f64, f64)> {
    if h == 0 || h > test_len {
        return Err(Error::domain(format!("horizon {h} outside 1..={test_len}")));
    }
    let expected = test_len + 1 - h;
    if pairs.len() != expected {
        return Err(Error::domain(format!(
            "horizon {h}: expected {expected} forecast/holdout pairs, got {}",
            pairs.len()
        )));
    }
    let ages = pairs[0].0.len();
    let mut kld = 0.0;
    let mut jsd = 0.0;
    for (actual, forecast) in pairs {
        kld += kld_sym(actual, forecast)?;
        jsd += jsd_geo(actual, forecast)?;
    }
    let norm = (ages * expected) as f64;
    Ok((kld / norm, jsd / norm))
}
