//! Pointwise prediction intervals calibrated on a nested validation block,
//! and their coverage and interval-score metrics.

use crate::curve::{DeathCurve, Panel, Sex};
use crate::error::{Error, Result, StageContext};
use crate::evaluation::{expanding_forecasts, pairs_at, point_error_table, PointErrorTable, SplitForecast};
use crate::factor::Selector;
use crate::transforms::Transform;

/// Length of the validation block carved from the end of a training sample.
pub const VALIDATION_LEN: usize = 20;
/// Longest calibrated horizon: a standard deviation needs two residual rows.
pub const MAX_CALIBRATED_H: usize = VALIDATION_LEN - 1;
pub const THETA_STEPS_PER_UNIT: usize = 100;
pub const THETA_CAP: f64 = 30.0;
pub const DEFAULT_ALPHAS: [f64; 2] = [0.2, 0.05];

const GRID_LEN: usize = 30 * THETA_STEPS_PER_UNIT + 1;

fn grid_theta(i: usize) -> f64 {
    i as f64 / THETA_STEPS_PER_UNIT as f64
}

/// Validation residuals `actual - forecast` at one horizon, with their
/// per-age standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub h: usize,
    pub rows: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

impl ResidualSet {
    pub fn new(h: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let gamma = pointwise_sd(&rows)?;
        Ok(Self { h, rows, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaCalibration {
    pub alpha: f64,
    pub theta: f64,
    /// Validation coverage achieved at `theta`.
    pub coverage: f64,
    /// `theta` sits on the grid cap, which usually signals a degenerate Γ.
    pub cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalForecast {
    pub year: i32,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// `1 - alpha` when the interval came from a calibration.
    pub nominal: Option<f64>,
}

/// Per-age sample standard deviation (divisor `n - 1`).
pub fn pointwise_sd(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.len() < 2 {
        return Err(Error::domain(format!(
            "a standard deviation needs at least 2 residual rows, got {}",
            rows.len()
        )));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::domain("residual rows have different lengths"));
    }
    let n = rows.len() as f64;
    Ok((0..width)
        .map(|x| {
            let mean = rows.iter().map(|r| r[x]).sum::<f64>() / n;
            let ss: f64 = rows.iter().map(|r| (r[x] - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect())
}

fn covered(eps: f64, gamma: f64, theta: f64) -> bool {
    if gamma == 0.0 {
        eps == 0.0
    } else {
        eps.abs() <= theta * gamma
    }
}

/// Fraction of residual cells with `|eps| <= theta * gamma`. Cells with
/// `gamma = 0` count as covered only when the residual is exactly zero.
pub fn coverage(rows: &[Vec<f64>], gamma: &[f64], theta: f64) -> f64 {
    let total: usize = rows.iter().map(Vec::len).sum();
    let hits = rows
        .iter()
        .flat_map(|r| r.iter().zip(gamma))
        .filter(|(&e, &g)| covered(e, g, theta))
        .count();
    hits as f64 / total as f64
}

/// Grid search over `theta = 0.00, 0.01, ..., 30.00` for the coverage closest
/// to `1 - alpha`; ties go to the smallest `theta`.
pub fn calibrate_theta(rows: &[Vec<f64>], gamma: &[f64], alpha: f64) -> Result<ThetaCalibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != gamma.len()) {
        return Err(Error::domain("residual rows must match the length of gamma"));
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || rows.iter().flatten().any(|e| !e.is_finite()) {
        return Err(Error::domain("residuals and gamma must be finite, gamma non-negative"));
    }
    if gamma.iter().all(|&g| g == 0.0) && rows.iter().flatten().any(|&e| e != 0.0) {
        return Err(Error::domain("every gamma is zero but some residuals are not"));
    }

    // Histogram of the first grid index covering each cell; never-covered
    // cells land past the grid.
    let mut first_hit = vec![0usize; GRID_LEN + 1];
    for r in rows {
        for (&e, &g) in r.iter().zip(gamma) {
            let idx = if g == 0.0 {
                if e == 0.0 {
                    0
                } else {
                    GRID_LEN
                }
            } else {
                let guess = ((e.abs() / g) * THETA_STEPS_PER_UNIT as f64).ceil();
                let mut i = if guess.is_finite() { (guess as usize).min(GRID_LEN) } else { GRID_LEN };
                while i > 0 && covered(e, g, grid_theta(i - 1)) {
                    i -= 1;
                }
                while i < GRID_LEN && !covered(e, g, grid_theta(i)) {
                    i += 1;
                }
                i
            };
            first_hit[idx] += 1;
        }
    }

    let total: usize = rows.iter().map(Vec::len).sum();
    let target = 1.0 - alpha;
    let mut hits = 0usize;
    let mut best = (0usize, f64::INFINITY, 0.0);
    for (i, &count) in first_hit.iter().take(GRID_LEN).enumerate() {
        hits += count;
        let cov = hits as f64 / total as f64;
        let gap = (cov - target).abs();
        if gap < best.1 {
            best = (i, gap, cov);
        }
    }
    Ok(ThetaCalibration {
        alpha,
        theta: grid_theta(best.0),
        coverage: best.2,
        cap_hit: best.0 == GRID_LEN - 1,
    })
}

/// `[max(0, d - theta*gamma), d + theta*gamma]`.
pub fn build_interval(point: &DeathCurve, gamma: &[f64], theta: f64) -> Result<IntervalForecast> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("theta must be finite and non-negative, got {theta}")));
    }
    if gamma.len() != point.n_ages() {
        return Err(Error::domain(format!(
            "gamma has {} ages, the forecast {}",
            gamma.len(),
            point.n_ages()
        )));
    }
    let (lb, ub) = point
        .counts()
        .iter()
        .zip(gamma)
        .map(|(&d, &g)| ((d - theta * g).max(0.0), d + theta * g))
        .unzip();
    Ok(IntervalForecast {
        year: point.year,
        lb,
        ub,
        nominal: None,
    })
}

fn expect_pairs(found: usize, h: usize, test_len: usize) -> Result<usize> {
    if h == 0 || h > test_len {
        return Err(Error::domain(format!("horizon {h} outside 1..={test_len}")));
    }
    let expected = test_len + 1 - h;
    if found != expected {
        return Err(Error::domain(format!(
            "horizon {h}: expected {expected} interval/holdout pairs, got {found}"
        )));
    }
    Ok(expected)
}

/// Empirical coverage over the `test_len + 1 - h` intervals at horizon `h`.
pub fn ecp(intervals: &[IntervalForecast], holdouts: &[Vec<f64>], h: usize, test_len: usize) -> Result<f64> {
    if intervals.len() != holdouts.len() {
        return Err(Error::domain("interval and holdout counts differ"));
    }
    expect_pairs(intervals.len(), h, test_len)?;
    let mut outside = 0usize;
    let mut cells = 0usize;
    for (iv, y) in intervals.iter().zip(holdouts) {
        if iv.lb.len() != y.len() {
            return Err(Error::domain("interval and holdout lengths differ"));
        }
        cells += y.len();
        outside += y
            .iter()
            .zip(iv.lb.iter().zip(&iv.ub))
            .filter(|(v, (lo, hi))| *v < lo || *v > hi)
            .count();
    }
    Ok(1.0 - outside as f64 / cells as f64)
}

/// Coverage probability deviation `|ecp - (1 - alpha)|`.
pub fn cpd(ecp: f64, alpha: f64) -> f64 {
    (ecp - (1.0 - alpha)).abs()
}

pub fn interval_score(lb: f64, ub: f64, y: f64, alpha: f64) -> Result<f64> {
    if lb > ub {
        return Err(Error::domain(format!("lower bound {lb} exceeds upper bound {ub}")));
    }
    let mut s = ub - lb;
    if y < lb {
        s += 2.0 / alpha * (lb - y);
    }
    if y > ub {
        s += 2.0 / alpha * (y - ub);
    }
    Ok(s)
}

/// Mean of per-age interval scores over the forecasts at horizon `h`.
pub fn mean_interval_score(scores: &[Vec<f64>], h: usize, test_len: usize) -> Result<f64> {
    expect_pairs(scores.len(), h, test_len)?;
    let cells: usize = scores.iter().map(Vec::len).sum();
    Ok(scores.iter().flatten().sum::<f64>() / cells as f64)
}

fn residual_sets(panel: &Panel, forecasts: &[SplitForecast], max_h: usize) -> Result<Vec<ResidualSet>> {
    (1..=max_h)
        .map(|h| {
            let rows = pairs_at(panel, forecasts, h)
                .into_iter()
                .map(|(actual, fc)| actual.iter().zip(&fc).map(|(a, f)| a - f).collect())
                .collect();
            ResidualSet::new(h, rows)
        })
        .collect()
}

/// Residual sets for `h = 1..=19` from an expanding-window run over the last
/// [`VALIDATION_LEN`] years of `panel`.
pub fn validation_residuals(panel: &Panel, transform: Transform, selector: Selector) -> Result<Vec<ResidualSet>> {
    let (_, forecasts) = expanding_forecasts(panel, transform, selector, VALIDATION_LEN)
        .map_err(|e| match e {
            Error::Domain(msg) => Error::domain(format!("insufficient history for validation: {msg}")),
            other => other,
        })?;
    residual_sets(panel, &forecasts, MAX_CALIBRATED_H)
}

/// Γ and θ per calibrated horizon for each requested alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalCalibration {
    pub residuals: Vec<ResidualSet>,
    /// `thetas[a][h - 1]` for `alphas[a]`.
    pub alphas: Vec<f64>,
    pub thetas: Vec<Vec<ThetaCalibration>>,
}

impl IntervalCalibration {
    /// Γ and θ for horizon `h`; horizons past the calibrated range reuse the
    /// longest calibrated one, reported by the returned flag.
    pub fn for_horizon(&self, h: usize, alpha_index: usize) -> (&[f64], ThetaCalibration, bool) {
        let max_h = self.residuals.len();
        let hh = h.clamp(1, max_h);
        (
            &self.residuals[hh - 1].gamma,
            self.thetas[alpha_index][hh - 1],
            h > max_h,
        )
    }

    /// Interval around a point forecast `h` years ahead.
    pub fn interval(&self, point: &DeathCurve, h: usize, alpha_index: usize) -> Result<IntervalForecast> {
        let (gamma, cal, _) = self.for_horizon(h, alpha_index);
        let mut iv = build_interval(point, gamma, cal.theta)?;
        iv.nominal = Some(1.0 - cal.alpha);
        Ok(iv)
    }
}

pub fn calibrate_intervals(
    panel: &Panel,
    transform: Transform,
    selector: Selector,
    alphas: &[f64],
) -> Result<IntervalCalibration> {
    let residuals = validation_residuals(panel, transform, selector).stage("validation")?;
    let thetas = alphas
        .iter()
        .map(|&a| {
            residuals
                .iter()
                .map(|r| calibrate_theta(&r.rows, &r.gamma, a))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .stage("calibration")?;
    Ok(IntervalCalibration {
        residuals,
        alphas: alphas.to_vec(),
        thetas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalErrorRow {
    pub h: usize,
    pub alpha: f64,
    pub theta: f64,
    pub ecp: f64,
    pub cpd: f64,
    pub mis: f64,
    pub cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalErrorTable {
    pub transform: Transform,
    pub selector: Selector,
    pub country: String,
    pub sex: Sex,
    pub rows: Vec<IntervalErrorRow>,
}

pub const INTERVAL_ERROR_HEADER: &str = "transform,selector,country,sex,h,alpha,theta,ecp,cpd,mis";

impl IntervalErrorTable {
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{:.2},{:.9},{:.9},{:.9}",
                    self.transform, self.selector, self.country, self.sex, r.h, r.alpha, r.theta, r.ecp, r.cpd, r.mis
                )
            })
            .collect()
    }
}

/// Point and interval backtest sharing one expanding-window run. θ and Γ are
/// calibrated once on the validation block nested in the first `n - test_len`
/// years, then scored on the outer test years for `h = 1..=min(test_len - 1, 19)`.
pub fn backtest(
    panel: &Panel,
    transform: Transform,
    selector: Selector,
    test_len: usize,
    alphas: &[f64],
) -> Result<(PointErrorTable, IntervalErrorTable)> {
    let (plan, forecasts) = expanding_forecasts(panel, transform, selector, test_len).stage("backtest")?;
    let points = point_error_table(panel, &plan, &forecasts, transform, selector).stage("point errors")?;

    let train = panel.head(panel.n_years() - test_len).stage("calibration sample")?;
    let cal = calibrate_intervals(&train, transform, selector, alphas)?;

    let max_h = test_len.saturating_sub(1).min(MAX_CALIBRATED_H);
    let mut rows = Vec::new();
    for h in 1..=max_h {
        let targets: Vec<(&SplitForecast, usize)> = forecasts
            .iter()
            .filter(|f| f.split.max_horizon >= h)
            .map(|f| (f, f.split.train_len + h - 1))
            .collect();
        let holdouts: Vec<Vec<f64>> = targets.iter().map(|(_, t)| panel.rows()[*t].clone()).collect();
        for (a, &alpha) in alphas.iter().enumerate() {
            let intervals = targets
                .iter()
                .map(|(f, _)| cal.interval(&f.curves[h - 1], h, a))
                .collect::<Result<Vec<_>>>()?;
            let e = ecp(&intervals, &holdouts, h, test_len)?;
            let scores = intervals
                .iter()
                .zip(&holdouts)
                .map(|(iv, y)| {
                    iv.lb
                        .iter()
                        .zip(&iv.ub)
                        .zip(y)
                        .map(|((&lo, &hi), &v)| interval_score(lo, hi, v, alpha))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let (_, theta, _) = cal.for_horizon(h, a);
            rows.push(IntervalErrorRow {
                h,
                alpha,
                theta: theta.theta,
                ecp: e,
                cpd: cpd(e, alpha),
                mis: mean_interval_score(&scores, h, test_len)?,
                cap_hit: theta.cap_hit,
            });
        }
    }
    let intervals = IntervalErrorTable {
        transform,
        selector,
        country: panel.country.clone(),
        sex: panel.sex,
        rows,
    };
    Ok((points, intervals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::DEFAULT_RADIX;

    #[test]
    fn sd_examples() {
        assert_eq!(pointwise_sd(&[vec![0.0; 3], vec![0.0; 3]]).unwrap(), vec![0.0; 3]);
        let g = pointwise_sd(&[vec![-1.0, 4.0], vec![1.0, 4.0]]).unwrap();
        assert!((g[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        let rows = vec![vec![1.0, 2.0], vec![5.0, -1.0], vec![0.5, 0.0]];
        let mut rev = rows.clone();
        rev.reverse();
        for (a, b) in pointwise_sd(&rows).unwrap().iter().zip(pointwise_sd(&rev).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(pointwise_sd(&rows[..1]).is_err());
    }

    #[test]
    fn calibration_examples() {
        // Enumerating the grid by hand: theta in [0.5, 1) covers one of three
        // cells, [1, 2) two, 2 and above all three. Two thirds is closest to 0.8.
        let rows = vec![vec![-1.0], vec![0.5], vec![2.0]];
        let c = calibrate_theta(&rows, &[1.0], 0.2).unwrap();
        assert_eq!(c.theta, 1.0);
        assert!((c.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert!(!c.cap_hit);

        let zero = calibrate_theta(&[vec![0.0; 4], vec![0.0; 4]], &[0.0; 4], 0.2).unwrap();
        assert_eq!(zero.theta, 0.0);
        assert!(calibrate_theta(&[vec![1.0], vec![-1.0]], &[0.0], 0.2).is_err());
        assert!(calibrate_theta(&rows, &[1.0], 1.5).is_err());
    }

    #[test]
    fn calibration_matches_brute_force_grid() {
        let rows = vec![
            vec![0.3, -2.0, 0.0, 7.1],
            vec![-0.31, 1.0, 0.0, -0.2],
            vec![0.02, 0.7, 0.0, 3.3],
        ];
        let gamma = pointwise_sd(&rows).unwrap();
        for alpha in [0.05, 0.2, 0.5] {
            let c = calibrate_theta(&rows, &gamma, alpha).unwrap();
            let mut best = (0.0, f64::INFINITY);
            for i in 0..=3000 {
                let t = i as f64 / 100.0;
                let gap = (coverage(&rows, &gamma, t) - (1.0 - alpha)).abs();
                if gap < best.1 {
                    best = (t, gap);
                }
            }
            assert_eq!(c.theta, best.0, "alpha {alpha}");
        }
    }

    #[test]
    fn cap_is_flagged() {
        // Coverage only reaches 2/3 at theta = 30, still short of 0.95.
        let c = calibrate_theta(&[vec![29.5], vec![-30.0], vec![100.0]], &[1.0], 0.05).unwrap();
        assert_eq!(c.theta, THETA_CAP);
        assert!(c.cap_hit);
    }

    fn toy_curve(counts: Vec<f64>) -> DeathCurve {
        let radix = counts.iter().sum();
        DeathCurve::new("T", Sex::Female, 2000, counts, radix).unwrap()
    }

    #[test]
    fn interval_examples() {
        let p = toy_curve(vec![10.0, 1.0]);
        let iv = build_interval(&p, &[2.0, 2.0], 1.5).unwrap();
        assert_eq!((iv.lb[0], iv.ub[0]), (7.0, 13.0));
        let iv = build_interval(&p, &[2.0, 2.0], 1.0).unwrap();
        assert_eq!(iv.lb[1], 0.0);
        let iv = build_interval(&p, &[2.0, 2.0], 0.0).unwrap();
        assert_eq!(iv.lb, p.counts());
        assert_eq!(iv.ub, p.counts());
    }

    #[test]
    fn ecp_and_cpd_examples() {
        let iv = IntervalForecast {
            year: 2000,
            lb: vec![0.0, 0.0],
            ub: vec![1.0, 1.0],
            nominal: None,
        };
        assert_eq!(ecp(std::slice::from_ref(&iv), &[vec![0.5, 0.5]], 20, 20).unwrap(), 1.0);
        assert_eq!(ecp(std::slice::from_ref(&iv), &[vec![2.0, -1.0]], 20, 20).unwrap(), 0.0);
        assert_eq!(ecp(std::slice::from_ref(&iv), &[vec![0.5, 3.0]], 20, 20).unwrap(), 0.5);
        assert!(ecp(&[iv], &[vec![0.5, 3.0]], 19, 20).is_err());

        assert!(cpd(0.8, 0.2).abs() < 1e-15);
        assert!((cpd(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert!((cpd(0.95, 0.2) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(1.0, 2.0, 1.5, 0.2).unwrap(), 1.0);
        assert_eq!(interval_score(1.0, 2.0, 0.5, 0.2).unwrap(), 6.0);
        assert_eq!(interval_score(1.0, 2.0, 2.5, 0.2).unwrap(), 6.0);
        assert!(interval_score(2.0, 1.0, 1.5, 0.2).is_err());
    }

    #[test]
    fn mean_interval_score_bookkeeping() {
        let ones = vec![vec![1.0; 111]; 2];
        assert_eq!(mean_interval_score(&ones, 19, 20).unwrap(), 1.0);
        assert!(mean_interval_score(&ones[..1], 19, 20).is_err());
    }

    #[test]
    fn constant_panel_has_zero_residuals() {
        let panel = crate::evaluation::make_synthetic_panel(40, 0.0, 2).unwrap();
        let sets = validation_residuals(&panel, Transform::Cdf, Selector::Evr).unwrap();
        assert_eq!(sets.len(), 19);
        assert_eq!(sets[0].rows.len(), 20);
        assert_eq!(sets[18].rows.len(), 2);
        for s in &sets {
            for r in &s.rows {
                assert!(r.iter().all(|e| e.abs() < 1e-6 * DEFAULT_RADIX));
            }
        }
    }

    #[test]
    fn residuals_are_actual_minus_forecast() {
        let panel = crate::evaluation::make_synthetic_panel(36, 0.2, 5).unwrap();
        let sets = validation_residuals(&panel, Transform::Clr, Selector::Fixed(2)).unwrap();
        let (_, fc) = expanding_forecasts(&panel, Transform::Clr, Selector::Fixed(2), VALIDATION_LEN).unwrap();
        let split = &fc[3];
        let target = split.split.train_len + 1;
        for x in 0..111 {
            let expected = panel.rows()[target][x] - split.curves[1].counts()[x];
            assert_eq!(sets[1].rows[3][x], expected);
        }
        assert!(validation_residuals(&panel.head(30).unwrap(), Transform::Clr, Selector::Evr).is_err());
    }
}
