//! Non-seasonal exponential-smoothing state-space models with automatic
//! selection by AICc.
//!
//! Annual score series carry no seasonality, so the candidate set is the six
//! error/trend pairs `{A, M} x {N, A, Ad}`. Each candidate's smoothing
//! parameters and initial states are fitted by maximum likelihood with a
//! multi-start Nelder-Mead search.

use std::fmt;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::optim::NelderMead;

pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 0.9999;
pub const BETA_MIN: f64 = 1e-4;
pub const PHI_MIN: f64 = 0.8;
pub const PHI_MAX: f64 = 0.98;
pub const MIN_OBS: usize = 4;

/// Starting `(alpha, beta / alpha)` pairs for the multi-start search.
const STARTS: [(f64, f64); 5] = [(0.1, 0.1), (0.5, 0.1), (0.9, 0.1), (0.5, 0.5), (0.9, 0.5)];
const PHI_START: f64 = 0.9;
const SIGMA2_FLOOR_REL: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorType {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrendType {
    None,
    Additive,
    Damped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EtsSpec {
    pub error: ErrorType,
    pub trend: TrendType,
}

impl EtsSpec {
    pub const fn new(error: ErrorType, trend: TrendType) -> Self {
        Self { error, trend }
    }

    /// Number of optimised quantities: smoothing parameters and initial states.
    fn n_free(self) -> usize {
        match self.trend {
            TrendType::None => 2,
            TrendType::Additive => 4,
            TrendType::Damped => 5,
        }
    }

    fn has_trend(self) -> bool {
        self.trend != TrendType::None
    }
}

impl fmt::Display for EtsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = match self.error {
            ErrorType::Additive => "A",
            ErrorType::Multiplicative => "M",
        };
        let t = match self.trend {
            TrendType::None => "N",
            TrendType::Additive => "A",
            TrendType::Damped => "Ad",
        };
        write!(f, "ETS({e},{t},N)")
    }
}

/// Candidate order doubles as the AICc tie-break order.
pub const CANDIDATES: [EtsSpec; 6] = [
    EtsSpec::new(ErrorType::Additive, TrendType::None),
    EtsSpec::new(ErrorType::Additive, TrendType::Additive),
    EtsSpec::new(ErrorType::Additive, TrendType::Damped),
    EtsSpec::new(ErrorType::Multiplicative, TrendType::None),
    EtsSpec::new(ErrorType::Multiplicative, TrendType::Additive),
    EtsSpec::new(ErrorType::Multiplicative, TrendType::Damped),
];

/// Models used when no candidate can be fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Fewer than [`MIN_OBS`] observations: repeat the last value.
    Naive,
    /// Too few observations for any candidate's AICc: random walk with drift.
    Drift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtsModel {
    pub spec: EtsSpec,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub phi: Option<f64>,
    pub initial_level: f64,
    pub initial_trend: f64,
    pub level: f64,
    pub trend: f64,
    pub log_likelihood: f64,
    pub aicc: f64,
    pub n_obs: usize,
    /// False when the best start hit the iteration cap.
    pub converged: bool,
    pub fallback: Option<Fallback>,
}

impl EtsModel {
    pub fn tag(&self) -> String {
        match self.fallback {
            Some(Fallback::Naive) => "naive".to_string(),
            Some(Fallback::Drift) => "rwdrift".to_string(),
            None => self.spec.to_string(),
        }
    }

    /// Number of parameters counted by AICc (free quantities plus the variance).
    pub fn n_params(&self) -> usize {
        self.spec.n_free() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreForecast {
    pub point: Vec<f64>,
    pub model: String,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    alpha: f64,
    beta: f64,
    phi: f64,
    level: f64,
    trend: f64,
}

impl Params {
    fn unpack(spec: EtsSpec, v: &[f64]) -> Self {
        match spec.trend {
            TrendType::None => Params { alpha: v[0], beta: 0.0, phi: 1.0, level: v[1], trend: 0.0 },
            TrendType::Additive => Params { alpha: v[0], beta: v[1], phi: 1.0, level: v[2], trend: v[3] },
            TrendType::Damped => Params { alpha: v[0], beta: v[1], phi: v[2], level: v[3], trend: v[4] },
        }
    }

    fn feasible(&self, spec: EtsSpec) -> bool {
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&self.alpha) {
            return false;
        }
        if spec.has_trend() && !(BETA_MIN..=self.alpha).contains(&self.beta) {
            return false;
        }
        if spec.trend == TrendType::Damped && !(PHI_MIN..=PHI_MAX).contains(&self.phi) {
            return false;
        }
        self.level.is_finite() && self.trend.is_finite()
    }
}

struct Filtered {
    neg_loglik: f64,
    level: f64,
    trend: f64,
}

/// Runs the state recursions and returns the negative log-likelihood
/// (concentrated over the innovation variance) with the final states.
fn filter(spec: EtsSpec, p: &Params, y: &[f64], sigma2_floor: f64) -> Option<Filtered> {
    let n = y.len() as f64;
    let (mut level, mut trend) = (p.level, p.trend);
    let phi = if spec.trend == TrendType::Damped { p.phi } else { 1.0 };
    let mut sse = 0.0;
    let mut log_scale = 0.0;
    for &obs in y {
        let damped_trend = if spec.has_trend() { phi * trend } else { 0.0 };
        let fitted = level + damped_trend;
        match spec.error {
            ErrorType::Additive => {
                let e = obs - fitted;
                sse += e * e;
                level = fitted + p.alpha * e;
                trend = damped_trend + p.beta * e;
            }
            ErrorType::Multiplicative => {
                if fitted == 0.0 || fitted.signum() != obs.signum() {
                    return None;
                }
                let e = (obs - fitted) / fitted;
                sse += e * e;
                log_scale += fitted.abs().ln();
                level = fitted * (1.0 + p.alpha * e);
                trend = damped_trend + p.beta * fitted * e;
            }
        }
        if !level.is_finite() || !trend.is_finite() {
            return None;
        }
    }
    let sigma2 = (sse / n).max(sigma2_floor);
    let neg_loglik = 0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) + log_scale;
    neg_loglik.is_finite().then_some(Filtered {
        neg_loglik,
        level,
        trend,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn admissible(spec: EtsSpec, y: &[f64]) -> bool {
    match spec.error {
        ErrorType::Additive => true,
        ErrorType::Multiplicative => {
            let s = y[0].signum();
            y.iter().all(|&v| v != 0.0 && v.signum() == s)
        }
    }
}

fn aicc(neg_loglik: f64, k: usize, n: usize) -> Option<f64> {
    let denom = n as f64 - k as f64 - 1.0;
    (denom > 0.0).then(|| 2.0 * neg_loglik + 2.0 * k as f64 + 2.0 * (k * (k + 1)) as f64 / denom)
}

/// Fits one candidate. `Ok(None)` marks an inadmissible specification, i.e.
/// a multiplicative-error model on a series that is zero or changes sign.
pub fn fit_ets(series: &[f64], spec: EtsSpec) -> Result<Option<EtsModel>> {
    let n = series.len();
    if n < MIN_OBS {
        return Err(Error::domain(format!(
            "ETS needs at least {MIN_OBS} observations, got {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("series contains non-finite values"));
    }
    if !admissible(spec, series) {
        return Ok(None);
    }

    let sigma2_floor = match spec.error {
        ErrorType::Additive => {
            SIGMA2_FLOOR_REL * mean(&series.iter().map(|v| v * v).collect::<Vec<_>>()).max(f64::MIN_POSITIVE)
        }
        ErrorType::Multiplicative => SIGMA2_FLOOR_REL,
    };
    let m = mean(series);
    let sd = (series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let magnitude = series.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let state_step = 0.2 * sd.max(1e-6 * magnitude);

    let init_len = n.min(10);
    let b0 = (series[init_len - 1] - series[0]) / (init_len as f64 - 1.0);
    let l0 = series[0];

    let objective = |v: &[f64]| -> f64 {
        let p = Params::unpack(spec, v);
        if !p.feasible(spec) {
            return f64::INFINITY;
        }
        filter(spec, &p, series, sigma2_floor).map_or(f64::INFINITY, |f| f.neg_loglik)
    };

    let optimizer = NelderMead::default();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for &(alpha, beta_frac) in &STARTS {
        let alpha_step = if alpha > 0.5 { -0.1 } else { 0.1 };
        let beta = (alpha * beta_frac).max(BETA_MIN);
        let (x0, steps): (Vec<f64>, Vec<f64>) = match spec.trend {
            TrendType::None => (vec![alpha, l0], vec![alpha_step, state_step]),
            TrendType::Additive => (
                vec![alpha, beta, l0, b0],
                vec![alpha_step, 0.5 * beta, state_step, state_step],
            ),
            TrendType::Damped => (
                vec![alpha, beta, PHI_START, l0, b0],
                vec![alpha_step, 0.5 * beta, 0.04, state_step, state_step],
            ),
        };
        let res = optimizer.minimize(objective, &x0, &steps);
        if best.as_ref().is_none_or(|b| res.fx < b.1) {
            best = Some((res.x, res.fx, res.converged));
        }
    }
    let (x, fx, converged) = best.expect("at least one start");
    if !fx.is_finite() {
        warn!("{spec}: no feasible parameters found");
        return Ok(None);
    }
    if !converged {
        debug!("{spec}: optimiser hit the iteration cap; keeping best point");
    }

    let p = Params::unpack(spec, &x);
    let f = filter(spec, &p, series, sigma2_floor).expect("best point is feasible");
    let k = spec.n_free() + 1;
    Ok(Some(EtsModel {
        spec,
        alpha: p.alpha,
        beta: spec.has_trend().then_some(p.beta),
        phi: (spec.trend == TrendType::Damped).then_some(p.phi),
        initial_level: p.level,
        initial_trend: p.trend,
        level: f.level,
        trend: f.trend,
        log_likelihood: -f.neg_loglik,
        aicc: aicc(f.neg_loglik, k, n).unwrap_or(f64::INFINITY),
        n_obs: n,
        converged,
        fallback: None,
    }))
}

fn fallback_model(series: &[f64], kind: Fallback) -> EtsModel {
    let n = series.len();
    let last = series.last().copied().unwrap_or(0.0);
    let (spec, trend) = match kind {
        Fallback::Naive => (CANDIDATES[0], 0.0),
        Fallback::Drift => (
            CANDIDATES[1],
            if n > 1 {
                (last - series[0]) / (n as f64 - 1.0)
            } else {
                0.0
            },
        ),
    };
    EtsModel {
        spec,
        alpha: 1.0,
        beta: None,
        phi: None,
        initial_level: series.first().copied().unwrap_or(0.0),
        initial_trend: trend,
        level: last,
        trend,
        log_likelihood: f64::NAN,
        aicc: f64::NAN,
        n_obs: n,
        converged: true,
        fallback: Some(kind),
    }
}

/// Fits every admissible candidate and keeps the smallest AICc.
pub fn select_ets(series: &[f64]) -> Result<EtsModel> {
    Ok(select_ets_with_candidates(series)?.0)
}

/// As [`select_ets`], also returning every fitted candidate in list order.
pub fn select_ets_with_candidates(series: &[f64]) -> Result<(EtsModel, Vec<EtsModel>)> {
    let n = series.len();
    if n < MIN_OBS {
        warn!("series of length {n} is too short for ETS; using the last value");
        return Ok((fallback_model(series, Fallback::Naive), Vec::new()));
    }
    let mut fitted = Vec::new();
    for spec in CANDIDATES {
        if n as f64 - (spec.n_free() + 1) as f64 - 1.0 <= 0.0 {
            continue;
        }
        if let Some(model) = fit_ets(series, spec)? {
            fitted.push(model);
        }
    }
    let mut best: Option<&EtsModel> = None;
    for m in &fitted {
        if best.is_none_or(|b| m.aicc < b.aicc) {
            best = Some(m);
        }
    }
    let chosen = match best {
        Some(m) if m.aicc.is_finite() => m.clone(),
        _ => fallback_model(series, Fallback::Drift),
    };
    Ok((chosen, fitted))
}

/// Point forecasts for horizons `1..=horizon`.
pub fn forecast_ets(model: &EtsModel, horizon: usize) -> Result<ScoreForecast> {
    if horizon < 1 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    let phi = model.phi.unwrap_or(1.0);
    let mut point = Vec::with_capacity(horizon);
    let mut damp_sum = 0.0;
    let mut damp_pow = 1.0;
    for _ in 0..horizon {
        let value = match model.spec.trend {
            TrendType::None => model.level,
            TrendType::Additive => {
                damp_sum += 1.0;
                model.level + damp_sum * model.trend
            }
            TrendType::Damped => {
                damp_pow *= phi;
                damp_sum += damp_pow;
                model.level + damp_sum * model.trend
            }
        };
        point.push(value);
    }
    Ok(ScoreForecast {
        point,
        model: model.tag(),
    })
}
