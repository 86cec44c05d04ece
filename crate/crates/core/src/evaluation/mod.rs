//! Expanding-window backtesting of the forecasting pipeline and point
//! forecast error metrics.

mod divergence;
mod synthetic;

pub use divergence::{aggregate_point_errors, jsd_geo, kld_sym};
pub use synthetic::{
    make_synthetic_panel, make_synthetic_panel_for, MIN_SYNTH_YEARS, SYNTH_COUNTRY,
    SYNTH_FIRST_YEAR,
};

use rayon::prelude::*;

use crate::curve::{DeathCurve, Panel, Sex};
use crate::error::{Error, Result, StageContext};
use crate::ets::{forecast_ets, select_ets, EtsModel};
use crate::factor::{fit_pca, FactorFit, Selector};
use crate::transforms::{cdf_forward, cdf_inverse, clr_forward, clr_inverse, floor_panel, Transform};

pub const DEFAULT_TEST_LEN: usize = 20;
/// Smallest training sample the first split may have.
pub const MIN_TRAIN_YEARS: usize = 10;

/// One expanding-window split: fit on the first `train_len` years, forecast
/// horizons `1..=max_horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train_len: usize,
    pub max_horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub n_years: usize,
    pub test_len: usize,
    pub splits: Vec<Split>,
}

impl WindowPlan {
    /// Number of forecasts made at horizon `h`: `test_len + 1 - h`.
    pub fn forecasts_at(&self, h: usize) -> usize {
        self.splits.iter().filter(|s| s.max_horizon >= h).count()
    }

    pub fn total_forecasts(&self) -> usize {
        self.splits.iter().map(|s| s.max_horizon).sum()
    }
}

pub fn make_window_plan(n_years: usize, test_len: usize) -> Result<WindowPlan> {
    if test_len == 0 {
        return Err(Error::domain("test length must be at least 1"));
    }
    if n_years <= test_len + MIN_TRAIN_YEARS {
        return Err(Error::domain(format!(
            "{n_years} years cannot hold a {test_len}-year test block and more than {MIN_TRAIN_YEARS} training years"
        )));
    }
    let splits = (1..=test_len)
        .map(|j| Split {
            train_len: n_years - test_len + j - 1,
            max_horizon: test_len - j + 1,
        })
        .collect();
    Ok(WindowPlan {
        n_years,
        test_len,
        splits,
    })
}

/// Forecast curves plus the artefacts that produced them.
#[derive(Debug, Clone)]
pub struct PipelineForecast {
    pub curves: Vec<DeathCurve>,
    pub fit: FactorFit,
    pub models: Vec<EtsModel>,
}

/// transform -> PCA -> ETS per score -> reconstruct -> inverse transform.
pub fn run_pipeline(
    panel: &Panel,
    transform: Transform,
    selector: Selector,
    horizon: usize,
) -> Result<PipelineForecast> {
    if horizon == 0 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    let floored = floor_panel(panel).stage("floor")?;
    let (matrix, clr_basis) = match transform {
        Transform::Clr => {
            let (m, b) = clr_forward(&floored).stage("clr transform")?;
            (m, Some(b))
        }
        Transform::Cdf => (cdf_forward(&floored).stage("cdf transform")?, None),
    };
    let fit = fit_pca(&matrix.rows, selector).stage("pca")?;

    let models = (0..fit.k)
        .map(|k| select_ets(&fit.score_series(k)))
        .collect::<Result<Vec<_>>>()
        .stage("ets")?;
    let paths = models
        .iter()
        .map(|m| forecast_ets(m, horizon).map(|f| f.point))
        .collect::<Result<Vec<_>>>()
        .stage("ets forecast")?;

    let radix = panel.radix();
    let mut curves = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let scores: Vec<f64> = paths.iter().map(|p| p[h]).collect();
        let row = fit.reconstruct(&scores).stage("reconstruct")?;
        let counts = match &clr_basis {
            Some(basis) => clr_inverse(&row, basis),
            None => cdf_inverse(&row, radix),
        }
        .stage("inverse transform")?;
        let year = panel.last_year() + h as i32 + 1;
        curves.push(
            DeathCurve::new(panel.country.clone(), panel.sex, year, counts, radix)
                .stage("inverse transform")?,
        );
    }
    Ok(PipelineForecast {
        curves,
        fit,
        models,
    })
}

/// Forecasts made from one split of a [`WindowPlan`].
#[derive(Debug, Clone)]
pub struct SplitForecast {
    pub split: Split,
    /// `curves[h - 1]` targets panel year index `train_len + h - 1`.
    pub curves: Vec<DeathCurve>,
}

/// Runs the pipeline on every split of the plan. The transform basis and the
/// PCA are refitted per split on training years only.
pub fn expanding_forecasts(
    panel: &Panel,
    transform: Transform,
    selector: Selector,
    test_len: usize,
) -> Result<(WindowPlan, Vec<SplitForecast>)> {
    let plan = make_window_plan(panel.n_years(), test_len)?;
    let forecasts = plan
        .splits
        .par_iter()
        .map(|&split| {
            let train = panel.head(split.train_len)?;
            let f = run_pipeline(&train, transform, selector, split.max_horizon)?;
            Ok(SplitForecast {
                split,
                curves: f.curves,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((plan, forecasts))
}

/// `(holdout, forecast)` count vectors at horizon `h`, in split order.
pub fn pairs_at(panel: &Panel, forecasts: &[SplitForecast], h: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    forecasts
        .iter()
        .filter(|f| f.split.max_horizon >= h)
        .map(|f| {
            let target = f.split.train_len + h - 1;
            (panel.rows()[target].clone(), f.curves[h - 1].counts().to_vec())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointErrorRow {
    pub h: usize,
    pub kld: f64,
    pub jsd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointErrorTable {
    pub transform: Transform,
    pub selector: Selector,
    pub country: String,
    pub sex: Sex,
    pub rows: Vec<PointErrorRow>,
}

impl PointErrorTable {
    /// Rows of `transform,selector,country,sex,h,kld,jsd`.
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{:.9},{:.9}",
                    self.transform, self.selector, self.country, self.sex, r.h, r.kld, r.jsd
                )
            })
            .collect()
    }
}

pub const POINT_ERROR_HEADER: &str = "transform,selector,country,sex,h,kld,jsd";

pub fn point_error_table(
    panel: &Panel,
    plan: &WindowPlan,
    forecasts: &[SplitForecast],
    transform: Transform,
    selector: Selector,
) -> Result<PointErrorTable> {
    let rows = (1..=plan.test_len)
        .map(|h| {
            let (kld, jsd) = aggregate_point_errors(&pairs_at(panel, forecasts, h), h, plan.test_len)?;
            Ok(PointErrorRow { h, kld, jsd })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointErrorTable {
        transform,
        selector,
        country: panel.country.clone(),
        sex: panel.sex,
        rows,
    })
}

/// KLD/JSD at every horizon of an expanding-window backtest.
pub fn backtest_point(
    panel: &Panel,
    transform: Transform,
    selector: Selector,
    test_len: usize,
) -> Result<PointErrorTable> {
    let (plan, forecasts) = expanding_forecasts(panel, transform, selector, test_len)?;
    point_error_table(panel, &plan, &forecasts, transform, selector)
}
