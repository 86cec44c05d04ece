//! Python bindings for the `coda_mortality` library.
//!
//! Panels, forecasts, calibrations and life tables are exposed as classes;
//! transforms, divergences, interval scores and annuity prices as functions.
//! Library errors surface as `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use coda_mortality::actuarial::{self, CohortSurvival, LifeTableDerived, DEFAULT_SEPARATION};
use coda_mortality::curve::{DeathCurve, DEFAULT_RADIX};
use coda_mortality::evaluation::{self, PipelineForecast};
use coda_mortality::uncertainty::{self, IntervalCalibration, DEFAULT_ALPHAS};
use coda_mortality::{ets, factor, hmd, transforms, Selector, Sex, Transform};

fn value_err(e: coda_mortality::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = coda_mortality::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(value_err)
}

/// Death counts by single year of age (rows) for consecutive years.
#[pyclass(name = "Panel", module = "coda_mortality", frozen)]
pub struct PyPanel {
    inner: coda_mortality::Panel,
}

#[pymethods]
impl PyPanel {
    /// Each row is rescaled to `radix`; years must be consecutive.
    #[new]
    #[pyo3(signature = (country, sex, years, rows, radix = DEFAULT_RADIX))]
    fn new(country: &str, sex: &str, years: Vec<i32>, rows: Vec<Vec<f64>>, radix: f64) -> PyResult<Self> {
        if years.len() != rows.len() {
            return Err(PyValueError::new_err(format!(
                "{} years but {} rows",
                years.len(),
                rows.len()
            )));
        }
        let sex: Sex = parse(sex)?;
        let curves = years
            .into_iter()
            .zip(rows)
            .map(|(y, r)| DeathCurve::from_mass(country, sex, y, r, radix))
            .collect::<coda_mortality::Result<Vec<_>>>()
            .map_err(value_err)?;
        let inner = coda_mortality::Panel::new(curves).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Deterministic synthetic panel whose modal age drifts upward.
    #[staticmethod]
    #[pyo3(signature = (n_years, drift = 0.2, seed = 0, sex = "female"))]
    fn synthetic(n_years: usize, drift: f64, seed: u64, sex: &str) -> PyResult<Self> {
        let inner = evaluation::make_synthetic_panel_for(n_years, drift, seed, parse(sex)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Reads `<country>.<f|m>ltper_1x1.txt` from `data_dir`.
    #[staticmethod]
    #[pyo3(signature = (data_dir, country, sex, radix = DEFAULT_RADIX))]
    fn load_hmd(data_dir: std::path::PathBuf, country: &str, sex: &str, radix: f64) -> PyResult<Self> {
        let inner = hmd::load_panel(&data_dir, country, parse(sex)?, radix).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// The first `n` years.
    fn head(&self, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.head(n).map_err(value_err)?,
        })
    }

    #[getter]
    fn country(&self) -> String {
        self.inner.curve(0).country
    }

    #[getter]
    fn sex(&self) -> &'static str {
        self.inner.curve(0).sex.as_str()
    }

    #[getter]
    fn years(&self) -> Vec<i32> {
        self.inner.years().to_vec()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().to_vec()
    }

    #[getter]
    fn radix(&self) -> f64 {
        self.inner.radix()
    }

    fn __len__(&self) -> usize {
        self.inner.n_years()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel({} {}, {}-{})",
            self.country(),
            self.sex(),
            self.inner.years()[0],
            self.inner.last_year()
        )
    }
}

/// Point forecast of future death curves.
#[pyclass(name = "Forecast", module = "coda_mortality", frozen)]
pub struct PyForecast {
    inner: PipelineForecast,
}

#[pymethods]
impl PyForecast {
    #[getter]
    fn years(&self) -> Vec<i32> {
        self.inner.curves.iter().map(|c| c.year).collect()
    }

    #[getter]
    fn curves(&self) -> Vec<Vec<f64>> {
        self.inner.curves.iter().map(|c| c.counts().to_vec()).collect()
    }

    /// Number of retained principal components.
    #[getter]
    fn k(&self) -> usize {
        self.inner.fit.k
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.fit.eigenvalues.clone()
    }

    /// Selected ETS model per component, e.g. `"ETS(A,Ad,N)"`.
    #[getter]
    fn models(&self) -> Vec<String> {
        self.inner.models.iter().map(|m| m.tag()).collect()
    }

    /// Price of a unit annuity paid in arrears for `maturity` years to a
    /// cohort aged `entry_age` in the first forecast year.
    fn annuity_price(&self, entry_age: usize, maturity: usize, rate: f64) -> PyResult<f64> {
        let s = actuarial::cohort_survival(&self.inner.curves, entry_age, maturity).map_err(value_err)?;
        Ok(actuarial::annuity_price(&s, rate, maturity).map_err(value_err)?.price)
    }

    /// `(year, age, e_x)` for every forecast year and requested age.
    #[pyo3(signature = (ages = vec![0, 60]))]
    fn life_expectancy(&self, ages: Vec<usize>) -> PyResult<Vec<(i32, usize, f64)>> {
        let rows = actuarial::life_expectancy_table(&self.inner.curves, &ages).map_err(value_err)?;
        Ok(rows.into_iter().map(|r| (r.year, r.age, r.ex)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.curves.len()
    }
}

/// Interval widths and multipliers fitted on a validation block.
#[pyclass(name = "Calibration", module = "coda_mortality", frozen)]
pub struct PyCalibration {
    inner: IntervalCalibration,
}

#[pymethods]
impl PyCalibration {
    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas.clone()
    }

    /// `(theta, validation coverage, beyond calibrated range)` at horizon `h`.
    fn theta(&self, h: usize, alpha_index: usize) -> PyResult<(f64, f64, bool)> {
        self.check_alpha(alpha_index)?;
        let (_, cal, extrapolated) = self.inner.for_horizon(h, alpha_index);
        Ok((cal.theta, cal.coverage, extrapolated))
    }

    /// `(lower, upper)` curves for every year of `forecast`.
    fn intervals(&self, forecast: &PyForecast, alpha_index: usize) -> PyResult<Vec<(Vec<f64>, Vec<f64>)>> {
        Ok(self
            .forecast_intervals(forecast, alpha_index)?
            .into_iter()
            .map(|iv| (iv.lb, iv.ub))
            .collect())
    }

    /// `(low, high)` annuity prices from the interval bounds.
    fn annuity_interval(
        &self,
        forecast: &PyForecast,
        entry_age: usize,
        maturity: usize,
        rate: f64,
        alpha_index: usize,
    ) -> PyResult<(f64, f64)> {
        let ivs = self.forecast_intervals(forecast, alpha_index)?;
        actuarial::annuity_interval(&forecast.inner.curves, &ivs, entry_age, rate, maturity).map_err(value_err)
    }
}

impl PyCalibration {
    fn check_alpha(&self, alpha_index: usize) -> PyResult<()> {
        if alpha_index >= self.inner.alphas.len() {
            return Err(PyValueError::new_err(format!(
                "alpha index {alpha_index} out of range for {} levels",
                self.inner.alphas.len()
            )));
        }
        Ok(())
    }

    fn forecast_intervals(
        &self,
        forecast: &PyForecast,
        alpha_index: usize,
    ) -> PyResult<Vec<uncertainty::IntervalForecast>> {
        self.check_alpha(alpha_index)?;
        forecast
            .inner
            .curves
            .iter()
            .enumerate()
            .map(|(i, c)| self.inner.interval(c, i + 1, alpha_index))
            .collect::<coda_mortality::Result<Vec<_>>>()
            .map_err(value_err)
    }
}

#[pyclass(name = "LifeTable", module = "coda_mortality", frozen, get_all)]
pub struct PyLifeTable {
    lx: Vec<f64>,
    qx: Vec<f64>,
    px: Vec<f64>,
    person_years: Vec<f64>,
    tx: Vec<f64>,
    ex: Vec<f64>,
}

impl From<LifeTableDerived> for PyLifeTable {
    fn from(t: LifeTableDerived) -> Self {
        Self {
            lx: t.lx,
            qx: t.qx,
            px: t.px,
            person_years: t.person_years,
            tx: t.tx,
            ex: t.ex,
        }
    }
}

/// Point forecast `horizon` years past the last year of `panel`.
#[pyfunction]
#[pyo3(signature = (panel, transform = "cdf", selector = "k6", horizon = 50))]
fn forecast(py: Python<'_>, panel: &PyPanel, transform: &str, selector: &str, horizon: usize) -> PyResult<PyForecast> {
    let (t, s): (Transform, Selector) = (parse(transform)?, parse(selector)?);
    let inner = py
        .detach(|| evaluation::run_pipeline(&panel.inner, t, s, horizon))
        .map_err(value_err)?;
    Ok(PyForecast { inner })
}

/// Calibrates interval multipliers on the last years of `panel`.
#[pyfunction]
#[pyo3(signature = (panel, transform = "cdf", selector = "k6", alphas = DEFAULT_ALPHAS.to_vec()))]
fn calibrate(py: Python<'_>, panel: &PyPanel, transform: &str, selector: &str, alphas: Vec<f64>) -> PyResult<PyCalibration> {
    let (t, s): (Transform, Selector) = (parse(transform)?, parse(selector)?);
    let inner = py
        .detach(|| uncertainty::calibrate_intervals(&panel.inner, t, s, &alphas))
        .map_err(value_err)?;
    Ok(PyCalibration { inner })
}

/// Expanding-window backtest. Returns `(point, interval)` rows:
/// `(h, kld, jsd)` and `(h, alpha, theta, ecp, cpd, mis)`.
#[pyfunction]
#[pyo3(signature = (panel, transform = "cdf", selector = "k6", test_len = 20, alphas = DEFAULT_ALPHAS.to_vec()))]
#[allow(clippy::type_complexity)]
fn backtest(
    py: Python<'_>,
    panel: &PyPanel,
    transform: &str,
    selector: &str,
    test_len: usize,
    alphas: Vec<f64>,
) -> PyResult<(Vec<(usize, f64, f64)>, Vec<(usize, f64, f64, f64, f64, f64)>)> {
    let (t, s): (Transform, Selector) = (parse(transform)?, parse(selector)?);
    let (points, intervals) = py
        .detach(|| uncertainty::backtest(&panel.inner, t, s, test_len, &alphas))
        .map_err(value_err)?;
    Ok((
        points.rows.iter().map(|r| (r.h, r.kld, r.jsd)).collect(),
        intervals
            .rows
            .iter()
            .map(|r| (r.h, r.alpha, r.theta, r.ecp, r.cpd, r.mis))
            .collect(),
    ))
}

/// `(train_len, max_horizon)` per expanding-window split.
#[pyfunction]
fn window_plan(n_years: usize, test_len: usize) -> PyResult<Vec<(usize, usize)>> {
    let plan = evaluation::make_window_plan(n_years, test_len).map_err(value_err)?;
    Ok(plan.splits.iter().map(|s| (s.train_len, s.max_horizon)).collect())
}

/// Centred log counts and the per-age geometric means.
#[pyfunction]
fn clr_forward(panel: &PyPanel) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let (m, basis) = transforms::clr_forward(&panel.inner).map_err(value_err)?;
    Ok((m.rows, basis.alpha))
}

#[pyfunction]
#[pyo3(signature = (beta, alpha, radix = DEFAULT_RADIX))]
fn clr_inverse(beta: Vec<f64>, alpha: Vec<f64>, radix: f64) -> PyResult<Vec<f64>> {
    transforms::clr_inverse(&beta, &transforms::ClrBasis { alpha, radix }).map_err(value_err)
}

/// Logit of the cumulative density at every age but the last.
#[pyfunction]
fn cdf_forward(panel: &PyPanel) -> PyResult<Vec<Vec<f64>>> {
    Ok(transforms::cdf_forward(&panel.inner).map_err(value_err)?.rows)
}

#[pyfunction]
#[pyo3(signature = (z, radix = DEFAULT_RADIX))]
fn cdf_inverse(z: Vec<f64>, radix: f64) -> PyResult<Vec<f64>> {
    transforms::cdf_inverse(&z, radix).map_err(value_err)
}

/// `(eigenvalues, components, scores)` of the time-centred rows.
#[pyfunction]
#[pyo3(signature = (rows, selector = "evr"))]
#[allow(clippy::type_complexity)]
fn fit_pca(rows: Vec<Vec<f64>>, selector: &str) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let fit = factor::fit_pca(&rows, parse(selector)?).map_err(value_err)?;
    Ok((fit.eigenvalues, fit.components, fit.scores))
}

/// AICc-selected ETS model tag and its point forecast.
#[pyfunction]
fn ets_forecast(series: Vec<f64>, horizon: usize) -> PyResult<(String, Vec<f64>)> {
    let model = ets::select_ets(&series).map_err(value_err)?;
    let f = ets::forecast_ets(&model, horizon).map_err(value_err)?;
    Ok((model.tag(), f.point))
}

#[pyfunction]
fn kld_sym(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    evaluation::kld_sym(&p, &q).map_err(value_err)
}

#[pyfunction]
fn jsd_geo(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    evaluation::jsd_geo(&p, &q).map_err(value_err)
}

#[pyfunction]
fn interval_score(lb: f64, ub: f64, y: f64, alpha: f64) -> PyResult<f64> {
    uncertainty::interval_score(lb, ub, y, alpha).map_err(value_err)
}

/// `(theta, coverage, cap_hit)` for residual rows scaled by `gamma`.
#[pyfunction]
fn calibrate_theta(rows: Vec<Vec<f64>>, gamma: Vec<f64>, alpha: f64) -> PyResult<(f64, f64, bool)> {
    let c = uncertainty::calibrate_theta(&rows, &gamma, alpha).map_err(value_err)?;
    Ok((c.theta, c.coverage, c.cap_hit))
}

#[pyfunction]
#[pyo3(signature = (dx, radix = DEFAULT_RADIX, separation = DEFAULT_SEPARATION))]
fn lifetable(dx: Vec<f64>, radix: f64, separation: f64) -> PyLifeTable {
    actuarial::derive_lifetable_with(&dx, radix, separation).into()
}

/// Annuity price from survival probabilities `tau_p_x`, `tau = 1..`.
#[pyfunction]
#[pyo3(signature = (survival, rate, maturity = None))]
fn annuity_price(survival: Vec<f64>, rate: f64, maturity: Option<usize>) -> PyResult<f64> {
    let maturity = maturity.unwrap_or(survival.len());
    let s = CohortSurvival {
        entry_age: 0,
        entry_year: 0,
        survival,
    };
    Ok(actuarial::annuity_price(&s, rate, maturity).map_err(value_err)?.price)
}

#[pymodule(name = "coda_mortality")]
pub mod coda_mortality_py {
    #[pymodule_export]
    use super::{
        annuity_price, backtest, calibrate, calibrate_theta, cdf_forward, cdf_inverse, clr_forward, clr_inverse,
        ets_forecast, fit_pca, forecast, interval_score, jsd_geo, kld_sym, lifetable, window_plan, PyCalibration,
        PyForecast, PyLifeTable, PyPanel,
    };

    #[pymodule_init]
    fn init(m: &pyo3::Bound<'_, pyo3::types::PyModule>) -> pyo3::PyResult<()> {
        use pyo3::types::PyModuleMethods;
        m.add("N_AGES", coda_mortality::N_AGES)?;
        m.add("DEFAULT_RADIX", coda_mortality::DEFAULT_RADIX)?;
        Ok(())
    }
}
