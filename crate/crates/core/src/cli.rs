//! Command-line front end. Every command writes CSVs whose first line is
//! `# config_hash=<sha256>` so outputs can be traced to their settings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::actuarial::{
    annuity_interval, annuity_price, cohort_survival, derive_lifetable, life_expectancy_table,
    LIFE_EXPECTANCY_AGES,
};
use crate::config::RunConfig;
use crate::curve::{DeathCurve, Panel, Sex, N_AGES};
use crate::error::{Error, Result, StageContext};
use crate::evaluation::{make_synthetic_panel_for, run_pipeline, PipelineForecast, POINT_ERROR_HEADER};
use crate::factor::Selector;
use crate::hmd::{load_panel, write_dx_rows, write_hmd_lifetable, LifeTableRow, OPEN_AGE};
use crate::transforms::Transform;
use crate::uncertainty::{backtest, calibrate_intervals, IntervalCalibration, INTERVAL_ERROR_HEADER, MAX_CALIBRATED_H};

#[derive(Debug, Parser)]
#[command(name = "coda-mortality", version, about = "Forecast life-table death counts and price annuities")]
pub struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of HMD `*.{f,m}ltper_1x1.txt` files (falls back to $CODA_MORTALITY_DATA).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `clr` or `cdf`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub transform: Vec<Transform>,
    /// `evr` or `k<N>`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub selector: Vec<Selector>,
    /// Interval levels as alpha, e.g. `0.2,0.05`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Discount rate applied to every population.
    #[arg(long, global = true)]
    pub rate: Option<f64>,
    /// TOML file with a `[rates]` table replacing the bundled rates.
    #[arg(long, global = true)]
    pub rates: Option<PathBuf>,
    /// Forecast years (default 50).
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Backtest holdout length (default 20).
    #[arg(long, global = true)]
    pub test_len: Option<usize>,
    /// Seed for `synth`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Country codes to run; all found when omitted.
    #[arg(long, global = true, value_delimiter = ',')]
    pub country: Vec<String>,
    /// `female`, `male` or both.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sex: Vec<Sex>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Parse life tables and write the rebuilt death counts.
    Ingest,
    /// Expanding-window point and interval backtest.
    Backtest,
    /// Forecast curves, life expectancy, annuity quotes and ETS diagnostics.
    Forecast,
    /// Annuity quotes with prediction intervals only.
    Annuity,
    /// Forecast life expectancy at ages 0 and 60 only.
    LifeExpectancy,
    /// Write synthetic HMD-format life tables.
    Synth {
        #[arg(long, default_value_t = 80)]
        years: usize,
        #[arg(long, default_value_t = 0.2)]
        drift: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Backtest => "backtest",
            Command::Forecast => "forecast",
            Command::Annuity => "annuity",
            Command::LifeExpectancy => "life-expectancy",
            Command::Synth { .. } => "synth",
        }
    }
}

impl Cli {
    /// Config file (or defaults) with flags applied on top.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).stage("config")?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.rates {
            cfg.load_rates(path).stage("config")?;
        }
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if !self.transform.is_empty() {
            cfg.transforms = self.transform.clone();
        }
        if !self.selector.is_empty() {
            cfg.selectors = self.selector.clone();
        }
        if !self.alpha.is_empty() {
            cfg.alphas = self.alpha.clone();
        }
        if !self.country.is_empty() {
            cfg.countries = self.country.clone();
        }
        if !self.sex.is_empty() {
            cfg.sexes = self.sex.clone();
        }
        cfg.rate = self.rate.or(cfg.rate);
        cfg.horizon = self.horizon.unwrap_or(cfg.horizon);
        cfg.test_len = self.test_len.unwrap_or(cfg.test_len);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.validate().stage("config")?;
        Ok(cfg)
    }
}

/// Parses flags, runs the command and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.resolve_config()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Backtest => cmd_backtest(&cfg),
        Command::Forecast => cmd_forecast(&cfg, Outputs::ALL),
        Command::Annuity => cmd_forecast(&cfg, Outputs::ANNUITY),
        Command::LifeExpectancy => cmd_forecast(&cfg, Outputs::LIFE_EXPECTANCY),
        Command::Synth { years, drift } => cmd_synth(&cfg, *years, *drift),
    }
}

struct CsvFile {
    path: PathBuf,
    body: String,
}

impl CsvFile {
    fn new(cfg: &RunConfig, command: &str, name: &str, notes: &[String], header: &str) -> Self {
        let mut body = format!("# config_hash={}\n", cfg.hash(command));
        for n in notes {
            let _ = writeln!(body, "# {n}");
        }
        body.push_str(header);
        body.push('\n');
        Self {
            path: cfg.out_dir.join(name),
            body,
        }
    }

    fn extend(&mut self, rows: impl IntoIterator<Item = String>) {
        for r in rows {
            self.body.push_str(&r);
            self.body.push('\n');
        }
    }

    fn write(self) -> Result<PathBuf> {
        std::fs::write(&self.path, &self.body).map_err(|e| Error::io(&self.path, e))?;
        info!("wrote {}", self.path.display());
        Ok(self.path)
    }
}

/// Populations requested by the config, discovering countries in the data
/// directory when none are listed.
pub fn populations(cfg: &RunConfig) -> Result<Vec<(String, Sex)>> {
    let dir = cfg.resolved_data_dir()?;
    let countries = if cfg.countries.is_empty() {
        discover_countries(&dir)?
    } else {
        if !dir.is_dir() {
            return Err(not_a_dir(&dir));
        }
        cfg.countries.clone()
    };
    if countries.is_empty() {
        return Err(Error::Config(format!("no life tables found in {}", dir.display())));
    }
    Ok(countries
        .iter()
        .flat_map(|c| cfg.sexes.iter().map(move |&s| (c.clone(), s)))
        .collect())
}

fn not_a_dir(dir: &Path) -> Error {
    Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"))
}

fn discover_countries(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|_| not_a_dir(dir))?;
    let mut countries: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            ["fltper_1x1.txt", "mltper_1x1.txt"]
                .iter()
                .find_map(|suffix| name.strip_suffix(suffix)?.strip_suffix('.').map(str::to_string))
        })
        .collect();
    countries.sort();
    countries.dedup();
    Ok(countries)
}

fn population_error(country: &str, sex: Sex, e: Error) -> Error {
    Error::Population {
        population: format!("{country} {sex}"),
        source: Box::new(e),
    }
}

fn load_all(cfg: &RunConfig) -> Result<Vec<Panel>> {
    let dir = cfg.resolved_data_dir()?;
    populations(cfg)
        .stage("ingest")?
        .par_iter()
        .map(|(c, s)| {
            load_panel(&dir, c, *s, cfg.radix)
                .stage("ingest")
                .map_err(|e| population_error(c, *s, e))
        })
        .collect()
}

fn cmd_ingest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panels = load_all(cfg)?;
    let mut csv = CsvFile::new(cfg, "ingest", "ingest_dx.csv", &[], "country,sex,year,age,dx");
    for p in &panels {
        info!("{} {}: {} years {}-{}", p.country, p.sex, p.n_years(), p.years()[0], p.last_year());
        let curves: Vec<DeathCurve> = (0..p.n_years()).map(|t| p.curve(t)).collect();
        let mut rows = String::new();
        write_dx_rows(&mut rows, &curves);
        csv.body.push_str(&rows);
    }
    Ok(vec![csv.write()?])
}

fn cmd_backtest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panels = load_all(cfg)?;
    let mut jobs = Vec::new();
    for p in &panels {
        for &t in &cfg.backtest_transforms() {
            for &s in &cfg.backtest_selectors() {
                jobs.push((p, t, s));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(p, t, s)| {
            backtest(p, t, s, cfg.test_len, &cfg.alphas)
                .stage("backtest")
                .map_err(|e| population_error(&p.country, p.sex, e))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = CsvFile::new(cfg, "backtest", "point_errors.csv", &[], POINT_ERROR_HEADER);
    let mut intervals = CsvFile::new(cfg, "backtest", "interval_errors.csv", &[], INTERVAL_ERROR_HEADER);
    for (pt, iv) in results {
        for r in iv.rows.iter().filter(|r| r.cap_hit) {
            warn!("{} {} {} {}: theta hit the grid cap at h={} alpha={}", iv.country, iv.sex, iv.transform, iv.selector, r.h, r.alpha);
        }
        points.extend(pt.csv_rows());
        intervals.extend(iv.csv_rows());
    }
    Ok(vec![points.write()?, intervals.write()?])
}

#[derive(Clone, Copy)]
struct Outputs {
    curves: bool,
    life_expectancy: bool,
    annuity: bool,
}

impl Outputs {
    const ALL: Outputs = Outputs {
        curves: true,
        life_expectancy: true,
        annuity: true,
    };
    const ANNUITY: Outputs = Outputs {
        curves: false,
        life_expectancy: false,
        annuity: true,
    };
    const LIFE_EXPECTANCY: Outputs = Outputs {
        curves: false,
        life_expectancy: true,
        annuity: false,
    };
}

struct PopulationForecast {
    forecast: PipelineForecast,
    calibration: Option<IntervalCalibration>,
    rate: Option<f64>,
}

fn forecast_population(cfg: &RunConfig, panel: &Panel, want: Outputs) -> Result<PopulationForecast> {
    let (transform, selector) = cfg.forecast_method()?;
    let forecast = run_pipeline(panel, transform, selector, cfg.horizon).stage("forecast")?;
    let (calibration, rate) = if want.annuity {
        let cal = if cfg.alphas.is_empty() {
            None
        } else {
            Some(calibrate_intervals(panel, transform, selector, &cfg.alphas).stage("intervals")?)
        };
        (cal, Some(cfg.rate_for(&panel.country).stage("annuity")?))
    } else {
        (None, None)
    };
    Ok(PopulationForecast {
        forecast,
        calibration,
        rate,
    })
}

fn annuity_rows(cfg: &RunConfig, panel: &Panel, pf: &PopulationForecast) -> Result<Vec<String>> {
    let curves = &pf.forecast.curves;
    let rate = pf.rate.expect("rate resolved for annuity output");
    let intervals_by_alpha = match &pf.calibration {
        Some(cal) => (0..cal.alphas.len())
            .map(|a| {
                curves
                    .iter()
                    .enumerate()
                    .map(|(i, c)| cal.interval(c, i + 1, a))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut rows = Vec::new();
    for &x in &cfg.entry_ages {
        for &t in &cfg.maturities {
            if x + t > OPEN_AGE || t > curves.len() {
                continue;
            }
            let price = annuity_price(&cohort_survival(curves, x, t)?, rate, t)?.price;
            let prefix = format!("{},{},{x},{t},{rate},{price:.6}", panel.country, panel.sex);
            if intervals_by_alpha.is_empty() {
                rows.push(format!("{prefix},,,"));
            }
            for (ivs, alpha) in intervals_by_alpha.iter().zip(&cfg.alphas) {
                let (lb, ub) = annuity_interval(curves, ivs, x, rate, t)?;
                rows.push(format!("{prefix},{lb:.6},{ub:.6},{}", 1.0 - alpha));
            }
        }
    }
    Ok(rows)
}

fn ets_rows(panel: &Panel, f: &PipelineForecast) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    f.models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            format!(
                "{},{},{},{},{:.6},{:.6},{},{}",
                panel.country,
                panel.sex,
                k + 1,
                m.tag(),
                m.aicc,
                m.alpha,
                opt(m.beta),
                opt(m.phi)
            )
        })
        .collect()
}

fn cmd_forecast(cfg: &RunConfig, want: Outputs) -> Result<Vec<PathBuf>> {
    let command = match (want.curves, want.annuity) {
        (true, _) => "forecast",
        (false, true) => "annuity",
        (false, false) => "life-expectancy",
    };
    let panels = load_all(cfg)?;
    let results = panels
        .par_iter()
        .map(|p| forecast_population(cfg, p, want).map_err(|e| population_error(&p.country, p.sex, e)))
        .collect::<Result<Vec<_>>>()?;
    let (transform, selector) = cfg.forecast_method()?;
    let method = format!("transform={transform} selector={selector} horizon={}", cfg.horizon);

    let mut written = Vec::new();
    if want.curves {
        let mut csv = CsvFile::new(cfg, command, "forecast_dx.csv", std::slice::from_ref(&method), "country,sex,year,age,dx");
        let mut ets = CsvFile::new(
            cfg,
            command,
            "ets_models.csv",
            std::slice::from_ref(&method),
            "country,sex,component,model,aicc,alpha,beta,phi",
        );
        for (p, r) in panels.iter().zip(&results) {
            let mut rows = String::new();
            write_dx_rows(&mut rows, &r.forecast.curves);
            csv.body.push_str(&rows);
            ets.extend(ets_rows(p, &r.forecast));
        }
        written.push(csv.write()?);
        written.push(ets.write()?);
    }
    if want.life_expectancy {
        let mut csv = CsvFile::new(cfg, command, "life_expectancy.csv", std::slice::from_ref(&method), "country,sex,year,age,ex");
        for r in &results {
            let rows = life_expectancy_table(&r.forecast.curves, &LIFE_EXPECTANCY_AGES).stage("life expectancy")?;
            csv.extend(
                rows.iter()
                    .map(|e| format!("{},{},{},{},{:.6}", e.country, e.sex, e.year, e.age, e.ex)),
            );
        }
        written.push(csv.write()?);
    }
    if want.annuity {
        let mut notes = vec![method];
        if cfg.horizon > MAX_CALIBRATED_H && !cfg.alphas.is_empty() {
            notes.push(format!(
                "intervals beyond h={MAX_CALIBRATED_H} reuse the h={MAX_CALIBRATED_H} theta and gamma"
            ));
        }
        let mut csv = CsvFile::new(
            cfg,
            command,
            "annuity.csv",
            &notes,
            "country,sex,entry_age,maturity,rate,price,lb,ub,coverage",
        );
        for (p, r) in panels.iter().zip(&results) {
            csv.extend(
                annuity_rows(cfg, p, r)
                    .stage("annuity")
                    .map_err(|e| population_error(&p.country, p.sex, e))?,
            );
        }
        written.push(csv.write()?);
    }
    Ok(written)
}

/// HMD-style rows for a death curve.
pub fn lifetable_rows(curve: &DeathCurve) -> Vec<LifeTableRow> {
    let t = derive_lifetable(curve);
    (0..N_AGES)
        .map(|x| {
            let d = curve.counts()[x];
            let big_l = t.person_years[x];
            LifeTableRow {
                year: curve.year,
                age: x,
                mx: if big_l > 0.0 { Some(d / big_l) } else { None },
                qx: Some(t.qx[x]),
                ax: Some(0.5),
                lx: Some(t.lx[x]),
                dx: Some(d),
                lx_person_years: Some(big_l),
                tx: Some(t.tx[x]),
                ex: Some(t.ex[x]),
            }
        })
        .collect()
}

fn cmd_synth(cfg: &RunConfig, years: usize, drift: f64) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &sex in &cfg.sexes {
        let seed = cfg.seed.wrapping_add(sex as u64);
        let panel = make_synthetic_panel_for(years, drift, seed, sex).stage("synth")?;
        let rows: Vec<LifeTableRow> = (0..panel.n_years()).flat_map(|t| lifetable_rows(&panel.curve(t))).collect();
        let title = format!(
            "{}, Life tables (period 1x1), {} (synthetic, drift {drift}, seed {seed})",
            panel.country,
            if sex == Sex::Female { "Females" } else { "Males" }
        );
        let path = cfg
            .out_dir
            .join(crate::hmd::lifetable_file_name(&panel.country, sex));
        std::fs::write(&path, write_hmd_lifetable(&title, &rows)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
