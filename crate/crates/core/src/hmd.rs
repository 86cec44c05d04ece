//! Reader for HMD 1x1 period life-table files and reconstruction of death
//! counts from `qx` and the radix.
//!
//! The published `dx` column is rounded to whole numbers, which leaves zero
//! counts at the oldest ages. Rebuilding the counts from the probabilities of
//! dying keeps full floating precision instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::curve::{DeathCurve, Panel, Sex, N_AGES};
use crate::error::{Error, Result};

pub const OPEN_AGE: usize = N_AGES - 1;

const COLUMNS: [&str; 10] = ["Year", "Age", "mx", "qx", "ax", "lx", "dx", "Lx", "Tx", "ex"];

/// One published row of a period life table. Missing values (`.`) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableRow {
    pub year: i32,
    pub age: usize,
    pub mx: Option<f64>,
    pub qx: Option<f64>,
    pub ax: Option<f64>,
    pub lx: Option<f64>,
    pub dx: Option<f64>,
    pub lx_person_years: Option<f64>,
    pub tx: Option<f64>,
    pub ex: Option<f64>,
}

fn parse_value(token: &str, line: usize, column: &str) -> Result<Option<f64>> {
    if token == "." {
        return Ok(None);
    }
    token.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: '{token}' is not a number"),
    })
}

fn parse_age(token: &str, line: usize) -> Result<usize> {
    let digits = token.strip_suffix('+').unwrap_or(token);
    let age: usize = digits.parse().map_err(|_| Error::Parse {
        line,
        message: format!("age '{token}' is not an integer"),
    })?;
    if age > OPEN_AGE {
        return Err(Error::Parse {
            line,
            message: format!("age {age} exceeds the open age class {OPEN_AGE}"),
        });
    }
    Ok(age)
}

/// Parses the whitespace-delimited table. Everything up to and including the
/// `Year Age mx ...` column header is treated as preamble; without such a
/// header the first two lines are skipped.
pub fn parse_hmd_lifetable(text: &str) -> Result<Vec<LifeTableRow>> {
    let lines: Vec<&str> = text.lines().collect();
    let header = lines
        .iter()
        .position(|l| l.split_whitespace().next() == Some("Year"));
    let body_start = match header {
        Some(i) => {
            let cols: Vec<&str> = lines[i].split_whitespace().collect();
            if cols != COLUMNS {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unexpected columns {cols:?}"),
                });
            }
            i + 1
        }
        None => 2.min(lines.len()),
    };

    let mut rows = Vec::new();
    for (idx, raw) in lines.iter().enumerate().skip(body_start) {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", COLUMNS.len(), tokens.len()),
            });
        }
        let year = tokens[0].parse::<i32>().map_err(|_| Error::Parse {
            line,
            message: format!("year '{}' is not an integer", tokens[0]),
        })?;
        let age = parse_age(tokens[1], line)?;
        let v = |i: usize| parse_value(tokens[i], line, COLUMNS[i]);
        let row = LifeTableRow {
            year,
            age,
            mx: v(2)?,
            qx: v(3)?,
            ax: v(4)?,
            lx: v(5)?,
            dx: v(6)?,
            lx_person_years: v(7)?,
            tx: v(8)?,
            ex: v(9)?,
        };
        if let Some(q) = row.qx {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Parse {
                    line,
                    message: format!("qx {q} outside [0, 1]"),
                });
            }
        }
        rows.push(row);
    }
    check_age_blocks(&rows)?;
    Ok(rows)
}

fn check_age_blocks(rows: &[LifeTableRow]) -> Result<()> {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for r in rows {
        by_year.entry(r.year).or_default().push(r.age);
    }
    for (year, ages) in by_year {
        if ages.len() != N_AGES || ages.iter().enumerate().any(|(i, &a)| i != a) {
            return Err(Error::AgeCount {
                year,
                expected: N_AGES,
                found: ages.len(),
            });
        }
    }
    Ok(())
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| ".".to_string(), |x| x.to_string())
}

/// Writes rows back in the layout accepted by [`parse_hmd_lifetable`].
pub fn write_hmd_lifetable(title: &str, rows: &[LifeTableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  {}", COLUMNS.join("  "));
    for r in rows {
        let age = if r.age == OPEN_AGE {
            format!("{OPEN_AGE}+")
        } else {
            r.age.to_string()
        };
        let _ = writeln!(
            out,
            "  {}  {}  {}  {}  {}  {}  {}  {}  {}  {}",
            r.year,
            age,
            fmt_value(r.mx),
            fmt_value(r.qx),
            fmt_value(r.ax),
            fmt_value(r.lx),
            fmt_value(r.dx),
            fmt_value(r.lx_person_years),
            fmt_value(r.tx),
            fmt_value(r.ex),
        );
    }
    out
}

/// Rebuilds death counts by running the cohort of size `radix` through `qx`.
/// The last age is the open class and its probability of dying is forced to 1.
pub fn rebuild_death_counts(qx: &[f64], radix: f64) -> Result<Vec<f64>> {
    if qx.is_empty() {
        return Err(Error::domain("empty qx curve"));
    }
    if !(radix > 0.0 && radix.is_finite()) {
        return Err(Error::domain(format!("radix must be positive, got {radix}")));
    }
    let last = qx.len() - 1;
    if let Some((age, q)) = qx[..last]
        .iter()
        .enumerate()
        .find(|(_, q)| !(0.0..=1.0).contains(*q))
    {
        return Err(Error::domain(format!("age {age}: qx {q} outside [0, 1]")));
    }
    let mut survivors = radix;
    let mut dx = Vec::with_capacity(qx.len());
    for &q in &qx[..last] {
        let d = survivors * q;
        dx.push(d);
        survivors -= d;
    }
    dx.push(survivors.max(0.0));
    Ok(dx)
}

/// Groups parsed rows by year and rebuilds one curve per complete year.
/// Years with a missing `qx` below the open age are dropped with a warning.
pub fn curves_from_rows(
    rows: &[LifeTableRow],
    country: &str,
    sex: Sex,
    radix: f64,
) -> Result<Vec<DeathCurve>> {
    let mut by_year: BTreeMap<i32, Vec<Option<f64>>> = BTreeMap::new();
    for r in rows {
        by_year
            .entry(r.year)
            .or_insert_with(|| vec![None; N_AGES])[r.age] = r.qx;
    }
    let mut curves = Vec::with_capacity(by_year.len());
    for (year, qx) in by_year {
        let Some(mut qx) = qx[..OPEN_AGE].iter().copied().collect::<Option<Vec<f64>>>() else {
            warn!("{country} {sex} {year}: missing qx, year dropped");
            continue;
        };
        qx.push(1.0);
        let dx = rebuild_death_counts(&qx, radix)?;
        curves.push(DeathCurve::new(country, sex, year, dx, radix)?);
    }
    Ok(curves)
}

/// HMD naming convention, e.g. `AUS.fltper_1x1.txt`.
pub fn lifetable_file_name(country: &str, sex: Sex) -> String {
    format!("{country}.{}ltper_1x1.txt", sex.hmd_prefix())
}

pub fn load_panel(data_dir: &Path, country: &str, sex: Sex, radix: f64) -> Result<Panel> {
    let path = data_dir.join(lifetable_file_name(country, sex));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = parse_hmd_lifetable(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Panel::new(curves_from_rows(&rows, country, sex, radix)?)
}

/// Canonical `country,sex,year,age,dx` CSV body (no header) with 6-decimal counts.
pub fn write_dx_rows(out: &mut String, curves: &[DeathCurve]) {
    for c in curves {
        for (age, d) in c.counts().iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{:.6}", c.country, c.sex, c.year, age, d);
        }
    }
}
