//! CSV and text output for Monte Carlo studies.
//!
//! A study directory holds, per strategy `S`:
//!
//! - `summary_S.csv`: every [`McSummary`] field, one row per grid cell; the
//!   machine-readable form that [`read_summaries`] loads back;
//! - `estimates_S.csv`: mean estimates and MSEs (the layout of the paper's
//!   estimate tables);
//! - `sample_size_S.csv`: mean and SD of the sample size plus coverage rates;
//! - `replications_S.csv`: one row per calibration run.
//!
//! Floats are written with 6 significant digits; undefined values as `NA`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CalibError, Result};
use crate::harness::{CalibrationResult, McRun, McSummary, Strategy};
use crate::irt_model::ItemParams;

pub const ESTIMATES_HEADER: &str = "a,b,a_hat,b_hat,c_hat,mse_a,mse_b,mse_c";
pub const SAMPLE_SIZE_HEADER: &str = "a,b,n_mean,n_sd,cov_a,cov_b,cov_c,cov_joint";
pub const BASELINE_COLUMNS: &str = "n_baseline,n_ratio";
pub const SUMMARY_HEADER: &str = "strategy,a,b,c,replications,converged,nonconverged,capped,\
a_hat,a_sd,b_hat,b_sd,c_hat,c_sd,mse_a,mse_b,mse_c,n_mean,n_sd,cov_a,cov_b,cov_c,cov_joint";
pub const REPLICATIONS_HEADER: &str = "cell,rep,seed,a,b,c,a_hat,b_hat,c_hat,n_used,stopped,converged,\
joint_covered,cov_a,cov_b,cov_c,lambda_min,iterations,fallback_iterations";

/// Formats `x` with 6 significant digits, like C's `%.6g`; non-finite values become `NA`.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        trim_fraction(format!("{:.*}", (5 - exp) as usize, x))
    } else {
        format!("{}e{exp}", trim_fraction(mantissa.to_string()))
    }
}

fn trim_fraction(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_field(s: &str) -> std::result::Result<f64, String> {
    if s == "NA" {
        Ok(f64::NAN)
    } else {
        s.parse().map_err(|_| format!("{s:?} is not a number"))
    }
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn estimates_csv(summaries: &[McSummary]) -> String {
    let mut out = format!("{ESTIMATES_HEADER}\n");
    for s in summaries {
        let mut f = vec![fmt_sig(s.item.a()), fmt_sig(s.item.b())];
        f.extend(s.mean.iter().map(|&v| fmt_sig(v)));
        f.extend(s.mse.iter().map(|&v| fmt_sig(v)));
        row(&mut out, &f);
    }
    out
}

/// Sample-size table; with a baseline, adds the baseline mean sample size of
/// the same cell and the ratio `n_mean / n_baseline`.
pub fn sample_size_csv(summaries: &[McSummary], baseline: Option<&[McSummary]>) -> String {
    let mut out = String::from(SAMPLE_SIZE_HEADER);
    if baseline.is_some() {
        out.push(',');
        out.push_str(BASELINE_COLUMNS);
    }
    out.push('\n');
    for s in summaries {
        let mut f = vec![fmt_sig(s.item.a()), fmt_sig(s.item.b()), fmt_sig(s.n_mean), fmt_sig(s.n_sd)];
        f.extend(s.coverage.iter().map(|&v| fmt_sig(v)));
        f.push(fmt_sig(s.joint_coverage));
        if let Some(base) = baseline {
            let nb = matching_cell(base, &s.item).map_or(f64::NAN, |b| b.n_mean);
            f.push(fmt_sig(nb));
            f.push(fmt_sig(s.n_mean / nb));
        }
        row(&mut out, &f);
    }
    out
}

fn matching_cell<'a>(set: &'a [McSummary], item: &ItemParams) -> Option<&'a McSummary> {
    set.iter().find(|b| b.item == *item)
}

pub fn summary_csv(summaries: &[McSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summaries {
        let mut f = vec![
            s.strategy.to_string(),
            fmt_sig(s.item.a()),
            fmt_sig(s.item.b()),
            fmt_sig(s.item.c()),
            s.replications.to_string(),
            s.converged.to_string(),
            s.nonconverged.to_string(),
            s.capped.to_string(),
        ];
        for k in 0..3 {
            f.push(fmt_sig(s.mean[k]));
            f.push(fmt_sig(s.sd[k]));
        }
        f.extend(s.mse.iter().map(|&v| fmt_sig(v)));
        f.push(fmt_sig(s.n_mean));
        f.push(fmt_sig(s.n_sd));
        f.extend(s.coverage.iter().map(|&v| fmt_sig(v)));
        f.push(fmt_sig(s.joint_coverage));
        row(&mut out, &f);
    }
    out
}

/// Inverse of [`summary_csv`], up to the 6-digit rounding.
pub fn parse_summary_csv(text: &str) -> Result<Vec<McSummary>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => return Err(CalibError::Config("summary CSV has an unexpected header".into())),
    }
    lines
        .map(|(i, line)| {
            let bad = |msg: String| CalibError::Config(format!("summary CSV line {}: {msg}", i + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 23 {
                return Err(bad(format!("expected 23 fields, found {}", cols.len())));
            }
            let num = |k: usize| parse_field(cols[k]).map_err(&bad);
            let count = |k: usize| cols[k].parse::<usize>().map_err(|_| bad(format!("{:?} is not a count", cols[k])));
            let strategy: Strategy = cols[0].parse()?;
            let item = ItemParams::new(num(1)?, num(2)?, num(3)?)?;
            Ok(McSummary {
                strategy,
                item,
                replications: count(4)?,
                converged: count(5)?,
                nonconverged: count(6)?,
                capped: count(7)?,
                mean: [num(8)?, num(10)?, num(12)?],
                sd: [num(9)?, num(11)?, num(13)?],
                mse: [num(14)?, num(15)?, num(16)?],
                n_mean: num(17)?,
                n_sd: num(18)?,
                coverage: [num(19)?, num(20)?, num(21)?],
                joint_coverage: num(22)?,
            })
        })
        .collect()
}

pub fn replications_csv(grid: &[ItemParams], results: &[Vec<CalibrationResult>]) -> String {
    let mut out = format!("{REPLICATIONS_HEADER}\n");
    let flag = |b: bool| u8::from(b).to_string();
    for (cell, (item, runs)) in grid.iter().zip(results).enumerate() {
        for (rep, r) in runs.iter().enumerate() {
            row(
                &mut out,
                &[
                    cell.to_string(),
                    rep.to_string(),
                    r.seed.to_string(),
                    fmt_sig(item.a()),
                    fmt_sig(item.b()),
                    fmt_sig(item.c()),
                    fmt_sig(r.estimates.a()),
                    fmt_sig(r.estimates.b()),
                    fmt_sig(r.estimates.c()),
                    r.n_used.to_string(),
                    flag(r.stopped),
                    flag(r.converged),
                    flag(r.joint_covered),
                    flag(r.marginal_covered.0),
                    flag(r.marginal_covered.1),
                    flag(r.marginal_covered.2),
                    fmt_sig(r.lambda_min),
                    r.iterations.to_string(),
                    r.fallback_iterations.to_string(),
                ],
            );
        }
    }
    out
}

/// Text rendering in the layout of the paper's tables: estimates with SDs in
/// parentheses, MSEs, sample sizes and coverage.
pub fn format_table(summaries: &[McSummary], baseline: Option<&[McSummary]>) -> String {
    let pm = |m: f64, sd: f64| format!("{}({})", fixed(m, 3), fixed(sd, 3));
    let mut out = String::new();
    if let Some(s) = summaries.first() {
        let _ = writeln!(out, "strategy {}, {} replications per cell", s.strategy, s.replications);
    }
    let mut header = format!(
        "{:>5} {:>5} | {:>15} {:>15} {:>15} | {:>7} {:>7} {:>7} | {:>18} | {:>5} {:>5} {:>5} {:>5}",
        "a", "b", "a_hat", "b_hat", "c_hat", "mse_a", "mse_b", "mse_c", "n", "cov_a", "cov_b", "cov_c", "joint"
    );
    if baseline.is_some() {
        let _ = write!(header, " | {:>10} {:>7}", "n_base", "ratio");
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for s in summaries {
        let _ = write!(
            out,
            "{:>5} {:>5} | {:>15} {:>15} {:>15} | {:>7} {:>7} {:>7} | {:>18} | {:>5} {:>5} {:>5} {:>5}",
            fmt_sig(s.item.a()),
            fmt_sig(s.item.b()),
            pm(s.mean[0], s.sd[0]),
            pm(s.mean[1], s.sd[1]),
            pm(s.mean[2], s.sd[2]),
            fixed(s.mse[0], 3),
            fixed(s.mse[1], 3),
            fixed(s.mse[2], 3),
            format!("{}({})", fixed(s.n_mean, 2), fixed(s.n_sd, 2)),
            fixed(s.coverage[0], 3),
            fixed(s.coverage[1], 3),
            fixed(s.coverage[2], 3),
            fixed(s.joint_coverage, 3),
        );
        if let Some(base) = baseline {
            let nb = matching_cell(base, &s.item).map_or(f64::NAN, |b| b.n_mean);
            let _ = write!(out, " | {:>10} {:>7}", fixed(nb, 2), fixed(s.n_mean / nb, 2));
        }
        if s.nonconverged > 0 || s.capped > 0 {
            let _ = write!(out, "  [{} non-converged, {} capped]", s.nonconverged, s.capped);
        }
        out.push('\n');
    }
    out
}

fn fixed(x: f64, decimals: usize) -> String {
    if x.is_finite() {
        format!("{x:.decimals$}")
    } else {
        "NA".into()
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CalibError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes the four per-strategy CSVs of one study into `dir`.
pub fn write_study(dir: &Path, grid: &[ItemParams], strategy: Strategy, run: &McRun) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let files = [
        ("summary", summary_csv(&run.summaries)),
        ("estimates", estimates_csv(&run.summaries)),
        ("sample_size", sample_size_csv(&run.summaries, None)),
        ("replications", replications_csv(grid, &run.results)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (kind, contents) in files {
        let path = dir.join(format!("{kind}_{strategy}.csv"));
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Loads every `summary_<STRATEGY>.csv` in `dir`, in strategy order.
pub fn read_summaries(dir: &Path) -> Result<Vec<(Strategy, Vec<McSummary>)>> {
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let path = dir.join(format!("summary_{strategy}.csv"));
        if path.exists() {
            let text = read_file(&path)?;
            let rows = parse_summary_csv(&text).map_err(|e| match e {
                CalibError::Config(msg) => CalibError::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?;
            out.push((strategy, rows));
        }
    }
    if out.is_empty() {
        return Err(CalibError::Config(format!("no summary_*.csv files in {}", dir.display())));
    }
    Ok(out)
}

/// Picks the baseline set: TWO_STAGE when present, otherwise the only strategy.
pub fn choose_baseline(sets: &[(Strategy, Vec<McSummary>)]) -> Result<&[McSummary]> {
    if let Some((_, s)) = sets.iter().find(|(st, _)| *st == Strategy::TwoStage) {
        return Ok(s);
    }
    match sets {
        [(_, s)] => Ok(s),
        _ => Err(CalibError::Config(
            "baseline directory holds several strategies but no TWO_STAGE summary".into(),
        )),
    }
}

/// The `report` command: formatted tables plus CSVs for every strategy in `input`.
pub fn generate_report(input: &Path, baseline: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let sets = read_summaries(input)?;
    let base_sets = baseline.map(read_summaries).transpose()?;
    let base = base_sets.as_deref().map(choose_baseline).transpose()?;
    create_dir(out)?;
    let mut written = Vec::new();
    for (strategy, summaries) in &sets {
        let files = [
            (format!("report_{strategy}.txt"), format_table(summaries, base)),
            (format!("estimates_{strategy}.csv"), estimates_csv(summaries)),
            (format!("sample_size_{strategy}.csv"), sample_size_csv(summaries, base)),
        ];
        for (name, contents) in files {
            let path = out.join(name);
            write_file(&path, &contents)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Run manifest: code version, master seed, strategies and the full configuration.
pub fn manifest(config_text: &str, master_seed: u64, strategies: &[Strategy], version: &str) -> String {
    let names: Vec<&str> = strategies.iter().map(Strategy::as_str).collect();
    format!(
        "itemcal version {version}\nmaster_seed = {master_seed}\nstrategies = {}\n\n[config]\n{config_text}",
        names.join(",")
    )
}
