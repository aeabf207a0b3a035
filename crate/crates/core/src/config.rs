//! Flat `key = value` study configuration files.
//!
//! ```text
//! # TWO_STAGE study at the defaults, 200 replications
//! strategy = TWO_STAGE
//! replications = 200
//! grid_a = 0.5, 1, 1.5, 2
//! grid_b = -2, -1, 0, 1, 2
//! grid_c = 0.1
//! ```
//!
//! Every key is optional and falls back to [`StudyConfig::default`]. Unknown
//! or repeated keys are errors. The item grid is either the product
//! `grid_a x grid_b x grid_c` or an explicit `items = a:b:c, a:b:c` list.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CalibError, Result};
use crate::harness::{Strategy, StudyConfig};
use crate::irt_model::ItemParams;

const KEYS: &[&str] = &[
    "strategy",
    "replications",
    "max_examinees",
    "failure_rate_threshold",
    "seed",
    "items",
    "grid_a",
    "grid_b",
    "grid_c",
    "d",
    "alpha",
    "n0",
    "p0",
    "theta_c",
    "pool_min",
    "pool_max",
    "n_init_ab",
    "n_init_c",
    "batch_ab",
    "batch_c",
    "dopt_batch",
    "n_init_other",
    "grid_points",
    "random_sd",
    "fallback_width",
    "error_scale",
    "error_log_exponent",
    "max_iter",
    "grad_tol",
    "step_tol",
    "a_min",
    "a_max",
    "b_min",
    "b_max",
    "c_min",
    "c_max",
];

pub fn load_config(path: &Path) -> Result<StudyConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<StudyConfig> {
    let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(lineno + 1, format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(lineno + 1, format!("unknown key {key:?}")));
        }
        if entries.insert(key, (lineno + 1, value.trim())).is_some() {
            return Err(config_err(lineno + 1, format!("key {key:?} given twice")));
        }
    }

    let mut cfg = StudyConfig::default();
    let get = |k: &str| entries.get(k).copied();

    if let Some((l, v)) = get("strategy") {
        cfg.strategy = v.parse().map_err(|e: CalibError| config_err(l, e.to_string()))?;
    }
    set(&mut cfg.replications, get("replications"))?;
    set(&mut cfg.max_examinees, get("max_examinees"))?;
    set(&mut cfg.failure_rate_threshold, get("failure_rate_threshold"))?;
    set(&mut cfg.pool.seed, get("seed"))?;

    set(&mut cfg.stopping.d, get("d"))?;
    set(&mut cfg.stopping.alpha, get("alpha"))?;
    set(&mut cfg.stopping.n0, get("n0"))?;

    let dz = &mut cfg.design;
    set(&mut dz.p0, get("p0"))?;
    set(&mut dz.theta_c, get("theta_c"))?;
    set(&mut dz.n_init_ab, get("n_init_ab"))?;
    set(&mut dz.n_init_c, get("n_init_c"))?;
    set(&mut dz.batch_ab, get("batch_ab"))?;
    set(&mut dz.batch_c, get("batch_c"))?;
    set(&mut dz.dopt_batch, get("dopt_batch"))?;
    set(&mut dz.n_init_other, get("n_init_other"))?;
    set(&mut dz.grid_points, get("grid_points"))?;
    set(&mut dz.random_sd, get("random_sd"))?;
    set(&mut dz.fallback_width, get("fallback_width"))?;

    // one pool range shared by the design and the examinee pool
    let mut range = cfg.pool.pool_range;
    set(&mut range.lo, get("pool_min"))?;
    set(&mut range.hi, get("pool_max"))?;
    cfg.pool.pool_range = range;
    cfg.design.pool_range = range;
    set(&mut cfg.pool.error_scale, get("error_scale"))?;
    set(&mut cfg.pool.error_log_exponent, get("error_log_exponent"))?;

    let fit = &mut cfg.fit;
    set(&mut fit.max_iter, get("max_iter"))?;
    set(&mut fit.grad_tol, get("grad_tol"))?;
    set(&mut fit.step_tol, get("step_tol"))?;
    let bounds = &mut fit.bounds;
    set(&mut bounds.a_min, get("a_min"))?;
    set(&mut bounds.a_max, get("a_max"))?;
    set(&mut bounds.b_min, get("b_min"))?;
    set(&mut bounds.b_max, get("b_max"))?;
    set(&mut bounds.c_min, get("c_min"))?;
    set(&mut bounds.c_max, get("c_max"))?;

    let product = ["grid_a", "grid_b", "grid_c"].map(get);
    match (get("items"), product.iter().any(Option::is_some)) {
        (Some(_), true) => {
            return Err(CalibError::Config("use either `items` or `grid_a/grid_b/grid_c`, not both".into()));
        }
        (Some((l, v)), false) => cfg.grid = parse_item_list(v).map_err(|e| config_err(l, e.to_string()))?,
        (None, true) => {
            let axis = |entry: Option<(usize, &str)>, default: &[f64]| -> Result<Vec<f64>> {
                match entry {
                    Some((l, v)) => parse_list(v).map_err(|e| config_err(l, e)),
                    None => Ok(default.to_vec()),
                }
            };
            let a = axis(product[0], &[0.5, 1.0, 1.5, 2.0])?;
            let b = axis(product[1], &[-2.0, -1.0, 0.0, 1.0, 2.0])?;
            let c = axis(product[2], &[0.1])?;
            cfg.grid = Vec::with_capacity(a.len() * b.len() * c.len());
            for &ai in &a {
                for &bi in &b {
                    for &ci in &c {
                        cfg.grid.push(ItemParams::new(ai, bi, ci)?);
                    }
                }
            }
        }
        (None, false) => {}
    }
    if cfg.grid.is_empty() {
        return Err(CalibError::Config("the item grid is empty".into()));
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Serializes `cfg` so that [`parse_config`] reproduces it exactly.
pub fn render_config(cfg: &StudyConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("strategy", cfg.strategy.to_string());
    kv("replications", cfg.replications.to_string());
    kv("max_examinees", cfg.max_examinees.to_string());
    kv("failure_rate_threshold", cfg.failure_rate_threshold.to_string());
    kv("seed", cfg.pool.seed.to_string());
    kv("items", render_item_list(&cfg.grid));
    kv("d", cfg.stopping.d.to_string());
    kv("alpha", cfg.stopping.alpha.to_string());
    kv("n0", cfg.stopping.n0.to_string());
    let d = &cfg.design;
    kv("p0", d.p0.to_string());
    kv("theta_c", d.theta_c.to_string());
    kv("pool_min", cfg.pool.pool_range.lo.to_string());
    kv("pool_max", cfg.pool.pool_range.hi.to_string());
    kv("n_init_ab", d.n_init_ab.to_string());
    kv("n_init_c", d.n_init_c.to_string());
    kv("batch_ab", d.batch_ab.to_string());
    kv("batch_c", d.batch_c.to_string());
    kv("dopt_batch", d.dopt_batch.to_string());
    kv("n_init_other", d.n_init_other.to_string());
    kv("grid_points", d.grid_points.to_string());
    kv("random_sd", d.random_sd.to_string());
    kv("fallback_width", d.fallback_width.to_string());
    kv("error_scale", cfg.pool.error_scale.to_string());
    kv("error_log_exponent", cfg.pool.error_log_exponent.to_string());
    let f = &cfg.fit;
    kv("max_iter", f.max_iter.to_string());
    kv("grad_tol", f.grad_tol.to_string());
    kv("step_tol", f.step_tol.to_string());
    let b = &f.bounds;
    kv("a_min", b.a_min.to_string());
    kv("a_max", b.a_max.to_string());
    kv("b_min", b.b_min.to_string());
    kv("b_max", b.b_max.to_string());
    kv("c_min", b.c_min.to_string());
    kv("c_max", b.c_max.to_string());
    s
}

/// Parses `a:b:c` triples separated by commas or whitespace.
pub fn parse_item_list(s: &str) -> Result<Vec<ItemParams>> {
    s.split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(':').collect();
            let [a, b, c] = parts[..] else {
                return Err(CalibError::Config(format!("item {t:?} is not of the form a:b:c")));
            };
            let num = |x: &str| {
                x.parse::<f64>()
                    .map_err(|_| CalibError::Config(format!("item {t:?}: {x:?} is not a number")))
            };
            ItemParams::new(num(a)?, num(b)?, num(c)?)
        })
        .collect()
}

pub fn render_item_list(items: &[ItemParams]) -> String {
    items
        .iter()
        .map(|it| format!("{}:{}:{}", it.a(), it.b(), it.c()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Strategy list for the command line: one name, a comma list, or `all`.
pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out: Vec<Strategy> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let st: Strategy = part.parse()?;
        if !out.contains(&st) {
            out.push(st);
        }
    }
    if out.is_empty() {
        return Err(CalibError::Config("no strategy given".into()));
    }
    Ok(out)
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    let vals: std::result::Result<Vec<f64>, _> = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse::<f64>)
        .collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err("empty list".into()),
        Err(_) => Err(format!("{v:?} is not a list of numbers")),
    }
}

fn set<T: std::str::FromStr>(slot: &mut T, entry: Option<(usize, &str)>) -> Result<()> {
    if let Some((line, v)) = entry {
        *slot = v
            .parse()
            .map_err(|_| config_err(line, format!("cannot parse value {v:?}")))?;
    }
    Ok(())
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> CalibError {
    CalibError::Config(format!("line {line}: {msg}"))
}
