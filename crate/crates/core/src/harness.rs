//! End-to-end calibration runs and Monte Carlo studies.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::SeedableRng;

use crate::design::{self, DesignConfig, DesignRequest, Target, TargetSpec};
use crate::error::{CalibError, Result};
use crate::estimation::{fit_ab_given_c, fit_mle, fit_mle_warm, initial_c_estimate, FitOptions};
use crate::irt_model::{likelihood_derivatives, BatchTag, Gamma, ItemParams, ResponseRecord};
use crate::sequential::{ellipsoid_contains, marginal_coverage, min_eigenvalue, stopping_check, StoppingConfig};
use crate::simulation::{recruit, respond, Interval, PoolConfig, SimRng};
use crate::state::CalibrationState;

/// Starting point for strategies that have no separate guessing estimate.
pub const DEFAULT_START: Gamma = Gamma::new(0.0, 1.0, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    TwoStage,
    StrictDOpt,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::TwoStage, Strategy::StrictDOpt, Strategy::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::TwoStage => "TWO_STAGE",
            Strategy::StrictDOpt => "STRICT_DOPT",
            Strategy::Random => "RANDOM",
        }
    }

    fn stream_id(&self) -> u64 {
        match self {
            Strategy::TwoStage => 1,
            Strategy::StrictDOpt => 2,
            Strategy::Random => 3,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "TWO_STAGE" => Ok(Strategy::TwoStage),
            "STRICT_DOPT" | "DOPT" => Ok(Strategy::StrictDOpt),
            "RANDOM" => Ok(Strategy::Random),
            other => Err(CalibError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// The default item grid: `a in {0.5, 1, 1.5, 2}`, `b in {-2, ..., 2}`, `c = 0.1`.
pub fn default_grid() -> Vec<ItemParams> {
    let mut grid = Vec::with_capacity(20);
    for a in [0.5, 1.0, 1.5, 2.0] {
        for b in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            grid.push(ItemParams::new(a, b, 0.1).expect("grid items are valid"));
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub strategy: Strategy,
    pub grid: Vec<ItemParams>,
    pub replications: usize,
    pub stopping: StoppingConfig,
    pub design: DesignConfig,
    pub pool: PoolConfig,
    pub fit: FitOptions,
    pub max_examinees: usize,
    /// Fraction of non-converged replications above which a study is a failure.
    pub failure_rate_threshold: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TwoStage,
            grid: default_grid(),
            replications: 200,
            stopping: StoppingConfig::default(),
            design: DesignConfig::default(),
            pool: PoolConfig::default(),
            fit: FitOptions::default(),
            max_examinees: 50_000,
            failure_rate_threshold: 0.1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.stopping.validate()?;
        self.design.validate()?;
        self.pool.validate()?;
        self.fit.validate()?;
        if self.replications == 0 {
            return Err(CalibError::Config("replications must be at least 1".into()));
        }
        if self.max_examinees < self.initial_sample_size() {
            return Err(CalibError::Config(format!(
                "max_examinees {} is below the initial sample size {}",
                self.max_examinees,
                self.initial_sample_size()
            )));
        }
        if self.design.pool_range != self.pool.pool_range {
            return Err(CalibError::Config("design and pool ranges differ".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_rate_threshold) {
            return Err(CalibError::Config("failure_rate_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn initial_sample_size(&self) -> usize {
        match self.strategy {
            Strategy::TwoStage => self.design.n_init_ab + self.design.n_init_c,
            Strategy::StrictDOpt | Strategy::Random => self.design.n_init_other,
        }
    }

    pub fn iteration_batch_size(&self) -> usize {
        match self.strategy {
            Strategy::TwoStage => self.design.batch_ab + self.design.batch_c,
            Strategy::StrictDOpt | Strategy::Random => self.design.dopt_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub item_true: ItemParams,
    pub estimates: ItemParams,
    pub gamma_hat: Gamma,
    pub n_used: usize,
    pub stopped: bool,
    /// Whether the final fit converged; failed runs are left out of estimate aggregates.
    pub converged: bool,
    pub joint_covered: bool,
    pub marginal_covered: (bool, bool, bool),
    pub lambda_min: f64,
    pub iterations: usize,
    pub fallback_iterations: usize,
    pub seed: u64,
}

/// State after each stopping check, for plotting and property checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub n: usize,
    pub gamma_hat: Gamma,
    pub lambda_min: f64,
    pub threshold: f64,
}

pub fn run_calibration(item_true: &ItemParams, cfg: &StudyConfig, seed: u64) -> Result<CalibrationResult> {
    run_calibration_traced(item_true, cfg, seed, None).map(|(r, _)| r)
}

/// Like [`run_calibration`], also returning the per-iteration trace and the
/// full response log.
pub fn run_calibration_with_trace(
    item_true: &ItemParams,
    cfg: &StudyConfig,
    seed: u64,
) -> Result<(CalibrationResult, Vec<TracePoint>, Vec<ResponseRecord>)> {
    let mut trace = Vec::new();
    let (result, state) = run_calibration_traced(item_true, cfg, seed, Some(&mut trace))?;
    Ok((result, trace, state.records))
}

fn run_calibration_traced(
    item_true: &ItemParams,
    cfg: &StudyConfig,
    seed: u64,
    mut trace: Option<&mut Vec<TracePoint>>,
) -> Result<(CalibrationResult, CalibrationState)> {
    cfg.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut run = Run {
        item_true,
        cfg,
        state: CalibrationState::new(DEFAULT_START),
        fit_ok: true,
    };

    run.initial_stage(&mut rng)?;

    let mut stopped = false;
    let mut lambda_min = min_eigenvalue(&run.state.information);
    while run.state.n() < cfg.max_examinees {
        let request = match cfg.strategy {
            Strategy::TwoStage => design::two_stage_batch(&run.state, &cfg.design)?,
            Strategy::StrictDOpt => {
                design::strict_d_optimal_batch(&run.state, cfg.design.dopt_batch, &cfg.design.grid())
            }
            Strategy::Random => design::random_batch(
                cfg.design.dopt_batch,
                cfg.design.random_sd,
                &cfg.pool.pool_range,
                BatchTag::Random,
                &mut rng,
            )?,
        };
        if request.fallback {
            run.state.fallback_iterations += 1;
        }
        run.collect(&request, &mut rng);
        run.refit();
        run.state.iterations += 1;

        let decision = stopping_check(&run.state.information, run.state.n(), &cfg.stopping);
        lambda_min = decision.lambda_min;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TracePoint {
                n: decision.n,
                gamma_hat: run.state.gamma_hat,
                lambda_min: decision.lambda_min,
                threshold: decision.threshold,
            });
        }
        if decision.stop {
            stopped = true;
            break;
        }
    }

    let state = run.state;
    let g = state.gamma_hat;
    let gamma0 = item_true.to_gamma();
    let joint_covered = ellipsoid_contains(&g, &state.information, &gamma0, cfg.stopping.alpha);
    let (marginal_covered, coverage_ok) = match marginal_coverage(&g, &state.information, item_true, cfg.stopping.alpha) {
        Ok(m) => (m, true),
        Err(_) => ((false, false, false), false),
    };
    let result = CalibrationResult {
        item_true: *item_true,
        estimates: g.to_item()?,
        gamma_hat: g,
        n_used: state.n(),
        stopped,
        converged: run.fit_ok && coverage_ok,
        joint_covered,
        marginal_covered,
        lambda_min,
        iterations: state.iterations,
        fallback_iterations: state.fallback_iterations,
        seed,
    };
    Ok((result, state))
}

struct Run<'a> {
    item_true: &'a ItemParams,
    cfg: &'a StudyConfig,
    state: CalibrationState,
    /// Outcome of the most recent fit.
    fit_ok: bool,
}

impl Run<'_> {
    fn collect(&mut self, request: &DesignRequest, rng: &mut SimRng) {
        let room = self.cfg.max_examinees.saturating_sub(self.state.n());
        let examinees = recruit(request, self.state.next_index, &self.cfg.pool, rng);
        let first_new = self.state.records.len();
        for e in examinees.into_iter().take(room) {
            let y = respond(&e, self.item_true, rng);
            self.state.records.push(ResponseRecord {
                theta_observed: e.theta_observed,
                theta_true: e.theta_true,
                y,
                tag: e.tag,
            });
            self.state.next_index = e.index + 1;
        }
        if let Some(d) = self.state.derivatives.as_mut() {
            *d += likelihood_derivatives(&self.state.gamma_hat, &self.state.records[first_new..]);
        }
    }

    fn initial_stage(&mut self, rng: &mut SimRng) -> Result<()> {
        let cfg = self.cfg;
        let pool = cfg.pool.pool_range;
        match cfg.strategy {
            Strategy::TwoStage => {
                let d = &cfg.design;
                let low = range_request(Interval::new(pool.lo, d.theta_c.min(pool.hi)), d.n_init_c, BatchTag::InitialC);
                self.collect(&low, rng);
                let c0 = initial_c_estimate(&self.state.records, &cfg.fit.bounds)?;

                let wide = range_request(pool, d.n_init_ab, BatchTag::InitialAb);
                self.collect(&wide, rng);
                let gamma = match fit_ab_given_c(&self.state.records, c0, &cfg.fit) {
                    Ok(ab) => ab.fit.gamma,
                    Err(CalibError::NonConvergence { best, .. }) => best,
                    Err(_) => Gamma::new(DEFAULT_START.beta1, DEFAULT_START.beta2, c0),
                };
                let derivs = likelihood_derivatives(&gamma, &self.state.records);
                self.state.gamma_hat = gamma;
                self.state.information = derivs.information;
                self.state.derivatives = Some(derivs);
            }
            Strategy::StrictDOpt => {
                let init = range_request(pool, cfg.design.n_init_other, BatchTag::InitialAb);
                self.collect(&init, rng);
                self.refit();
            }
            Strategy::Random => {
                let init = design::random_batch(
                    cfg.design.n_init_other,
                    cfg.design.random_sd,
                    &pool,
                    BatchTag::Random,
                    rng,
                )?;
                self.collect(&init, rng);
                self.refit();
            }
        }
        Ok(())
    }

    /// Full MLE on every response collected so far, warm-started from the
    /// current estimate. A failed fit keeps the best point found.
    fn refit(&mut self) {
        let records = &self.state.records;
        let warm = self.state.gamma_hat;
        let fit = match self.state.derivatives {
            Some(d) => fit_mle_warm(records, warm, d, &self.cfg.fit),
            None => fit_mle(records, warm, &self.cfg.fit),
        };
        let (gamma, derivs, ok) = match fit {
            Ok(fit) => (fit.gamma, fit.derivatives(), true),
            Err(CalibError::NonConvergence { best, .. }) => (best, likelihood_derivatives(&best, records), false),
            Err(_) => (warm, likelihood_derivatives(&warm, records), false),
        };
        self.state.gamma_hat = gamma;
        self.state.information = derivs.information;
        self.state.derivatives = Some(derivs);
        self.fit_ok = ok;
    }
}

fn range_request(range: Interval, count: usize, tag: BatchTag) -> DesignRequest {
    DesignRequest {
        targets: vec![Target {
            spec: TargetSpec::Range(range),
            count,
            tag,
        }],
        fallback: false,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one replication, a pure function of its coordinates in the study.
pub fn replication_seed(master: u64, strategy: Strategy, cell: usize, rep: usize) -> u64 {
    let mut s = splitmix64(master);
    s = splitmix64(s ^ strategy.stream_id());
    s = splitmix64(s ^ cell as u64);
    splitmix64(s ^ rep as u64)
}

/// Aggregated statistics for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub strategy: Strategy,
    pub item: ItemParams,
    pub replications: usize,
    pub converged: usize,
    pub nonconverged: usize,
    pub capped: usize,
    pub mean: [f64; 3],
    /// Sample SD (n - 1 denominator); NaN when fewer than two runs converged.
    pub sd: [f64; 3],
    pub mse: [f64; 3],
    pub n_mean: f64,
    pub n_sd: f64,
    pub coverage: [f64; 3],
    pub joint_coverage: f64,
}

impl McSummary {
    pub fn from_results(strategy: Strategy, item: ItemParams, results: &[CalibrationResult]) -> Self {
        let ok: Vec<&CalibrationResult> = results.iter().filter(|r| r.converged).collect();
        let truth = [item.a(), item.b(), item.c()];
        let mut mean = [f64::NAN; 3];
        let mut sd = [f64::NAN; 3];
        let mut mse = [f64::NAN; 3];
        let mut coverage = [f64::NAN; 3];
        let m = ok.len() as f64;
        for k in 0..3 {
            let vals: Vec<f64> = ok.iter().map(|r| param(&r.estimates, k)).collect();
            let covered: Vec<bool> = ok.iter().map(|r| tuple_get(r.marginal_covered, k)).collect();
            if !vals.is_empty() {
                mean[k] = vals.iter().sum::<f64>() / m;
                sd[k] = sample_sd(&vals, mean[k]);
                mse[k] = vals.iter().map(|v| (v - truth[k]).powi(2)).sum::<f64>() / m;
                coverage[k] = covered.iter().filter(|&&c| c).count() as f64 / m;
            }
        }
        let joint_coverage = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().filter(|r| r.joint_covered).count() as f64 / m
        };
        let ns: Vec<f64> = results.iter().map(|r| r.n_used as f64).collect();
        let n_mean = if ns.is_empty() { f64::NAN } else { ns.iter().sum::<f64>() / ns.len() as f64 };
        Self {
            strategy,
            item,
            replications: results.len(),
            converged: ok.len(),
            nonconverged: results.len() - ok.len(),
            capped: results.iter().filter(|r| !r.stopped).count(),
            mean,
            sd,
            mse,
            n_mean,
            n_sd: sample_sd(&ns, n_mean),
            coverage,
            joint_coverage,
        }
    }
}

fn param(item: &ItemParams, k: usize) -> f64 {
    match k {
        0 => item.a(),
        1 => item.b(),
        _ => item.c(),
    }
}

fn tuple_get(t: (bool, bool, bool), k: usize) -> bool {
    match k {
        0 => t.0,
        1 => t.1,
        _ => t.2,
    }
}

fn sample_sd(vals: &[f64], mean: f64) -> f64 {
    if vals.len() < 2 {
        return f64::NAN;
    }
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
}

/// Per-replication results of one Monte Carlo study, in `(cell, rep)` order.
#[derive(Debug, Clone)]
pub struct McRun {
    pub summaries: Vec<McSummary>,
    pub results: Vec<Vec<CalibrationResult>>,
}

impl McRun {
    pub fn failure_rate(&self) -> f64 {
        let total: usize = self.summaries.iter().map(|s| s.replications).sum();
        let failed: usize = self.summaries.iter().map(|s| s.nonconverged).sum();
        if total == 0 {
            0.0
        } else {
            failed as f64 / total as f64
        }
    }
}

/// Runs every `(cell, replication)` pair of the study and aggregates by cell.
///
/// Results depend only on `(cfg, master_seed)`: each replication draws from its
/// own stream and aggregation happens in a fixed order after all runs finish.
pub fn run_monte_carlo(cfg: &StudyConfig, master_seed: u64) -> Result<McRun> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|cell| (0..cfg.replications).map(move |rep| (cell, rep)))
        .collect();
    let run_one = |&(cell, rep): &(usize, usize)| {
        let seed = replication_seed(master_seed, cfg.strategy, cell, rep);
        run_calibration(&cfg.grid[cell], cfg, seed)
    };

    #[cfg(feature = "parallel")]
    let flat: Vec<Result<CalibrationResult>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let flat: Vec<Result<CalibrationResult>> = jobs.iter().map(run_one).collect();

    let mut results: Vec<Vec<CalibrationResult>> = vec![Vec::with_capacity(cfg.replications); cfg.grid.len()];
    for ((cell, _), r) in jobs.iter().zip(flat) {
        results[*cell].push(r?);
    }
    let summaries = cfg
        .grid
        .iter()
        .zip(&results)
        .map(|(item, rs)| McSummary::from_results(cfg.strategy, *item, rs))
        .collect();
    Ok(McRun { summaries, results })
}

/// Minimum eigenvalue of the information accumulated along a response log,
/// evaluated at a fixed parameter, after each prefix of `checkpoints`.
pub fn fixed_parameter_lambda_path(gamma: &Gamma, records: &[ResponseRecord], checkpoints: &[usize]) -> Vec<f64> {
    let mut info = Matrix3::zeros();
    let mut done = 0;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &n in checkpoints {
        for r in &records[done..n] {
            info += crate::irt_model::fisher_information_point(gamma, r.theta_observed);
        }
        done = n;
        out.push(min_eigenvalue(&info));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg(strategy: Strategy) -> StudyConfig {
        StudyConfig {
            strategy,
            grid: vec![ItemParams::new(1.0, 0.0, 0.1).unwrap()],
            replications: 3,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in Strategy::ALL {
            for cell in 0..20 {
                for rep in 0..50 {
                    assert!(seen.insert(replication_seed(7, s, cell, rep)));
                }
            }
        }
    }

    #[test]
    fn cap_equal_to_initial_sample() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let cfg = StudyConfig {
            max_examinees: 110,
            ..quick_cfg(Strategy::TwoStage)
        };
        let r = run_calibration(&item, &cfg, 5).unwrap();
        assert!(!r.stopped);
        assert_eq!(r.n_used, 110);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn cap_truncates_last_batch() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let cfg = StudyConfig {
            max_examinees: 200,
            stopping: StoppingConfig { d: 0.05, ..StoppingConfig::default() },
            ..quick_cfg(Strategy::TwoStage)
        };
        let r = run_calibration(&item, &cfg, 5).unwrap();
        assert!(!r.stopped);
        assert_eq!(r.n_used, 200);
    }

    #[test]
    fn same_seed_same_result() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        for s in Strategy::ALL {
            let cfg = StudyConfig { max_examinees: 600, ..quick_cfg(s) };
            assert_eq!(run_calibration(&item, &cfg, 99).unwrap(), run_calibration(&item, &cfg, 99).unwrap());
        }
    }

    #[test]
    fn two_stage_accounting() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let cfg = quick_cfg(Strategy::TwoStage);
        let (r, trace, records) = run_calibration_with_trace(&item, &cfg, 17).unwrap();
        assert!(r.stopped);
        assert_eq!(r.n_used, 110 + 15 * r.iterations);
        assert_eq!(trace.len(), r.iterations);
        assert_eq!(records.len(), r.n_used);
        assert_eq!(records.iter().filter(|x| x.tag == BatchTag::InitialC).count(), 10);
        assert_eq!(records.iter().filter(|x| x.tag == BatchTag::CBatch).count(), 5 * r.iterations);
        let last = trace.last().unwrap();
        assert!(last.lambda_min >= last.threshold);
        assert!(trace[..trace.len() - 1].iter().all(|t| t.lambda_min < t.threshold));
    }

    #[test]
    fn summary_mse_decomposes() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let cfg = StudyConfig { replications: 6, ..quick_cfg(Strategy::TwoStage) };
        let mc = run_monte_carlo(&cfg, 3).unwrap();
        let s = &mc.summaries[0];
        let m = s.converged as f64;
        let truth = [item.a(), item.b(), item.c()];
        for k in 0..3 {
            let bias = s.mean[k] - truth[k];
            let var = s.sd[k].powi(2) * (m - 1.0) / m;
            assert!((s.mse[k] - (bias * bias + var)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_replication_summary() {
        let cfg = StudyConfig { replications: 1, ..quick_cfg(Strategy::TwoStage) };
        let mc = run_monte_carlo(&cfg, 3).unwrap();
        let s = &mc.summaries[0];
        let r = &mc.results[0][0];
        assert!(s.sd.iter().all(|v| v.is_nan()) && s.n_sd.is_nan());
        assert_eq!(s.mean[0], r.estimates.a());
        assert_eq!(s.n_mean, r.n_used as f64);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = StudyConfig { max_examinees: 50, ..StudyConfig::default() };
        assert!(matches!(cfg.validate(), Err(CalibError::Config(_))));
        let cfg = StudyConfig { replications: 0, ..StudyConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
