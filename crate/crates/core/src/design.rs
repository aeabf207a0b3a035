//! Examinee selection.
//!
//! Three strategies produce the trait levels of the next batch:
//!
//! * two-stage: low-ability examinees below `theta_l` for the guessing
//!   parameter, plus the logistic D-optimal pair (the 17.6% and 82.4%
//!   quantiles of the logistic factor) for `(a, b)`;
//! * strict D-optimal: greedy maximization of the determinant of the full
//!   3x3 information matrix;
//! * random: normal draws around the centre of the pool.

use nalgebra::Matrix3;
use rand_distr::{Distribution, Normal};

use crate::error::{CalibError, Result};
use crate::irt_model::{fisher_information_point, BatchTag, Gamma, ItemParams};
use crate::simulation::{Interval, SimRng};
use crate::state::CalibrationState;

/// Quantile of the logistic distribution used for the D-optimal pair.
pub const D_OPTIMAL_QUANTILE: f64 = 0.824;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    Point(f64),
    Range(Interval),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub spec: TargetSpec,
    pub count: usize,
    pub tag: BatchTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignRequest {
    pub targets: Vec<Target>,
    /// Set when the guessing-parameter range fell below the pool and was replaced.
    pub fallback: bool,
}

impl DesignRequest {
    pub fn total(&self) -> usize {
        self.targets.iter().map(|t| t.count).sum()
    }

    pub fn count_tagged(&self, tag: BatchTag) -> usize {
        self.targets.iter().filter(|t| t.tag == tag).map(|t| t.count).sum()
    }

    /// Whether every target lies inside `pool`.
    pub fn within(&self, pool: &Interval) -> bool {
        self.targets.iter().all(|t| match t.spec {
            TargetSpec::Point(x) => pool.contains(x),
            TargetSpec::Range(r) => pool.contains(r.lo) && pool.contains(r.hi) && r.lo < r.hi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignConfig {
    /// ICC level near 1 whose reflection through `b` bounds the guessing batch.
    pub p0: f64,
    /// Upper trait cutoff for the initial guessing sample.
    pub theta_c: f64,
    pub pool_range: Interval,
    pub n_init_ab: usize,
    pub n_init_c: usize,
    pub batch_ab: usize,
    pub batch_c: usize,
    pub dopt_batch: usize,
    /// Initial uniform sample for the strict D-optimal and random strategies.
    pub n_init_other: usize,
    pub grid_points: usize,
    pub random_sd: f64,
    /// Width of the guessing range used when `theta_l` falls below the pool.
    pub fallback_width: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            p0: 0.99,
            theta_c: -2.0,
            pool_range: Interval::new(-3.6, 3.6),
            n_init_ab: 100,
            n_init_c: 10,
            batch_ab: 10,
            batch_c: 5,
            dopt_batch: 15,
            n_init_other: 110,
            grid_points: 721,
            random_sd: 1.16,
            fallback_width: 0.5,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_init_ab,
            self.n_init_c,
            self.batch_ab,
            self.batch_c,
            self.dopt_batch,
            self.n_init_other,
        ];
        let ok = self.p0 > 0.5
            && self.p0 < 1.0
            && self.pool_range.is_valid()
            && counts.iter().all(|&c| c >= 1)
            && self.grid_points >= 2
            && self.random_sd > 0.0
            && self.fallback_width > 0.0
            && self.fallback_width < self.pool_range.width()
            && self.theta_c > self.pool_range.lo;
        if ok {
            Ok(())
        } else {
            Err(CalibError::Config(format!("invalid design config {self:?}")))
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        equispaced_grid(&self.pool_range, self.grid_points)
    }
}

pub fn equispaced_grid(range: &Interval, points: usize) -> Vec<f64> {
    let step = range.width() / (points - 1) as f64;
    (0..points).map(|i| range.lo + step * i as f64).collect()
}

/// Trait level below which a correct answer is at most `c + (1 - p0)` likely.
pub fn theta_lower_bound(item_est: &ItemParams, p0: f64) -> Result<f64> {
    if !(p0 > item_est.c() && p0 < 1.0) {
        return Err(CalibError::Domain(format!(
            "p0 = {p0} must lie in (c, 1) with c = {}",
            item_est.c()
        )));
    }
    Ok(item_est.b() - ((p0 - item_est.c()) / (1.0 - p0)).ln() / item_est.a())
}

/// The two trait levels where the logistic factor equals 0.176 and 0.824.
pub fn d_optimal_pair(item_est: &ItemParams) -> (f64, f64) {
    let half = (D_OPTIMAL_QUANTILE / (1.0 - D_OPTIMAL_QUANTILE)).ln() / item_est.a();
    (item_est.b() - half, item_est.b() + half)
}

/// One iteration of the two-stage design: a guessing batch below `theta_l`
/// and a D-optimal batch for `(a, b)`.
pub fn two_stage_batch(state: &CalibrationState, cfg: &DesignConfig) -> Result<DesignRequest> {
    let item = state.gamma_hat.to_item()?;
    let pool = cfg.pool_range;
    let theta_l = theta_lower_bound(&item, cfg.p0)?;

    let (c_range, fallback) = if theta_l <= pool.lo {
        (Interval::new(pool.lo, pool.lo + cfg.fallback_width), true)
    } else {
        (Interval::new(pool.lo, theta_l.min(pool.hi)), false)
    };

    let (low, high) = d_optimal_pair(&item);
    let n_low = cfg.batch_ab.div_ceil(2);
    let n_high = cfg.batch_ab - n_low;

    let mut targets = vec![Target {
        spec: TargetSpec::Range(c_range),
        count: cfg.batch_c,
        tag: BatchTag::CBatch,
    }];
    targets.push(Target {
        spec: TargetSpec::Point(pool.clamp(low)),
        count: n_low,
        tag: BatchTag::AbBatch,
    });
    if n_high > 0 {
        targets.push(Target {
            spec: TargetSpec::Point(pool.clamp(high)),
            count: n_high,
            tag: BatchTag::AbBatch,
        });
    }
    Ok(DesignRequest { targets, fallback })
}

/// Greedy D-optimal selection against an accumulated information matrix.
///
/// Each pick maximizes `det(base + I(theta))` over `grid`, then joins `base`.
pub fn greedy_d_optimal(gamma: &Gamma, base: &Matrix3<f64>, batch_size: usize, grid: &[f64]) -> Vec<f64> {
    let point_info: Vec<Matrix3<f64>> = grid.iter().map(|&t| fisher_information_point(gamma, t)).collect();
    let mut running = *base;
    let mut picks = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (k, info) in point_info.iter().enumerate() {
            let det = (running + info).determinant();
            if det > best.0 {
                best = (det, k);
            }
        }
        running += point_info[best.1];
        picks.push(grid[best.1]);
    }
    picks
}

/// Strict D-optimal batch built against the expected information of the
/// responses collected so far, evaluated at the current estimate.
pub fn strict_d_optimal_batch(state: &CalibrationState, batch_size: usize, grid: &[f64]) -> DesignRequest {
    let base = state.design_information();
    let picks = greedy_d_optimal(&state.gamma_hat, &base, batch_size, grid);
    DesignRequest {
        targets: picks
            .into_iter()
            .map(|t| Target {
                spec: TargetSpec::Point(t),
                count: 1,
                tag: BatchTag::DOpt,
            })
            .collect(),
        fallback: false,
    }
}

/// Normal(0, sd^2) trait levels, redrawn until they land in `pool`.
pub fn random_batch(batch_size: usize, sd: f64, pool: &Interval, tag: BatchTag, rng: &mut SimRng) -> Result<DesignRequest> {
    let normal = Normal::new(0.0, sd).map_err(|e| CalibError::Domain(format!("random design sd {sd}: {e}")))?;
    let targets = (0..batch_size)
        .map(|_| {
            let t = loop {
                let x = normal.sample(rng);
                if pool.contains(x) {
                    break x;
                }
            };
            Target {
                spec: TargetSpec::Point(t),
                count: 1,
                tag,
            }
        })
        .collect();
    Ok(DesignRequest { targets, fallback: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt_model::{icc, logistic};
    use rand::SeedableRng;

    fn item(a: f64, b: f64, c: f64) -> ItemParams {
        ItemParams::new(a, b, c).unwrap()
    }

    /// logit by bisection on the logistic function.
    fn logit_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if logistic(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// theta_l by root-finding icc(theta_h) = p0 and reflecting through b.
    fn theta_l_by_root(it: &ItemParams, p0: f64) -> f64 {
        let (mut lo, mut hi) = (it.b() - 100.0, it.b() + 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if icc(mid, it) < p0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        2.0 * it.b() - 0.5 * (lo + hi)
    }

    fn state_at(it: ItemParams) -> CalibrationState {
        CalibrationState::new(it.to_gamma())
    }

    #[test]
    fn theta_lower_bound_examples() {
        let it = item(1.0, 0.0, 0.1);
        let tl = theta_lower_bound(&it, 0.99).unwrap();
        assert!((tl + 89f64.ln()).abs() < 1e-12);
        assert!((tl + 4.48864).abs() < 1e-4);
        assert!((tl - theta_l_by_root(&it, 0.99)).abs() < 1e-9);
        assert!((icc(tl, &it) - 0.11).abs() < 1e-12);

        let it2 = item(2.0, 0.0, 0.1);
        let tl2 = theta_lower_bound(&it2, 0.99).unwrap();
        assert!((tl2 + 2.2443).abs() < 1e-4);
        assert!((icc(tl2, &it2) - 0.11).abs() < 1e-12);

        assert!(theta_lower_bound(&item(1.0, 0.0, 0.4), 0.3).is_err());
    }

    #[test]
    fn theta_lower_bound_monotonicity() {
        for k in 0..50 {
            let c = 0.005 * k as f64;
            let p0s: Vec<f64> = (0..40).map(|i| 0.6 + 0.0099 * i as f64).collect();
            let vals: Vec<f64> = p0s.iter().map(|&p| theta_lower_bound(&item(1.3, 0.2, c), p).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]));
            let tc = theta_lower_bound(&item(1.3, 0.2, c), 0.9).unwrap();
            let tc2 = theta_lower_bound(&item(1.3, 0.2, c + 0.003), 0.9).unwrap();
            assert!(tc2 > tc);
        }
    }

    #[test]
    fn d_optimal_pair_examples() {
        let q = logit_by_bisection(0.824);
        let (lo, hi) = d_optimal_pair(&item(1.0, 0.0, 0.1));
        assert!((hi - q).abs() < 1e-9 && (lo + q).abs() < 1e-9);
        assert!((hi - 1.54372).abs() < 1e-3);
        let (lo, hi) = d_optimal_pair(&item(2.0, 1.0, 0.1));
        assert!((lo - 0.2282).abs() < 1e-3 && (hi - 1.7718).abs() < 1e-3);
        assert!((0.5 * (lo + hi) - 1.0).abs() < 1e-15);
        // the pair hits c + (1 - c) L_p on the ICC
        let it = item(1.7, -0.3, 0.2);
        let (lo, hi) = d_optimal_pair(&it);
        assert!((icc(lo, &it) - (0.2 + 0.8 * 0.176)).abs() < 1e-12);
        assert!((icc(hi, &it) - (0.2 + 0.8 * 0.824)).abs() < 1e-12);
    }

    #[test]
    fn d_optimal_spread_halves_when_a_doubles() {
        for a in [0.3, 0.5, 1.0, 1.4] {
            let (l1, h1) = d_optimal_pair(&item(a, 0.4, 0.1));
            let (l2, h2) = d_optimal_pair(&item(2.0 * a, 0.4, 0.1));
            assert!(((h1 - l1) - 2.0 * (h2 - l2)).abs() < 1e-12);
            assert!(((h1 - l1) - 2.0 * logit_by_bisection(0.824) / a).abs() < 1e-9);
        }
    }

    #[test]
    fn two_stage_batch_fallback_and_split() {
        let cfg = DesignConfig::default();
        let req = two_stage_batch(&state_at(item(1.0, 0.0, 0.1)), &cfg).unwrap();
        assert!(req.fallback);
        assert_eq!(req.total(), 15);
        assert_eq!(req.count_tagged(BatchTag::CBatch), 5);
        assert_eq!(req.targets[0].spec, TargetSpec::Range(Interval::new(-3.6, -3.1)));
        match (req.targets[1].spec, req.targets[2].spec) {
            (TargetSpec::Point(l), TargetSpec::Point(h)) => {
                assert!((l + 1.5437).abs() < 1e-3 && (h - 1.5437).abs() < 1e-3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!((req.targets[1].count, req.targets[2].count), (5, 5));

        let cfg95 = DesignConfig { p0: 0.95, ..cfg };
        let req = two_stage_batch(&state_at(item(0.5, 2.0, 0.1)), &cfg95).unwrap();
        assert!(req.fallback);
        match (req.targets[1].spec, req.targets[2].spec) {
            (TargetSpec::Point(l), TargetSpec::Point(h)) => {
                assert!((l + 1.0874).abs() < 1e-3);
                assert_eq!(h, 3.6);
            }
            other => panic!("{other:?}"),
        }

        let odd = DesignConfig { batch_ab: 9, ..cfg };
        let req = two_stage_batch(&state_at(item(1.0, 0.0, 0.1)), &odd).unwrap();
        assert_eq!((req.targets[1].count, req.targets[2].count), (5, 4));
    }

    #[test]
    fn two_stage_batch_regular_range() {
        let cfg = DesignConfig::default();
        let it = item(2.0, 1.0, 0.1);
        let req = two_stage_batch(&state_at(it), &cfg).unwrap();
        assert!(!req.fallback);
        let tl = theta_lower_bound(&it, 0.99).unwrap();
        assert_eq!(req.targets[0].spec, TargetSpec::Range(Interval::new(-3.6, tl)));
        assert!(req.within(&cfg.pool_range));
    }

    #[test]
    fn two_stage_targets_always_in_pool() {
        let cfg = DesignConfig::default();
        for a in [0.2, 0.5, 1.0, 2.0, 3.0] {
            for b in [-4.0, -2.0, 0.0, 2.0, 4.0] {
                let req = two_stage_batch(&state_at(item(a, b, 0.2)), &cfg).unwrap();
                assert!(req.within(&cfg.pool_range), "a={a} b={b}: {req:?}");
                assert_eq!(req.total(), cfg.batch_ab + cfg.batch_c);
                assert_eq!(req.count_tagged(BatchTag::AbBatch), 2 * req.count_tagged(BatchTag::CBatch));
            }
        }
    }

    fn grid_objective(g: &Gamma, base: &Matrix3<f64>, t: f64) -> f64 {
        (base + fisher_information_point(g, t)).determinant()
    }

    #[test]
    fn greedy_pick_is_grid_maximum() {
        let g = item(1.0, 0.0, 0.1).to_gamma();
        let grid = equispaced_grid(&Interval::new(-3.6, 3.6), 721);
        let base = Matrix3::identity() * 1e3;
        let first = greedy_d_optimal(&g, &base, 1, &grid)[0];
        let best = grid.iter().map(|&t| grid_objective(&g, &base, t)).fold(f64::NEG_INFINITY, f64::max);
        assert!((grid_objective(&g, &base, first) - best).abs() <= 1e-9 * best.abs());
    }

    #[test]
    fn greedy_objective_non_decreasing() {
        let g = item(1.0, 0.5, 0.1).to_gamma();
        let grid = equispaced_grid(&Interval::new(-3.6, 3.6), 721);
        let mut base = crate::irt_model::fisher_information(&g, (0..110).map(|i| -3.6 + 7.2 * i as f64 / 109.0));
        let picks = greedy_d_optimal(&g, &base, 15, &grid);
        assert_eq!(picks.len(), 15);
        let mut prev = base.determinant();
        for t in picks {
            base += fisher_information_point(&g, t);
            let det = base.determinant();
            assert!(det >= prev);
            prev = det;
        }
    }

    fn pick_sd(a: f64) -> f64 {
        let g = item(a, 0.0, 0.1).to_gamma();
        let grid = equispaced_grid(&Interval::new(-3.6, 3.6), 721);
        let base = crate::irt_model::fisher_information(&g, (0..110).map(|i| -3.6 + 7.2 * i as f64 / 109.0));
        let picks = greedy_d_optimal(&g, &base, 15, &grid);
        let m = picks.iter().sum::<f64>() / 15.0;
        (picks.iter().map(|t| (t - m).powi(2)).sum::<f64>() / 14.0).sqrt()
    }

    #[test]
    fn larger_discrimination_concentrates_picks() {
        assert!(pick_sd(2.0) < pick_sd(0.5));
    }

    #[test]
    fn strict_batch_has_requested_size() {
        let it = item(1.0, 0.0, 0.1);
        let mut st = state_at(it);
        let mut rng = SimRng::seed_from_u64(3);
        let init = random_batch(110, 2.0, &Interval::new(-3.6, 3.6), BatchTag::InitialAb, &mut rng).unwrap();
        for t in &init.targets {
            if let TargetSpec::Point(x) = t.spec {
                st.records.push(crate::irt_model::ResponseRecord { theta_observed: x, theta_true: x, y: 0, tag: t.tag });
            }
        }
        let cfg = DesignConfig::default();
        let req = strict_d_optimal_batch(&st, 15, &cfg.grid());
        assert_eq!(req.total(), 15);
        assert!(req.within(&cfg.pool_range));
    }

    #[test]
    fn random_batch_distribution() {
        let pool = Interval::new(-3.6, 3.6);
        let mut rng = SimRng::seed_from_u64(12);
        let req = random_batch(100_000, 1.16, &pool, BatchTag::Random, &mut rng).unwrap();
        let xs: Vec<f64> = req
            .targets
            .iter()
            .map(|t| match t.spec {
                TargetSpec::Point(x) => x,
                TargetSpec::Range(_) => unreachable!(),
            })
            .collect();
        let inside = xs.iter().filter(|x| x.abs() < 3.0).count() as f64 / xs.len() as f64;
        assert!((inside - 0.99).abs() < 0.003, "{inside}");
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 3.0 * 1.16 / (xs.len() as f64).sqrt());
        assert!(req.within(&pool));

        let a = random_batch(20, 1.16, &pool, BatchTag::Random, &mut SimRng::seed_from_u64(5)).unwrap();
        let b = random_batch(20, 1.16, &pool, BatchTag::Random, &mut SimRng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
