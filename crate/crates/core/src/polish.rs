//! Fast-HALS against a polished target.
//!
//! The polished target is the entrywise convex combination
//! `X̃ = (1 − G) · med(X) + G · X`, where `G` comes from the residual of the
//! current factorization against the original data. Fast-HALS sweeps minimize
//! `‖X̃ − WHᵀ‖²_F`; the target is refreshed on a logistic schedule driven by
//! how much it moved at the previous refresh. After the last sweep a short
//! weighted-NMF run on the original data, warm-started from the polished
//! factors, pulls the factorization back toward `X`.

use serde::{Deserialize, Serialize};

use crate::engine::{
    fast_hals_sweep, init_factors, relative_change, solve_weighted_nmf, FactorPair, Fit, Reseeder,
    SolveConfig,
};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::weights::{compute_weights, WeightScheme};

/// How the refinement length responds to the distance between `X` and the
/// final polished target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMapping {
    /// Same logistic as the refresh schedule: larger distance, fewer iterations.
    #[default]
    Direct,
    /// Complementary logistic: larger distance, more iterations.
    Reflected,
}

impl std::str::FromStr for RefineMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(RefineMapping::Direct),
            "reflected" => Ok(RefineMapping::Reflected),
            other => Err(Error::config(format!("unknown refine mapping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolishConfig {
    pub scheme: WeightScheme,
    pub max_step_iter: usize,
    pub slope: f64,
    pub inflexion_point: f64,
    pub refine_max_iter: usize,
    pub refine_mapping: RefineMapping,
    pub solve: SolveConfig,
}

impl PolishConfig {
    pub fn new(scheme: WeightScheme, solve: SolveConfig) -> Self {
        Self {
            scheme,
            max_step_iter: 100,
            slope: 10.0,
            inflexion_point: 0.01,
            refine_max_iter: 20,
            refine_mapping: RefineMapping::Direct,
            solve,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_step_iter == 0 {
            return Err(Error::config("max_step_iter must be at least 1"));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(Error::config("slope must be positive"));
        }
        if !self.inflexion_point.is_finite() {
            return Err(Error::config("inflexion_point must be finite"));
        }
        self.scheme.validate()
    }
}

/// Snapshot of the refresh loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PolishState {
    pub target: DenseMatrix,
    /// Sweeps to run before the next refresh.
    pub step_iter: usize,
    pub last_target_change: f64,
    /// Sweeps completed so far.
    pub iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub iter: usize,
    /// `‖X̃ − WHᵀ‖²_F` against the target in force during this sweep.
    pub objective: f64,
    /// RRE against a clean reference, when one was supplied.
    pub rre_clean: Option<f64>,
    /// First sweep after a target refresh.
    pub refresh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshEvent {
    /// Sweep count at which the refresh happened.
    pub iter: usize,
    /// Polished objective of the current factors against the outgoing target.
    pub objective_before: f64,
    /// Polished objective of the same factors against the incoming target.
    pub objective_after: f64,
    pub target_change: f64,
    pub next_step_iter: usize,
}

impl RefreshEvent {
    pub fn dropped(&self) -> bool {
        self.objective_after < self.objective_before
    }
}

#[derive(Debug, Clone)]
pub struct PolishFit {
    pub factors: FactorPair,
    pub trajectory: Vec<SweepRecord>,
    pub refreshes: Vec<RefreshEvent>,
    /// Weighted-NMF refinement on the original data, if any ran.
    pub refinement: Option<Fit>,
    pub final_state: PolishState,
    pub converged: bool,
}

impl PolishFit {
    pub fn objectives(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.objective).collect()
    }

    pub fn clean_rre(&self) -> Option<Vec<f64>> {
        self.trajectory.iter().map(|r| r.rre_clean).collect()
    }

    pub fn refinement_iterations(&self) -> usize {
        self.refinement.as_ref().map_or(0, Fit::iterations)
    }
}

/// `(1 − G) · med(X) + G · X` with `G` computed from `x − approx`.
pub fn polish_target(x: &DenseMatrix, approx: &DenseMatrix, scheme: &WeightScheme) -> Result<DenseMatrix> {
    polish_with_median(x, approx, scheme, x.global_median())
}

fn polish_with_median(
    x: &DenseMatrix,
    approx: &DenseMatrix,
    scheme: &WeightScheme,
    median: f64,
) -> Result<DenseMatrix> {
    x.ensure_same_shape(approx, "polish_target")?;
    let weights = compute_weights(scheme, x, approx)?;
    let weights = if scheme.kind.is_bounded() {
        weights
    } else {
        weights.clamped_unit()
    };
    let data = weights
        .matrix()
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&g, &v)| (1.0 - g) * median + g * v)
        .collect();
    DenseMatrix::new(x.rows(), x.cols(), data)
}

fn logistic_count(change: f64, ceiling: usize, slope: f64, inflexion: f64, reflected: bool) -> usize {
    let ceiling = ceiling as f64;
    let z = (slope * (change - inflexion)).exp();
    let fraction = if z.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + z)
    };
    let fraction = if reflected { 1.0 - fraction } else { fraction };
    // f64::round breaks ties away from zero
    (1.0 + ceiling * fraction).round().clamp(1.0, 1.0 + ceiling) as usize
}

/// Sweeps until the next refresh: `round(1 + max_step_iter / (1 + e^{slope·(change − inflexion)}))`.
pub fn schedule_step(target_change: f64, config: &PolishConfig) -> usize {
    logistic_count(
        target_change.max(0.0),
        config.max_step_iter,
        config.slope,
        config.inflexion_point,
        false,
    )
}

/// Length of the weighted-NMF refinement for a given relative distance
/// between `X` and the final polished target. Always in `[0, refine_max_iter]`.
pub fn refinement_iterations(distance: f64, config: &PolishConfig) -> usize {
    if config.refine_max_iter == 0 {
        return 0;
    }
    let count = logistic_count(
        distance.max(0.0),
        config.refine_max_iter,
        config.slope,
        config.inflexion_point,
        config.refine_mapping == RefineMapping::Reflected,
    );
    (count - 1).min(config.refine_max_iter)
}

/// `‖next − prev‖_F / ‖prev‖_F`
pub fn target_change(prev: &DenseMatrix, next: &DenseMatrix) -> Result<f64> {
    let denom = prev.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::numeric("target change undefined for a zero target"));
    }
    Ok(prev.squared_distance(next)?.sqrt() / denom)
}

/// Runs the full polish loop followed by the refinement phase. When `clean`
/// is given, every sweep also records the RRE against it.
pub fn solve_target_polish(
    x: &DenseMatrix,
    config: &PolishConfig,
    clean: Option<&DenseMatrix>,
) -> Result<PolishFit> {
    config.validate()?;
    x.ensure_nonneg()?;
    if x.frobenius_norm() == 0.0 {
        return Err(Error::numeric("cannot polish an all-zero matrix"));
    }
    let clean_norm = match clean {
        Some(c) => {
            c.ensure_same_shape(x, "clean reference")?;
            let n = c.frobenius_norm();
            if n == 0.0 {
                return Err(Error::numeric("clean reference is all zeros"));
            }
            Some((c, n))
        }
        None => None,
    };
    let solve = &config.solve;
    let median = x.global_median();

    let mut factors = init_factors(x, solve)?;
    let mut reseed = Reseeder::new(solve.seed);
    let approx = factors.reconstruct();
    let mut state = PolishState {
        target: polish_with_median(x, &approx, &config.scheme, median)?,
        step_iter: 1,
        last_target_change: 0.0,
        iter: 0,
    };
    let mut previous = state.target.squared_distance(&approx)?;
    let mut target_sq = state.target.squared_norm();
    let mut remaining = state.step_iter;
    let mut just_refreshed = false;
    let mut trajectory = Vec::with_capacity(solve.n_iter_max);
    let mut refreshes = Vec::new();
    let mut converged = false;

    while state.iter < solve.n_iter_max {
        let current = fast_hals_sweep(&state.target, target_sq, &mut factors, &mut reseed)?;
        state.iter += 1;
        let refresh_due = remaining == 1 && state.iter < solve.n_iter_max;
        let approx = (clean_norm.is_some() || refresh_due).then(|| factors.reconstruct());
        let rre_clean = match (clean_norm, &approx) {
            (Some((c, n)), Some(a)) => Some(c.squared_distance(a)?.sqrt() / n),
            _ => None,
        };
        trajectory.push(SweepRecord {
            iter: state.iter,
            objective: current,
            rre_clean,
            refresh: just_refreshed,
        });
        just_refreshed = false;

        if relative_change(previous, current) < solve.tol {
            converged = true;
            break;
        }
        previous = current;

        remaining -= 1;
        if let (true, Some(approx)) = (refresh_due, &approx) {
            let next = polish_with_median(x, approx, &config.scheme, median)?;
            let change = target_change(&state.target, &next)?;
            let after = next.squared_distance(approx)?;
            let step = schedule_step(change, config);
            refreshes.push(RefreshEvent {
                iter: state.iter,
                objective_before: current,
                objective_after: after,
                target_change: change,
                next_step_iter: step,
            });
            target_sq = next.squared_norm();
            state.target = next;
            state.step_iter = step;
            state.last_target_change = change;
            previous = after;
            remaining = step;
            just_refreshed = true;
        }
    }

    let refinement = if state.target == *x {
        // nothing to pull back toward
        None
    } else {
        let distance = target_change(&state.target, x)?;
        let count = refinement_iterations(distance, config);
        if count == 0 {
            None
        } else {
            let refine_cfg = SolveConfig {
                n_iter_max: count,
                ..*solve
            };
            let fit = solve_weighted_nmf(x, &config.scheme, &refine_cfg, Some(factors.clone()))?;
            factors = fit.factors.clone();
            Some(fit)
        }
    };

    Ok(PolishFit {
        factors,
        trajectory,
        refreshes,
        refinement,
        final_state: state,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::solve_nmf;
    use crate::weights::WeightKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> PolishConfig {
        PolishConfig::new(WeightScheme::none(), SolveConfig::new(2))
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn schedule_closed_forms() {
        let cfg = defaults();
        assert_eq!(schedule_step(0.01, &cfg), 51);
        assert_eq!(schedule_step(0.0, &cfg), 53);
        assert_eq!(schedule_step(10.0, &cfg), 1);
        assert_eq!(schedule_step(1e6, &cfg), 1);
    }

    #[test]
    fn schedule_bounds() {
        let cfg = defaults();
        for i in 0..2000 {
            let s = schedule_step(i as f64 * 1e-4, &cfg);
            assert!((1..=101).contains(&s));
        }
        // monotone nonincreasing in the change
        let steps: Vec<usize> = (0..200).map(|i| schedule_step(i as f64 * 1e-3, &cfg)).collect();
        assert!(steps.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn refinement_counts() {
        let mut cfg = defaults();
        // round(1 + 20 / (1 + e^{-0.1})) − 1 = round(11.4996) − 1
        assert_eq!(refinement_iterations(0.0, &cfg), 10);
        assert_eq!(refinement_iterations(0.01, &cfg), 10);
        assert_eq!(refinement_iterations(5.0, &cfg), 0);
        cfg.refine_mapping = RefineMapping::Reflected;
        assert_eq!(refinement_iterations(5.0, &cfg), 20);
        assert_eq!(refinement_iterations(0.0, &cfg), 10);
        cfg.refine_max_iter = 0;
        assert_eq!(refinement_iterations(0.0, &cfg), 0);
    }

    #[test]
    fn polish_identity_and_median() {
        let x = random(5, 4, 1);
        let approx = random(5, 4, 2);
        let t = polish_target(&x, &approx, &WeightScheme::none()).unwrap();
        assert_eq!(t, x);

        let x = DenseMatrix::from_rows(&[vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap();
        let t = polish_target(&x, &x, &WeightScheme::new(WeightKind::Cim)).unwrap();
        assert_eq!(t, x);
    }

    #[test]
    fn polish_pulls_outliers_to_median() {
        // one badly fitted entry
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 50.0]]).unwrap();
        let approx = DenseMatrix::ones(2, 3);
        let t = polish_target(&x, &approx, &WeightScheme::new(WeightKind::Cim)).unwrap();
        assert!(t.get(1, 2) < 50.0 && t.get(1, 2) >= 1.0);
        assert_eq!(t.get(0, 0), 1.0);
    }

    #[test]
    fn target_change_cases() {
        let a = random(4, 3, 5);
        assert_eq!(target_change(&a, &a).unwrap(), 0.0);
        let b = a.scale(2.0).unwrap();
        assert!((target_change(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = random(4, 3, 6);
        let want = a.sub(&c).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!((target_change(&a, &c).unwrap() - want).abs() < 1e-12);
        assert!(target_change(&DenseMatrix::zeros(2, 2), &a).is_err());
    }

    #[test]
    fn none_scheme_reduces_to_fast_hals() {
        let x = random(12, 10, 9);
        let solve = SolveConfig::new(3).with_seed(4);
        let plain = solve_nmf(&x, &solve).unwrap();
        let fit = solve_target_polish(&x, &PolishConfig::new(WeightScheme::none(), solve), None).unwrap();
        assert_eq!(fit.objectives(), plain.trajectory);
        assert_eq!(fit.factors, plain.factors);
        assert!(fit.refinement.is_none());
    }

    #[test]
    fn rejects_zero_data() {
        let x = DenseMatrix::zeros(4, 4);
        let cfg = PolishConfig::new(WeightScheme::none(), SolveConfig::new(1));
        assert!(matches!(solve_target_polish(&x, &cfg, None), Err(Error::Numeric(_))));
    }

    #[test]
    fn refresh_flags_follow_events() {
        let x = random(15, 12, 3);
        let cfg = PolishConfig::new(
            WeightScheme::new(WeightKind::Huber),
            SolveConfig::new(2).with_seed(1).with_tol(0.0),
        );
        let fit = solve_target_polish(&x, &cfg, Some(&x)).unwrap();
        assert_eq!(fit.trajectory.len(), 200);
        let flagged: Vec<usize> = fit
            .trajectory
            .iter()
            .filter(|r| r.refresh)
            .map(|r| r.iter - 1)
            .collect();
        let events: Vec<usize> = fit.refreshes.iter().map(|e| e.iter).collect();
        assert_eq!(flagged, events);
        assert_eq!(fit.refreshes[0].iter, 1);
        assert!(fit.trajectory.iter().all(|r| r.rre_clean.is_some()));
        assert!(fit.refinement_iterations() <= 20);
    }
}
