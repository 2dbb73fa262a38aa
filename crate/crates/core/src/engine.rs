//! Factorization solvers: reference HALS, Fast-HALS and weighted multiplicative
//! updates, together with initialization and stopping control.
//!
//! Factors follow the `X ≈ W Hᵀ` convention with `W` of shape `m × r` and `H`
//! of shape `n × r`. A sweep updates every column of `H` in order, then every
//! column of `W`, then rescales the columns of `W` to unit length, moving the
//! scale into `H` so that `W Hᵀ` is unchanged by the rescaling.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, EPS};
use crate::weights::{compute_weights, WeightScheme};

/// Columns of `W` whose norm falls below this after an update are reseeded.
pub const ZERO_COLUMN_NORM: f64 = 1e-12;

const RESEED_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    #[default]
    RandomUniform,
    Nndsvd,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" | "random-uniform" => Ok(InitMethod::RandomUniform),
            "nndsvd" => Ok(InitMethod::Nndsvd),
            other => Err(Error::config(format!("unknown init method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub rank: usize,
    pub n_iter_max: usize,
    /// Stop once `|J_t − J_{t−1}| / max(J_{t−1}, eps)` drops below this.
    pub tol: f64,
    pub seed: u64,
    pub init: InitMethod,
}

impl SolveConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            n_iter_max: 200,
            tol: 1e-6,
            seed: 0,
            init: InitMethod::RandomUniform,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iterations(mut self, n_iter_max: usize) -> Self {
        self.n_iter_max = n_iter_max;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rank == 0 || self.rank > rows.min(cols) {
            return Err(Error::config(format!(
                "rank {} outside [1, {}] for a {rows}x{cols} matrix",
                self.rank,
                rows.min(cols)
            )));
        }
        if self.n_iter_max == 0 {
            return Err(Error::config("n_iter_max must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// `m × r`
    pub w: DenseMatrix,
    /// `n × r`
    pub h: DenseMatrix,
}

impl FactorPair {
    pub fn new(w: DenseMatrix, h: DenseMatrix) -> Result<Self> {
        if w.cols() != h.cols() {
            return Err(Error::shape(format!(
                "factor ranks differ: W has {} columns, H has {}",
                w.cols(),
                h.cols()
            )));
        }
        w.ensure_nonneg()?;
        h.ensure_nonneg()?;
        Ok(Self { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    /// `W Hᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        self.w
            .matmul_t(&self.h)
            .expect("factor pair ranks are consistent")
    }

    pub fn ensure_fits(&self, x: &DenseMatrix) -> Result<()> {
        if self.w.rows() != x.rows() || self.h.rows() != x.cols() {
            return Err(Error::shape(format!(
                "factors {}x{} / {}x{} do not fit a {}x{} matrix",
                self.w.rows(),
                self.w.cols(),
                self.h.rows(),
                self.h.cols(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn is_nonneg(&self) -> bool {
        self.w.is_nonneg() && self.h.is_nonneg()
    }
}

/// Deterministic source of replacement values for columns of `W` that an
/// update drove to zero.
#[derive(Debug, Clone)]
pub struct Reseeder {
    rng: ChaCha8Rng,
}

impl Reseeder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ RESEED_STREAM),
        }
    }

    fn refill_column(&mut self, w: &mut DenseMatrix, k: usize) {
        let scale = 1.0 / (w.rows() as f64).sqrt();
        for i in 0..w.rows() {
            let v = (1e-3 + self.rng.random::<f64>()) * scale;
            w.set(i, k, v);
        }
    }
}

/// Result of a solver run. `trajectory[t]` is the objective after sweep `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub factors: FactorPair,
    pub trajectory: Vec<f64>,
    pub initial_objective: f64,
    pub converged: bool,
    /// RRE against a clean reference after each iteration, when one was supplied.
    pub clean_rre: Option<Vec<f64>>,
}

impl Fit {
    pub fn iterations(&self) -> usize {
        self.trajectory.len()
    }
}

/// Unweighted objective `‖X − WHᵀ‖²_F`.
pub fn objective(x: &DenseMatrix, factors: &FactorPair) -> Result<f64> {
    factors.ensure_fits(x)?;
    x.squared_distance(&factors.reconstruct())
}

pub fn relative_change(previous: f64, current: f64) -> f64 {
    (current - previous).abs() / previous.max(EPS)
}

pub fn init_factors(x: &DenseMatrix, config: &SolveConfig) -> Result<FactorPair> {
    x.ensure_nonneg()?;
    config.validate(x.rows(), x.cols())?;
    match config.init {
        InitMethod::RandomUniform => Ok(random_init(x, config.rank, config.seed)),
        InitMethod::Nndsvd => nndsvd_init(x, config.rank),
    }
}

fn random_init(x: &DenseMatrix, rank: usize, seed: u64) -> FactorPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (x.mean() / rank as f64).sqrt();
    let w = DenseMatrix::from_fn(x.rows(), rank, |_, _| rng.random::<f64>() * scale);
    let h = DenseMatrix::from_fn(x.cols(), rank, |_, _| rng.random::<f64>() * scale);
    FactorPair { w, h }
}

/// Leading singular triplets `(σ, u, v)` via the eigendecomposition of the
/// smaller Gram matrix.
fn leading_singular_triplets(x: &DenseMatrix, rank: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let (m, n) = x.shape();
    let xm = DMatrix::from_row_slice(m, n, x.as_slice());
    let tall = m >= n;
    let gram = if tall { xm.tr_mul(&xm) } else { &xm * xm.transpose() };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    order
        .into_iter()
        .take(rank)
        .map(|idx| {
            let sigma = eig.eigenvalues[idx].max(0.0).sqrt();
            let small = eig.eigenvectors.column(idx).into_owned();
            let big = if tall { &xm * &small } else { xm.tr_mul(&small) };
            let big: Vec<f64> = if sigma > 0.0 {
                big.iter().map(|v| v / sigma).collect()
            } else {
                vec![0.0; big.len()]
            };
            let small: Vec<f64> = small.iter().copied().collect();
            if tall {
                (sigma, big, small)
            } else {
                (sigma, small, big)
            }
        })
        .collect()
}

fn nndsvd_init(x: &DenseMatrix, rank: usize) -> Result<FactorPair> {
    let (m, n) = x.shape();
    let mut w = DenseMatrix::zeros(m, rank);
    let mut h = DenseMatrix::zeros(n, rank);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    for (k, (sigma, u, v)) in leading_singular_triplets(x, rank).into_iter().enumerate() {
        if k == 0 {
            // the leading pair of a nonnegative matrix can be taken nonnegative
            let s = sigma.sqrt();
            for i in 0..m {
                w.set(i, 0, s * u[i].abs());
            }
            for j in 0..n {
                h.set(j, 0, s * v[j].abs());
            }
            continue;
        }
        let pos = |a: &[f64]| a.iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
        let neg = |a: &[f64]| a.iter().map(|v| (-v).max(0.0)).collect::<Vec<_>>();
        let (up, un, vp, vn) = (pos(&u), neg(&u), pos(&v), neg(&v));
        let (nup, nun, nvp, nvn) = (norm(&up), norm(&un), norm(&vp), norm(&vn));
        let (mp, mn) = (nup * nvp, nun * nvn);
        let (uu, vv, nu, nv, mass) = if mp > mn {
            (up, vp, nup, nvp, mp)
        } else {
            (un, vn, nun, nvn, mn)
        };
        if mass <= 0.0 {
            continue;
        }
        let s = (sigma * mass).sqrt();
        for i in 0..m {
            w.set(i, k, s * uu[i] / nu);
        }
        for j in 0..n {
            h.set(j, k, s * vv[j] / nv);
        }
    }
    FactorPair::new(w, h)
}

fn column_dot(a: &DenseMatrix, ka: usize, b: &DenseMatrix, kb: usize) -> f64 {
    (0..a.rows()).map(|i| a.get(i, ka) * b.get(i, kb)).sum()
}

fn column_norm(a: &DenseMatrix, k: usize) -> f64 {
    column_dot(a, k, a, k).sqrt()
}

/// Rescales each nonzero column of `W` to unit norm, scaling the matching
/// column of `H` by the same factor; zero columns are reseeded instead.
/// Returns whether any column was reseeded.
fn normalize_columns(factors: &mut FactorPair, reseed: &mut Reseeder) -> bool {
    let mut reseeded = false;
    for k in 0..factors.rank() {
        let norm = column_norm(&factors.w, k);
        if norm < ZERO_COLUMN_NORM {
            reseed.refill_column(&mut factors.w, k);
            reseeded = true;
            continue;
        }
        for i in 0..factors.w.rows() {
            let v = factors.w.get(i, k) / norm;
            factors.w.set(i, k, v);
        }
        for j in 0..factors.h.rows() {
            let v = factors.h.get(j, k) * norm;
            factors.h.set(j, k, v);
        }
    }
    reseeded
}

/// One HALS sweep computing each rank-one residual `X_k = X − WHᵀ + w_k h_kᵀ`
/// explicitly. Serves as the reference for [`fast_hals_step`].
pub fn hals_step(x: &DenseMatrix, factors: &mut FactorPair, reseed: &mut Reseeder) -> Result<()> {
    factors.ensure_fits(x)?;
    let (m, n) = x.shape();
    let rank = factors.rank();

    let component_residual = |f: &FactorPair, k: usize| -> Result<DenseMatrix> {
        let approx = f.reconstruct();
        let mut xk = x.sub(&approx)?;
        for i in 0..m {
            for j in 0..n {
                let v = xk.get(i, j) + f.w.get(i, k) * f.h.get(j, k);
                xk.set(i, j, v);
            }
        }
        Ok(xk)
    };

    for k in 0..rank {
        let wk_sq = column_dot(&factors.w, k, &factors.w, k);
        if wk_sq < EPS {
            continue;
        }
        let xk = component_residual(factors, k)?;
        for j in 0..n {
            let proj: f64 = (0..m).map(|i| xk.get(i, j) * factors.w.get(i, k)).sum();
            factors.h.set(j, k, (proj / wk_sq).max(0.0));
        }
    }
    for k in 0..rank {
        let hk_sq = column_dot(&factors.h, k, &factors.h, k);
        if hk_sq < EPS {
            continue;
        }
        let xk = component_residual(factors, k)?;
        for i in 0..m {
            let proj: f64 = (0..n).map(|j| xk.get(i, j) * factors.h.get(j, k)).sum();
            factors.w.set(i, k, (proj / hk_sq).max(0.0));
        }
    }
    normalize_columns(factors, reseed);
    Ok(())
}

/// Sequential column update `a_k ← [a_k + (cross_k − A gram_k) / gram_kk]₊`
/// shared by both halves of a Fast-HALS sweep.
fn fast_hals_columns(a: &mut DenseMatrix, gram: &DenseMatrix, cross: &DenseMatrix) {
    let rank = a.cols();
    for k in 0..rank {
        let diag = gram.get(k, k);
        if diag < EPS {
            continue;
        }
        for i in 0..a.rows() {
            let row = a.row(i);
            let mut coupled = 0.0;
            for (l, &v) in row.iter().enumerate() {
                coupled += v * gram.get(l, k);
            }
            let v = row[k] + (cross.get(i, k) - coupled) / diag;
            a.set(i, k, v.max(0.0));
        }
    }
}

/// Fast-HALS update of every column of `H` given `gram_w = WᵀW` and
/// `cross = XᵀW`.
pub fn fast_hals_update_h(h: &mut DenseMatrix, gram_w: &DenseMatrix, cross: &DenseMatrix) -> Result<()> {
    if gram_w.shape() != (h.cols(), h.cols()) || cross.shape() != h.shape() {
        return Err(Error::shape("fast_hals_update_h: gram/cross shapes do not match H"));
    }
    fast_hals_columns(h, gram_w, cross);
    Ok(())
}

/// Fast-HALS update of every column of `W` given `gram_h = HᵀH` and
/// `cross = XH`. Column rescaling is left to the caller.
pub fn fast_hals_update_w(w: &mut DenseMatrix, gram_h: &DenseMatrix, cross: &DenseMatrix) -> Result<()> {
    if gram_h.shape() != (w.cols(), w.cols()) || cross.shape() != w.shape() {
        return Err(Error::shape("fast_hals_update_w: gram/cross shapes do not match W"));
    }
    fast_hals_columns(w, gram_h, cross);
    Ok(())
}

/// One Fast-HALS sweep with the H-half products supplied by the caller.
pub fn fast_hals_step_with(
    x: &DenseMatrix,
    factors: &mut FactorPair,
    gram_w: &DenseMatrix,
    cross: &DenseMatrix,
    reseed: &mut Reseeder,
) -> Result<()> {
    factors.ensure_fits(x)?;
    fast_hals_update_h(&mut factors.h, gram_w, cross)?;
    let gram_h = factors.h.t_matmul(&factors.h)?;
    let cross_w = x.matmul(&factors.h)?;
    fast_hals_update_w(&mut factors.w, &gram_h, &cross_w)?;
    normalize_columns(factors, reseed);
    Ok(())
}

/// One Fast-HALS sweep.
pub fn fast_hals_step(x: &DenseMatrix, factors: &mut FactorPair, reseed: &mut Reseeder) -> Result<()> {
    factors.ensure_fits(x)?;
    let gram_w = factors.w.t_matmul(&factors.w)?;
    let cross = x.t_matmul(&factors.w)?;
    fast_hals_step_with(x, factors, &gram_w, &cross, reseed)
}

/// Below this fraction of `‖X‖²` the expanded objective loses too many digits
/// to cancellation and is recomputed from a reconstruction.
const EXPANDED_OBJECTIVE_FLOOR: f64 = 1e-3;

/// One Fast-HALS sweep returning `‖X − WHᵀ‖²_F` afterwards, where `x_sq` is
/// `‖X‖²_F`. The objective is expanded as
/// `‖X‖² − 2⟨W, XH⟩ + ⟨WᵀW, HᵀH⟩` from products the sweep already formed.
pub fn fast_hals_sweep(
    x: &DenseMatrix,
    x_sq: f64,
    factors: &mut FactorPair,
    reseed: &mut Reseeder,
) -> Result<f64> {
    factors.ensure_fits(x)?;
    let gram_w = factors.w.t_matmul(&factors.w)?;
    let cross = x.t_matmul(&factors.w)?;
    fast_hals_update_h(&mut factors.h, &gram_w, &cross)?;
    let gram_h = factors.h.t_matmul(&factors.h)?;
    let cross_w = x.matmul(&factors.h)?;
    fast_hals_update_w(&mut factors.w, &gram_h, &cross_w)?;

    let gram_w = factors.w.t_matmul(&factors.w)?;
    let fit: f64 = factors
        .w
        .as_slice()
        .iter()
        .zip(cross_w.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let coupling: f64 = gram_w
        .as_slice()
        .iter()
        .zip(gram_h.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let expanded = x_sq - 2.0 * fit + coupling;

    let reseeded = normalize_columns(factors, reseed);
    if reseeded || !(expanded >= EXPANDED_OBJECTIVE_FLOOR * x_sq) {
        return objective(x, factors);
    }
    Ok(expanded)
}

/// Fast-HALS from [`init_factors`] until the relative objective change falls
/// below `tol` or `n_iter_max` sweeps have run.
pub fn solve_nmf(x: &DenseMatrix, config: &SolveConfig) -> Result<Fit> {
    let factors = init_factors(x, config)?;
    solve_nmf_from(x, config, factors)
}

/// Fast-HALS warm-started from `factors`.
pub fn solve_nmf_from(x: &DenseMatrix, config: &SolveConfig, factors: FactorPair) -> Result<Fit> {
    fast_hals_loop(x, config, factors, None)
}

/// [`solve_nmf`] that also records the RRE against `clean` after every sweep.
pub fn solve_nmf_tracked(x: &DenseMatrix, config: &SolveConfig, clean: &DenseMatrix) -> Result<Fit> {
    let factors = init_factors(x, config)?;
    fast_hals_loop(x, config, factors, Some(clean))
}

/// Squared-norm helper for the optional clean-reference RRE trajectory.
struct CleanTracker<'a> {
    clean: &'a DenseMatrix,
    norm: f64,
    values: Vec<f64>,
}

impl<'a> CleanTracker<'a> {
    fn new(clean: Option<&'a DenseMatrix>, x: &DenseMatrix) -> Result<Option<Self>> {
        let Some(clean) = clean else {
            return Ok(None);
        };
        clean.ensure_same_shape(x, "clean reference")?;
        let norm = clean.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::numeric("clean reference is all zeros"));
        }
        Ok(Some(Self {
            clean,
            norm,
            values: Vec::new(),
        }))
    }

    fn record(&mut self, approx: &DenseMatrix) -> Result<f64> {
        let v = self.clean.squared_distance(approx)?.sqrt() / self.norm;
        self.values.push(v);
        Ok(v)
    }
}

fn fast_hals_loop(
    x: &DenseMatrix,
    config: &SolveConfig,
    mut factors: FactorPair,
    clean: Option<&DenseMatrix>,
) -> Result<Fit> {
    x.ensure_nonneg()?;
    config.validate(x.rows(), x.cols())?;
    factors.ensure_fits(x)?;
    let mut tracker = CleanTracker::new(clean, x)?;
    let mut reseed = Reseeder::new(config.seed);
    let initial_objective = objective(x, &factors)?;
    let mut previous = initial_objective;
    let mut trajectory = Vec::with_capacity(config.n_iter_max);
    let mut converged = false;

    let x_sq = x.squared_norm();

    for _ in 0..config.n_iter_max {
        let current = fast_hals_sweep(x, x_sq, &mut factors, &mut reseed)?;
        trajectory.push(current);
        if let Some(t) = tracker.as_mut() {
            t.record(&factors.reconstruct())?;
        }
        if relative_change(previous, current) < config.tol {
            converged = true;
            break;
        }
        previous = current;
    }

    Ok(Fit {
        factors,
        trajectory,
        initial_objective,
        converged,
        clean_rre: tracker.map(|t| t.values),
    })
}

/// `Σ G ∘ (X − approx)²`
fn weighted_objective(g: &DenseMatrix, x: &DenseMatrix, approx: &DenseMatrix) -> f64 {
    g.as_slice()
        .iter()
        .zip(x.as_slice())
        .zip(approx.as_slice())
        .map(|((g, a), b)| g * (a - b) * (a - b))
        .sum()
}

/// `a ← a ∘ numer ⊘ (denom + eps)`
fn multiplicative_update(a: &mut DenseMatrix, numer: &DenseMatrix, denom: &DenseMatrix, eps: f64) {
    for ((v, n), d) in a
        .as_mut_slice()
        .iter_mut()
        .zip(numer.as_slice())
        .zip(denom.as_slice())
    {
        *v *= n / (d + eps);
    }
}

/// Weighted NMF with multiplicative updates. Weights are recomputed from the
/// current residual at the start of every iteration; the trajectory records
/// the weighted objective at the end of each iteration under that
/// iteration's weights.
pub fn solve_weighted_nmf(
    x: &DenseMatrix,
    scheme: &WeightScheme,
    config: &SolveConfig,
    warm: Option<FactorPair>,
) -> Result<Fit> {
    solve_weighted_nmf_tracked(x, scheme, config, warm, None)
}

/// [`solve_weighted_nmf`] that also records the RRE against `clean` after
/// every iteration.
pub fn solve_weighted_nmf_tracked(
    x: &DenseMatrix,
    scheme: &WeightScheme,
    config: &SolveConfig,
    warm: Option<FactorPair>,
    clean: Option<&DenseMatrix>,
) -> Result<Fit> {
    x.ensure_nonneg()?;
    let mut tracker = CleanTracker::new(clean, x)?;
    config.validate(x.rows(), x.cols())?;
    scheme.validate()?;
    let mut factors = match warm {
        Some(f) => {
            f.ensure_fits(x)?;
            if f.rank() != config.rank {
                return Err(Error::config("warm-start rank differs from configured rank"));
            }
            f
        }
        None => init_factors(x, config)?,
    };
    let eps = scheme.epsilon;

    let mut approx = factors.reconstruct();
    let initial_weights = compute_weights(scheme, x, &approx)?;
    let initial_objective = weighted_objective(initial_weights.matrix(), x, &approx);
    let mut weights = Some(initial_weights);
    let mut previous = initial_objective;
    let mut trajectory = Vec::with_capacity(config.n_iter_max);
    let mut converged = false;

    for _ in 0..config.n_iter_max {
        let g = match weights.take() {
            Some(w) => w,
            None => compute_weights(scheme, x, &approx)?,
        };
        let g = g.matrix();
        let gx = g.hadamard(x)?;

        let numer = gx.matmul(&factors.h)?;
        let denom = g.hadamard(&approx)?.matmul(&factors.h)?;
        multiplicative_update(&mut factors.w, &numer, &denom, eps);

        approx = factors.reconstruct();
        let numer = gx.t_matmul(&factors.w)?;
        let denom = g.hadamard(&approx)?.t_matmul(&factors.w)?;
        multiplicative_update(&mut factors.h, &numer, &denom, eps);

        approx = factors.reconstruct();
        let current = weighted_objective(g, x, &approx);
        if !current.is_finite() {
            return Err(Error::numeric("weighted objective became non-finite"));
        }
        trajectory.push(current);
        if let Some(t) = tracker.as_mut() {
            t.record(&approx)?;
        }
        if relative_change(previous, current) < config.tol {
            converged = true;
            break;
        }
        previous = current;
    }

    Ok(Fit {
        factors,
        trajectory,
        initial_objective,
        converged,
        clean_rre: tracker.map(|t| t.values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightKind;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    fn planted(m: usize, n: usize, r: usize, seed: u64) -> (DenseMatrix, FactorPair) {
        let w = random(m, r, seed);
        let h = random(n, r, seed + 1000);
        let f = FactorPair::new(w, h).unwrap();
        (f.reconstruct(), f)
    }

    #[test]
    fn expanded_objective_matches_reconstruction() {
        for seed in 0..10 {
            let x = random(25, 18, seed);
            let mut a = init_factors(&x, &SolveConfig::new(3).with_seed(seed)).unwrap();
            let mut b = a.clone();
            let (mut ra, mut rb) = (Reseeder::new(seed), Reseeder::new(seed));
            for _ in 0..20 {
                let got = fast_hals_sweep(&x, x.squared_norm(), &mut a, &mut ra).unwrap();
                fast_hals_step(&x, &mut b, &mut rb).unwrap();
                assert_eq!(a, b);
                let exact = objective(&x, &b).unwrap();
                assert!((got - exact).abs() <= 1e-12 * x.squared_norm(), "{got} vs {exact}");
            }
        }
    }

    #[test]
    fn config_validation() {
        let x = random(5, 4, 1);
        assert!(init_factors(&x, &SolveConfig::new(5)).is_err());
        assert!(init_factors(&x, &SolveConfig::new(0)).is_err());
        assert!(init_factors(&x, &SolveConfig::new(4)).is_ok());
        assert!(init_factors(&x, &SolveConfig::new(2).with_iterations(0)).is_err());
        assert!(init_factors(&x, &SolveConfig::new(2).with_tol(-1.0)).is_err());
    }

    #[test]
    fn init_is_deterministic_and_nonnegative() {
        let x = random(7, 5, 3);
        for init in [InitMethod::RandomUniform, InitMethod::Nndsvd] {
            let cfg = SolveConfig::new(3).with_seed(42).with_init(init);
            let a = init_factors(&x, &cfg).unwrap();
            let b = init_factors(&x, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.is_nonneg());
            assert_eq!(a.w.shape(), (7, 3));
            assert_eq!(a.h.shape(), (5, 3));
        }
    }

    #[test]
    fn nndsvd_rank_one_constant() {
        let x = DenseMatrix::filled(6, 4, 0.8);
        let cfg = SolveConfig::new(1).with_init(InitMethod::Nndsvd);
        let f = init_factors(&x, &cfg).unwrap();
        for v in f.reconstruct().as_slice() {
            assert!((v - 0.8).abs() < 1e-9, "{v}");
        }
        // wide orientation goes through the other Gram matrix
        let x = DenseMatrix::filled(3, 9, 2.0);
        let f = init_factors(&x, &cfg).unwrap();
        for v in f.reconstruct().as_slice() {
            assert!((v - 2.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn hals_fixed_point() {
        let (x, mut f) = planted(8, 6, 2, 5);
        let mut reseed = Reseeder::new(0);
        // normalize first so the sweep's rescaling is a no-op
        normalize_columns(&mut f, &mut reseed);
        let before = f.clone();
        hals_step(&x, &mut f, &mut reseed).unwrap();
        for (a, b) in f.w.as_slice().iter().zip(before.w.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in f.h.as_slice().iter().zip(before.h.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let before = f.clone();
        fast_hals_step(&x, &mut f, &mut reseed).unwrap();
        for (a, b) in f.h.as_slice().iter().zip(before.h.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hals_step_decreases_objective() {
        let x = random(8, 6, 9);
        let mut f = init_factors(&x, &SolveConfig::new(2).with_seed(1)).unwrap();
        let mut reseed = Reseeder::new(1);
        let mut prev = objective(&x, &f).unwrap();
        for _ in 0..10 {
            hals_step(&x, &mut f, &mut reseed).unwrap();
            let cur = objective(&x, &f).unwrap();
            assert!(cur <= prev * (1.0 + 1e-12), "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn hals_rank_one_exact() {
        let u: Vec<f64> = (0..7).map(|i| 0.5 + i as f64 * 0.25).collect();
        let v: Vec<f64> = (0..5).map(|j| 1.0 + (j as f64).sin().abs()).collect();
        let x = DenseMatrix::from_fn(7, 5, |i, j| u[i] * v[j]);
        let mut f = init_factors(&x, &SolveConfig::new(1).with_seed(3)).unwrap();
        let mut reseed = Reseeder::new(3);
        for _ in 0..50 {
            hals_step(&x, &mut f, &mut reseed).unwrap();
        }
        let rre = x.sub(&f.reconstruct()).unwrap().frobenius_norm() / x.frobenius_norm();
        assert!(rre < 1e-8, "rre {rre}");
    }

    #[test]
    fn fast_hals_matches_hals() {
        let x = random(9, 7, 21);
        let f0 = init_factors(&x, &SolveConfig::new(3).with_seed(8)).unwrap();
        let (mut a, mut b) = (f0.clone(), f0);
        let (mut ra, mut rb) = (Reseeder::new(8), Reseeder::new(8));
        for _ in 0..5 {
            hals_step(&x, &mut a, &mut ra).unwrap();
            fast_hals_step(&x, &mut b, &mut rb).unwrap();
            for (p, q) in a.w.as_slice().iter().zip(b.w.as_slice()) {
                assert!((p - q).abs() < 1e-10);
            }
            for (p, q) in a.h.as_slice().iter().zip(b.h.as_slice()) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unit_columns_after_sweep() {
        let x = random(12, 10, 4);
        let mut f = init_factors(&x, &SolveConfig::new(4).with_seed(2)).unwrap();
        let mut reseed = Reseeder::new(2);
        for _ in 0..3 {
            fast_hals_step(&x, &mut f, &mut reseed).unwrap();
            for k in 0..4 {
                assert!((column_norm(&f.w, k) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_column_is_reseeded() {
        let x = random(6, 5, 4);
        let w = DenseMatrix::from_fn(6, 2, |i, k| if k == 1 { 0.0 } else { 0.3 + i as f64 * 0.1 });
        let h = random(5, 2, 12);
        let mut f = FactorPair::new(w, h).unwrap();
        let mut reseed = Reseeder::new(5);
        fast_hals_step(&x, &mut f, &mut reseed).unwrap();
        assert!(f.is_nonneg());
        assert!(column_norm(&f.w, 1) > ZERO_COLUMN_NORM);
        assert!(f.w.as_slice().iter().all(|v| v.is_finite()));
        assert!(f.h.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn solve_nmf_single_iteration() {
        let x = random(6, 5, 1);
        let fit = solve_nmf(&x, &SolveConfig::new(2).with_iterations(1)).unwrap();
        assert_eq!(fit.trajectory.len(), 1);
    }

    #[test]
    fn solve_nmf_planted_low_rank() {
        let (x, _) = planted(20, 15, 3, 77);
        let cfg = SolveConfig::new(3).with_seed(4).with_iterations(3000).with_tol(0.0);
        let fit = solve_nmf(&x, &cfg).unwrap();
        let rre = x.sub(&fit.factors.reconstruct()).unwrap().frobenius_norm() / x.frobenius_norm();
        assert!(rre < 1e-6, "rre {rre}");
    }

    #[test]
    fn solve_nmf_constant_rank_one() {
        let x = DenseMatrix::filled(10, 8, 0.4);
        let fit = solve_nmf(&x, &SolveConfig::new(1).with_seed(6).with_tol(0.0)).unwrap();
        let rre = x.sub(&fit.factors.reconstruct()).unwrap().frobenius_norm() / x.frobenius_norm();
        assert!(rre < 1e-8, "rre {rre}");
    }

    #[test]
    fn solve_nmf_trajectory_nonincreasing() {
        let x = random(15, 12, 31);
        let fit = solve_nmf(&x, &SolveConfig::new(3).with_seed(2).with_tol(0.0)).unwrap();
        assert_eq!(fit.trajectory.len(), 200);
        for pair in fit.trajectory.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn weighted_none_fixed_point() {
        let (x, f) = planted(8, 6, 2, 13);
        let cfg = SolveConfig::new(2).with_iterations(3).with_tol(0.0);
        let fit = solve_weighted_nmf(&x, &WeightScheme::none(), &cfg, Some(f.clone())).unwrap();
        for (a, b) in fit.factors.w.as_slice().iter().zip(f.w.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in fit.factors.h.as_slice().iter().zip(f.h.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_none_is_lee_seung() {
        let x = random(10, 8, 17);
        let cfg = SolveConfig::new(2).with_seed(5).with_iterations(1);
        let f0 = init_factors(&x, &cfg).unwrap();
        let fit = solve_weighted_nmf(&x, &WeightScheme::none(), &cfg, Some(f0.clone())).unwrap();

        // textbook form: W ← W ∘ XH ⊘ (W HᵀH), H ← H ∘ XᵀW ⊘ (H WᵀW)
        let mut w = f0.w.clone();
        let xh = x.matmul(&f0.h).unwrap();
        let den = w.matmul(&f0.h.t_matmul(&f0.h).unwrap()).unwrap();
        multiplicative_update(&mut w, &xh, &den, EPS);
        let mut h = f0.h.clone();
        let xtw = x.t_matmul(&w).unwrap();
        let den = h.matmul(&w.t_matmul(&w).unwrap()).unwrap();
        multiplicative_update(&mut h, &xtw, &den, EPS);

        for (a, b) in fit.factors.w.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fit.factors.h.as_slice().iter().zip(h.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_none_objective_nonincreasing() {
        let x = random(10, 8, 19);
        let cfg = SolveConfig::new(2).with_seed(9).with_iterations(100).with_tol(0.0);
        let fit = solve_weighted_nmf(&x, &WeightScheme::none(), &cfg, None).unwrap();
        let mut prev = fit.initial_objective;
        for &j in &fit.trajectory {
            assert!(j <= prev * (1.0 + 1e-12));
            prev = j;
        }
    }

    #[test]
    fn weighted_warm_start_at_convergence() {
        let x = random(10, 8, 23);
        let cfg = SolveConfig::new(2).with_seed(1).with_iterations(3000).with_tol(0.0);
        for kind in [WeightKind::None, WeightKind::Cim, WeightKind::Huber] {
            let scheme = WeightScheme::new(kind);
            let fit = solve_weighted_nmf(&x, &scheme, &cfg, None).unwrap();
            let again = SolveConfig { n_iter_max: 1, tol: 1e-6, ..cfg };
            let next = solve_weighted_nmf(&x, &scheme, &again, Some(fit.factors)).unwrap();
            let change = relative_change(next.initial_objective, next.trajectory[0]);
            assert!(change < 1e-6, "{kind}: {change}");
            assert!(next.converged);
        }
    }

    #[test]
    fn weighted_schemes_stay_nonnegative_and_finite() {
        let x = random(12, 9, 29);
        let cfg = SolveConfig::new(3).with_seed(3).with_iterations(30);
        for kind in WeightKind::ALL {
            let fit = solve_weighted_nmf(&x, &WeightScheme::new(kind), &cfg, None).unwrap();
            assert!(fit.factors.is_nonneg(), "{kind}");
            assert!(fit.trajectory.iter().all(|v| v.is_finite()), "{kind}");
        }
    }
}
