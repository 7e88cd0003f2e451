//! Gaussian-process regression of the compressor efficiency error.
//!
//! The error between the measured efficiency and the controller's polynomial
//! belief is modelled over the input pair `(mass flow, pressure ratio)` with
//! a squared exponential covariance and a constant prior mean β. The kernel
//! divides the squared distance by `2θ_l` with `θ_l` unsquared, so `θ_l`
//! carries units of squared input distance.
//!
//! Hyperparameters `(β, θ_f², θ_l, σ_n²)` are picked by maximising the
//! marginal likelihood: β in closed form at every trial point, the rest by a
//! deterministic multi-start Nelder–Mead descent in log-space. Online
//! operation appends one observation at a time, skipping duplicates, and
//! refits on the whole history after every accepted observation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::compressor::{efficiency_poly, PolyCoeffs};

/// Lower bound kept on the noise variance so the kernel system stays
/// factorizable.
pub const SIGMA_FLOOR: f64 = 1e-10;
/// Largest diagonal jitter tried before giving up on a factorization.
const JITTER_MAX: f64 = 1e-4;
/// Two inputs closer than this (Euclidean over (m, Π)) count as the same point.
pub const DUPLICATE_X_TOL: f64 = 1e-6;
/// Two error values closer than this count as the same observation.
pub const DUPLICATE_DELTA_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    /// The jittered kernel system is still not positive definite. The
    /// hyperparameter search treats this as an infinite objective.
    #[error("kernel matrix is not positive definite even with jitter")]
    FactorizationFailure,
    /// Every input in the dataset coincides within the duplicate tolerance,
    /// so no length scale is identifiable.
    #[error("all {0} training inputs coincide; cannot fit hyperparameters")]
    DegenerateData(usize),
    /// Fitting needs at least two observations.
    #[error("need at least 2 observations to fit, got {0}")]
    NotEnoughData(usize),
}

/// Kernel and noise hyperparameters plus the constant prior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperParams {
    /// Prior mean of the error.
    pub beta: f64,
    /// Signal variance θ_f².
    pub theta_f2: f64,
    /// Length-scale parameter θ_l (units of squared input distance).
    pub theta_l: f64,
    /// Noise variance σ_n².
    pub sigma_n2: f64,
}

impl Default for GpHyperParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            theta_f2: 1e-2,
            theta_l: 1e2,
            sigma_n2: 1e-6,
        }
    }
}

/// Squared exponential covariance `θ_f²·exp(-‖x-x'‖² / (2θ_l))`.
pub fn kernel(hyper: &GpHyperParams, x: [f64; 2], x2: [f64; 2]) -> f64 {
    let d0 = x[0] - x2[0];
    let d1 = x[1] - x2[1];
    hyper.theta_f2 * (-(d0 * d0 + d1 * d1) / (2.0 * hyper.theta_l)).exp()
}

/// One efficiency measurement paired with the belief model's value at the
/// same operating point. The stored error is always the difference of the
/// two, never supplied independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorObservation {
    pub m: f64,
    pub pi: f64,
    pub eta_measured: f64,
    pub eta_model: f64,
}

impl ErrorObservation {
    pub fn new(m: f64, pi: f64, eta_measured: f64, eta_model: f64) -> Self {
        Self {
            m,
            pi,
            eta_measured,
            eta_model,
        }
    }

    /// Measured minus modelled efficiency.
    pub fn delta(&self) -> f64 {
        self.eta_measured - self.eta_model
    }

    pub fn input(&self) -> [f64; 2] {
        [self.m, self.pi]
    }
}

/// Ordered training set of input pairs and observed errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GpDataset {
    x: Vec<[f64; 2]>,
    delta: Vec<f64>,
}

impl GpDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(x: Vec<[f64; 2]>, delta: Vec<f64>) -> Self {
        assert_eq!(x.len(), delta.len(), "input/target length mismatch");
        Self { x, delta }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn inputs(&self) -> &[[f64; 2]] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.delta
    }

    pub fn push(&mut self, x: [f64; 2], delta: f64) {
        self.x.push(x);
        self.delta.push(delta);
    }

    /// True when some stored input lies within the duplicate tolerance of `x`.
    pub fn contains_input(&self, x: [f64; 2]) -> bool {
        self.x.iter().any(|p| {
            let d0 = p[0] - x[0];
            let d1 = p[1] - x[1];
            (d0 * d0 + d1 * d1).sqrt() <= DUPLICATE_X_TOL
        })
    }

    /// True when some stored error value matches `delta` within tolerance.
    pub fn contains_delta(&self, delta: f64) -> bool {
        self.delta.iter().any(|d| (d - delta).abs() <= DUPLICATE_DELTA_TOL)
    }

    fn squared_distances(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |i, j| {
            let d0 = self.x[i][0] - self.x[j][0];
            let d1 = self.x[i][1] - self.x[j][1];
            d0 * d0 + d1 * d1
        })
    }
}

/// Cholesky factorization of `K + (σ_n² + jitter)·I` with an escalating
/// jitter ladder.
fn factorize(
    sq_dist: &DMatrix<f64>,
    hyper: &GpHyperParams,
) -> Result<Cholesky<f64, Dyn>, GpError> {
    let k = sq_dist.nrows();
    let sigma2 = hyper.sigma_n2.max(SIGMA_FLOOR);
    let base = DMatrix::from_fn(k, k, |i, j| {
        let cov = hyper.theta_f2 * (-sq_dist[(i, j)] / (2.0 * hyper.theta_l)).exp();
        if i == j {
            cov + sigma2
        } else {
            cov
        }
    });
    if let Some(chol) = base.clone().cholesky() {
        return Ok(chol);
    }
    let mut jitter = SIGMA_FLOOR;
    while jitter <= JITTER_MAX {
        let mut jittered = base.clone();
        for i in 0..k {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(GpError::FactorizationFailure)
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Negative log marginal likelihood
/// `½ rᵀ(K+σ²I)⁻¹ r + ½ log|K+σ²I| + (k/2)·log 2π` with `r = Δ - β·1`.
pub fn neg_log_marginal_likelihood(data: &GpDataset, hyper: &GpHyperParams) -> Result<f64, GpError> {
    let k = data.len();
    assert!(k >= 1, "likelihood needs at least one observation");
    let chol = factorize(&data.squared_distances(), hyper)?;
    let residual = DVector::from_iterator(k, data.targets().iter().map(|d| d - hyper.beta));
    let alpha = chol.solve(&residual);
    Ok(0.5 * residual.dot(&alpha)
        + 0.5 * log_det(&chol)
        + 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Generalized-least-squares prior mean for fixed kernel hyperparameters:
/// `β = (1ᵀ S⁻¹ Δ) / (1ᵀ S⁻¹ 1)`.
fn closed_form_beta(chol: &Cholesky<f64, Dyn>, targets: &[f64]) -> f64 {
    let k = targets.len();
    let ones = DVector::from_element(k, 1.0);
    let d = DVector::from_column_slice(targets);
    let s_inv_ones = chol.solve(&ones);
    let denom = ones.dot(&s_inv_ones);
    if denom <= 0.0 {
        // Numerically defensive path; an SPD solve keeps this positive.
        return d.mean();
    }
    d.dot(&s_inv_ones) / denom
}

/// Multi-start grid used by [`fit`]: all combinations are tried as
/// Nelder–Mead starting points, in this order.
const FIT_GRID_THETA_F2: [f64; 3] = [1e-4, 1e-2, 1.0];
const FIT_GRID_THETA_L: [f64; 3] = [1e1, 1e2, 1e4];
const FIT_GRID_SIGMA_N2: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Bounds on the log-space search, wide enough to never bind in practice.
const LOG_LO: f64 = -27.6; // ≈ ln 1e-12
const LOG_HI: f64 = 27.6; // ≈ ln 1e12

/// Fits hyperparameters by maximising the marginal likelihood.
///
/// β is profiled out in closed form at every objective evaluation; the
/// remaining three parameters are searched in log-space with Nelder–Mead
/// from every point of a fixed 3×3×3 grid, keeping the best outcome. The
/// whole procedure is deterministic.
pub fn fit(data: &GpDataset) -> Result<GpHyperParams, GpError> {
    let k = data.len();
    if k < 2 {
        return Err(GpError::NotEnoughData(k));
    }
    let sq_dist = data.squared_distances();
    let max_sq_dist = sq_dist.max();
    if max_sq_dist.sqrt() <= DUPLICATE_X_TOL {
        return Err(GpError::DegenerateData(k));
    }

    // Objective over log-parameters, returning the profiled likelihood and
    // the profiled β. Factorization failures count as +∞.
    let eval = |p: &[f64; 3]| -> (f64, f64) {
        let hyper = GpHyperParams {
            beta: 0.0,
            theta_f2: p[0].clamp(LOG_LO, LOG_HI).exp(),
            theta_l: p[1].clamp(LOG_LO, LOG_HI).exp(),
            sigma_n2: p[2].clamp(LOG_LO, LOG_HI).exp().max(SIGMA_FLOOR),
        };
        let chol = match factorize(&sq_dist, &hyper) {
            Ok(c) => c,
            Err(_) => return (f64::INFINITY, 0.0),
        };
        let beta = closed_form_beta(&chol, data.targets());
        let residual =
            DVector::from_iterator(k, data.targets().iter().map(|d| d - beta));
        let alpha = chol.solve(&residual);
        let nll = 0.5 * residual.dot(&alpha)
            + 0.5 * log_det(&chol)
            + 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln();
        (nll, beta)
    };

    let mut best: Option<([f64; 3], f64)> = None;
    for &tf2 in &FIT_GRID_THETA_F2 {
        for &tl in &FIT_GRID_THETA_L {
            for &s2 in &FIT_GRID_SIGMA_N2 {
                let start = [tf2.ln(), tl.ln(), s2.ln()];
                let (point, value) = nelder_mead(&start, |p| eval(p).0);
                if best.is_none_or(|(_, b)| value < b) {
                    best = Some((point, value));
                }
            }
        }
    }
    let (point, value) = best.expect("grid is non-empty");
    if !value.is_finite() {
        return Err(GpError::FactorizationFailure);
    }
    let (_, beta) = eval(&point);
    Ok(GpHyperParams {
        beta,
        theta_f2: point[0].clamp(LOG_LO, LOG_HI).exp(),
        theta_l: point[1].clamp(LOG_LO, LOG_HI).exp(),
        sigma_n2: point[2].clamp(LOG_LO, LOG_HI).exp().max(SIGMA_FLOOR),
    })
}

/// Deterministic Nelder–Mead descent on a 3-dimensional objective.
fn nelder_mead(start: &[f64; 3], mut f: impl FnMut(&[f64; 3]) -> f64) -> ([f64; 3], f64) {
    const MAX_ITER: usize = 80;
    const STEP: f64 = 1.151; // half a decade in natural log
    const F_TOL: f64 = 1e-9;

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((*start, f(start)));
    for i in 0..3 {
        let mut v = *start;
        v[i] += STEP;
        simplex.push((v, f(&v)));
    }

    for _ in 0..MAX_ITER {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[3].1 - simplex[0].1;
        if spread.abs() < F_TOL * (1.0 + simplex[0].1.abs()) {
            break;
        }

        let mut centroid = [0.0; 3];
        for (v, _) in &simplex[..3] {
            for i in 0..3 {
                centroid[i] += v[i] / 3.0;
            }
        }
        let worst = simplex[3];
        let reflect = |t: f64| {
            let mut v = [0.0; 3];
            for i in 0..3 {
                v[i] = centroid[i] + t * (centroid[i] - worst.0[i]);
            }
            v
        };

        let xr = reflect(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = reflect(2.0);
            let fe = f(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let xc = reflect(-0.5);
            let fc = f(&xc);
            if fc < worst.1 {
                simplex[3] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    for i in 0..3 {
                        entry.0[i] = anchor[i] + 0.5 * (entry.0[i] - anchor[i]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    (simplex[0].0, simplex[0].1)
}

/// Cached posterior state: factorization of the kernel system and the solve
/// against the centred targets.
#[derive(Debug, Clone)]
struct Posterior {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// GP model of the efficiency error of one compressor.
///
/// Immutable: [`GpErrorModel::adapt`] returns a new model, so reads can run
/// concurrently with updates elsewhere. A freshly seeded model (one
/// observation, no fit yet) keeps the prior predictor.
#[derive(Debug, Clone)]
pub struct GpErrorModel {
    data: GpDataset,
    hyper: GpHyperParams,
    posterior: Option<Posterior>,
}

impl Default for GpErrorModel {
    fn default() -> Self {
        Self::empty()
    }
}

impl GpErrorModel {
    /// Model with no data: predicts the prior mean (zero) everywhere.
    pub fn empty() -> Self {
        Self {
            data: GpDataset::new(),
            hyper: GpHyperParams::default(),
            posterior: None,
        }
    }

    /// Builds the posterior for a given dataset and fixed hyperparameters.
    pub fn with_hyper(data: GpDataset, hyper: GpHyperParams) -> Result<Self, GpError> {
        let posterior = if data.is_empty() {
            None
        } else {
            Some(build_posterior(&data, &hyper)?)
        };
        Ok(Self {
            data,
            hyper,
            posterior,
        })
    }

    /// Fits hyperparameters to `data` and builds the posterior.
    pub fn fitted(data: GpDataset) -> Result<Self, GpError> {
        let hyper = fit(&data)?;
        Self::with_hyper(data, hyper)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn hyper(&self) -> &GpHyperParams {
        &self.hyper
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.data
    }

    /// Posterior mean of the error at `x`; the prior mean when no posterior
    /// has been built yet.
    pub fn predict_mean(&self, x: [f64; 2]) -> f64 {
        match &self.posterior {
            None => self.hyper.beta,
            Some(post) => {
                let k_star = self.kernel_vector(x);
                self.hyper.beta + k_star.dot(&post.alpha)
            }
        }
    }

    /// Posterior variance of the error at `x`, clamped at zero from below.
    pub fn predict_var(&self, x: [f64; 2]) -> f64 {
        match &self.posterior {
            None => self.hyper.theta_f2,
            Some(post) => {
                let k_star = self.kernel_vector(x);
                let solved = post.chol.solve(&k_star);
                (self.hyper.theta_f2 - k_star.dot(&solved)).max(0.0)
            }
        }
    }

    /// One step of the online adaptation:
    ///
    /// - empty model: seed the dataset with the observation and keep the
    ///   prior predictor;
    /// - duplicate observation (input within [`DUPLICATE_X_TOL`] of a stored
    ///   row, or error within [`DUPLICATE_DELTA_TOL`] of a stored value):
    ///   return the model unchanged;
    /// - otherwise append, refit on the whole history and rebuild the
    ///   factorization.
    pub fn adapt(&self, obs: &ErrorObservation) -> Result<Self, GpError> {
        let delta = obs.delta();
        if self.data.is_empty() {
            let mut data = GpDataset::new();
            data.push(obs.input(), delta);
            return Ok(Self {
                data,
                hyper: self.hyper,
                posterior: None,
            });
        }
        if self.data.contains_input(obs.input()) || self.data.contains_delta(delta) {
            return Ok(self.clone());
        }
        let mut data = self.data.clone();
        data.push(obs.input(), delta);
        Self::fitted(data)
    }

    fn kernel_vector(&self, x: [f64; 2]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.inputs().iter().map(|p| kernel(&self.hyper, x, *p)),
        )
    }
}

fn build_posterior(data: &GpDataset, hyper: &GpHyperParams) -> Result<Posterior, GpError> {
    let chol = factorize(&data.squared_distances(), hyper)?;
    let residual = DVector::from_iterator(
        data.len(),
        data.targets().iter().map(|d| d - hyper.beta),
    );
    let alpha = chol.solve(&residual);
    Ok(Posterior { chol, alpha })
}

/// Belief efficiency with the GP correction:
/// base polynomial at `(m, pi)` plus the posterior mean of the error there.
pub fn estimated_efficiency(base: &PolyCoeffs, model: &GpErrorModel, m: f64, pi: f64) -> f64 {
    efficiency_poly(base, m, pi) + model.predict_mean([m, pi])
}
