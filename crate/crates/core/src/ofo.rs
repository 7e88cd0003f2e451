//! The online feedback optimization law.
//!
//! Each controller step assembles a small projection QP from measured
//! outputs and model-based power sensitivities, solves it exactly, and
//! applies the integral update `u ← u + ν·w`. The controller touches the
//! belief model only through the power sensitivities; swapping the belief
//! changes numbers, never structure.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::compressor::{power, resistance_pi, CompressorError, GasProperties, PolyCoeffs};
use crate::gp::{estimated_efficiency, GpErrorModel};
use crate::qp::{self, QpError, QpProblem};

#[derive(Debug, Error)]
pub enum OfoError {
    /// The belief model produced a non-positive efficiency.
    #[error(transparent)]
    Model(#[from] CompressorError),
    /// The demand cannot be met within the flow bounds.
    #[error("demand cannot be met within the flow bounds")]
    InfeasibleDemand,
    /// The QP solver failed for a reason other than infeasibility.
    #[error("inner QP failed: {0}")]
    Solver(QpError),
}

impl From<QpError> for OfoError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::Infeasible => OfoError::InfeasibleDemand,
            other => OfoError::Solver(other),
        }
    }
}

/// Controller tuning and the input constraint box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfoConfig {
    /// Integral step size ν.
    pub nu: f64,
    /// Forward finite-difference step for the power sensitivities (kg s⁻¹).
    pub delta_fd: f64,
    /// Per-compressor minimal flows (kg s⁻¹).
    pub m_min: [f64; 3],
    /// Per-compressor maximal flows (kg s⁻¹).
    pub m_max: [f64; 3],
}

impl Default for OfoConfig {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            delta_fd: 1e-8,
            m_min: [60.0; 3],
            m_max: [125.0; 3],
        }
    }
}

/// Controller state: the commanded set-point flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfoState {
    pub u: [f64; 3],
}

/// Measured plant outputs, ordered flows then powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantMeasurement {
    /// Delivered flows (kg s⁻¹).
    pub m_c: [f64; 3],
    /// Per-compressor power (W).
    pub w: [f64; 3],
}

/// Model-based power derivatives at the measured flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBundle {
    /// dŴ/dm per compressor (W per kg s⁻¹).
    pub dw_dm: [f64; 3],
}

/// The controller's model of one compressor: the base polynomial plus the
/// GP error correction.
#[derive(Debug, Clone)]
pub struct BeliefModel {
    pub coeffs: PolyCoeffs,
    pub gp: GpErrorModel,
}

impl BeliefModel {
    /// A belief with no GP correction.
    pub fn bare(coeffs: PolyCoeffs) -> Self {
        Self {
            coeffs,
            gp: GpErrorModel::empty(),
        }
    }
}

/// Model-based power estimate `Ŵ = H(Π(m))·m / η̂(m, Π(m))` with the GP
/// correction included in η̂.
pub fn estimate_power(
    belief: &BeliefModel,
    gas: &GasProperties,
    resistance: (f64, f64),
    m: f64,
) -> Result<f64, OfoError> {
    let pi = resistance_pi(resistance.0, resistance.1, m);
    let eta = estimated_efficiency(&belief.coeffs, &belief.gp, m, pi);
    Ok(power(gas, m, pi, eta)?)
}

/// Forward finite difference `(f(m + δ) - f(m)) / δ`.
pub fn forward_diff<E>(f: impl Fn(f64) -> Result<f64, E>, m: f64, delta: f64) -> Result<f64, E> {
    Ok((f(m + delta)? - f(m)?) / delta)
}

/// Power sensitivity dŴ/dm at flow `m`, by forward difference of the
/// estimate with step `cfg.delta_fd`.
pub fn sensitivity(
    belief: &BeliefModel,
    gas: &GasProperties,
    resistance: (f64, f64),
    m: f64,
    cfg: &OfoConfig,
) -> Result<f64, OfoError> {
    forward_diff(
        |flow| estimate_power(belief, gas, resistance, flow),
        m,
        cfg.delta_fd,
    )
}

/// Assembles the projection QP over the update direction `w ∈ ℝ³`:
///
/// - objective `½‖w + g‖²` with `gᵢ = dŴᵢ/dmᵢ` (the only surviving entries
///   of the input-output sensitivity applied to the power-sum gradient);
/// - input rows keeping `u + ν·w` inside the flow box;
/// - two opposing demand rows driving `Σ(m_c + ν·w)` onto the demand.
pub fn build_qp(
    state: &OfoState,
    y: &PlantMeasurement,
    s: &SensitivityBundle,
    cfg: &OfoConfig,
    demand: f64,
) -> QpProblem {
    let g = DVector::from_column_slice(&s.dw_dm);
    let mut rows = DMatrix::zeros(8, 3);
    let mut bounds = DVector::zeros(8);
    for i in 0..3 {
        rows[(2 * i, i)] = cfg.nu;
        bounds[2 * i] = cfg.m_max[i] - state.u[i];
        rows[(2 * i + 1, i)] = -cfg.nu;
        bounds[2 * i + 1] = state.u[i] - cfg.m_min[i];
    }
    let total_flow: f64 = y.m_c.iter().sum();
    for j in 0..3 {
        rows[(6, j)] = -cfg.nu;
        rows[(7, j)] = cfg.nu;
    }
    bounds[6] = total_flow - demand;
    bounds[7] = demand - total_flow;
    QpProblem::new(g, rows, bounds)
}

/// One integral update `u ← u + ν·w` with `w` from the projection QP.
pub fn step(
    state: &OfoState,
    y: &PlantMeasurement,
    s: &SensitivityBundle,
    cfg: &OfoConfig,
    demand: f64,
) -> Result<OfoState, OfoError> {
    let problem = build_qp(state, y, s, cfg, demand);
    let sol = qp::solve(&problem)?;
    let mut u = state.u;
    for i in 0..3 {
        u[i] += cfg.nu * sol.w[i];
    }
    Ok(OfoState { u })
}
