//! Shared oracles for the integration suites. Everything here is written
//! independently of the library's solution paths: brute-force enumeration,
//! dense inverses, symbolic derivatives.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use loadshare::compressor::{GasProperties, PolyCoeffs};
use loadshare::gp::{GpDataset, GpHyperParams};
use loadshare::qp::QpProblem;
use loadshare::rng;

/// Reference minimizer of `½‖w + g‖² s.t. G·w ≤ h` by enumerating every
/// candidate active set and solving the KKT equality system with a dense LU.
///
/// Returns `None` when no candidate subset yields a feasible point.
pub fn qp_brute_force(p: &QpProblem) -> Option<DVector<f64>> {
    let dim = p.g.len();
    let n_rows = p.constraints.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n_rows) {
        let rows: Vec<usize> = (0..n_rows).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() > dim {
            continue;
        }
        let s = rows.len();
        let mut kkt = DMatrix::zeros(dim + s, dim + s);
        let mut rhs = DVector::zeros(dim + s);
        for i in 0..dim {
            kkt[(i, i)] = 1.0;
            rhs[i] = -p.g[i];
        }
        for (slot, &row) in rows.iter().enumerate() {
            for j in 0..dim {
                kkt[(j, dim + slot)] = p.constraints[(row, j)];
                kkt[(dim + slot, j)] = p.constraints[(row, j)];
            }
            rhs[dim + slot] = p.bounds[row];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let w = sol.rows(0, dim).into_owned();
        let slack = &p.constraints * &w - &p.bounds;
        if slack.iter().any(|&v| v > 1e-9) {
            continue;
        }
        let objective = 0.5 * (&w + &p.g).norm_squared();
        match &best {
            Some((obj, _)) if *obj <= objective => {}
            _ => best = Some((objective, w)),
        }
    }
    best.map(|(_, w)| w)
}

/// Random projection QP shaped like the controller's subproblem: a box on
/// three variables plus one equality encoded as two opposing rows. Always
/// feasible by construction.
pub fn random_station_qp(seed: u64, index: u64) -> QpProblem {
    let key = rng::mix(seed, index);
    let draw = |c: u64| rng::uniform(key, c);

    let mut g = DVector::zeros(3);
    for i in 0..3 {
        g[i] = 20.0 * (draw(i as u64) - 0.5);
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for i in 0..3 {
        let a = 8.0 * (draw(10 + i as u64) - 0.5);
        let width = 0.5 + 6.0 * draw(20 + i as u64);
        lo[i] = a;
        hi[i] = a + width;
    }
    // A point strictly inside the box fixes a feasible equality level.
    let mut interior = [0.0; 3];
    for i in 0..3 {
        interior[i] = lo[i] + (hi[i] - lo[i]) * (0.2 + 0.6 * draw(30 + i as u64));
    }
    let level: f64 = interior.iter().sum();

    let mut rows = DMatrix::zeros(8, 3);
    let mut bounds = DVector::zeros(8);
    for i in 0..3 {
        rows[(2 * i, i)] = 1.0;
        bounds[2 * i] = hi[i];
        rows[(2 * i + 1, i)] = -1.0;
        bounds[2 * i + 1] = -lo[i];
    }
    for j in 0..3 {
        rows[(6, j)] = -1.0;
        rows[(7, j)] = 1.0;
    }
    bounds[6] = -level;
    bounds[7] = level;
    QpProblem::new(g, rows, bounds)
}

/// Dense-inverse reference for the negative log marginal likelihood.
pub fn nlml_dense_reference(data: &GpDataset, hyper: &GpHyperParams) -> f64 {
    let k = data.len();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cov[(i, j)] = loadshare::gp::kernel(hyper, data.inputs()[i], data.inputs()[j]);
            if i == j {
                cov[(i, j)] += hyper.sigma_n2.max(1e-10);
            }
        }
    }
    let inv = cov.clone().try_inverse().expect("reference inverse");
    let det = cov.determinant();
    let r = DVector::from_iterator(k, data.targets().iter().map(|d| d - hyper.beta));
    0.5 * r.dot(&(&inv * &r)) + 0.5 * det.ln() + 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal draw keyed on `(key, counter)` via Box–Muller.
pub fn gaussian(key: u64, counter: u64) -> f64 {
    let u1 = rng::uniform(key, 2 * counter).max(1e-12);
    let u2 = rng::uniform(key, 2 * counter + 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws one sample path of a GP with the given hyperparameters over `xs`,
/// including observation noise.
pub fn sample_gp_path(xs: &[[f64; 2]], hyper: &GpHyperParams, seed: u64) -> Vec<f64> {
    let k = xs.len();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cov[(i, j)] = loadshare::gp::kernel(hyper, xs[i], xs[j]);
            if i == j {
                cov[(i, j)] += 1e-12;
            }
        }
    }
    let chol = cov.cholesky().expect("sampling covariance");
    let z = DVector::from_iterator(k, (0..k).map(|i| gaussian(seed, i as u64)));
    let f = chol.l() * z;
    (0..k)
        .map(|i| {
            hyper.beta + f[i] + hyper.sigma_n2.sqrt() * gaussian(seed ^ 0x5eed, i as u64)
        })
        .collect()
}

/// Closed-form derivative of the model power curve
/// `W(m) = H(ρ1·m + ρ2)·m / η(m, ρ1·m + ρ2)` for a polynomial efficiency.
pub fn symbolic_power_derivative(
    coeffs: &PolyCoeffs,
    gas: &GasProperties,
    rho1: f64,
    rho2: f64,
    m: f64,
) -> f64 {
    let a = &coeffs.0;
    let phi = gas.phi();
    let scale = gas.z * gas.r * gas.t1 / (gas.m_w * phi);
    let pi = rho1 * m + rho2;
    let head = scale * (pi.powf(phi) - 1.0);
    let dhead = scale * phi * pi.powf(phi - 1.0) * rho1;
    let eta = loadshare::compressor::efficiency_poly(coeffs, m, pi);
    let deta =
        a[1] + a[2] * rho1 + a[3] * (pi + m * rho1) + 2.0 * a[4] * m + 2.0 * a[5] * pi * rho1;
    (dhead * m + head) / eta - head * m * deta / (eta * eta)
}
