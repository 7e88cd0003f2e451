//! Perfect-knowledge load-sharing benchmark.
//!
//! Minimizes the true total station power subject to the demand equality and
//! the per-compressor flow bounds. The solver is a coarse grid sweep over
//! the first two flows (the third is eliminated through the demand) followed
//! by a deterministic pattern-search refinement. Derivative-free and
//! trivially auditable, which matters because the other operating modes are
//! judged against it.

use thiserror::Error;

use crate::compressor::CompressorModel;

#[derive(Debug, Error, PartialEq)]
pub enum NlpError {
    #[error("demand {demand} kg/s outside the station range [{min}, {max}]")]
    InfeasibleDemand { demand: f64, min: f64, max: f64 },
}

/// The benchmark problem: true plant models and a demand to split.
#[derive(Debug, Clone)]
pub struct LoadSharingProblem {
    pub plant: [CompressorModel; 3],
    pub demand: f64,
}

/// Optimal flows and the noise-free total power there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpSolution {
    pub flows: [f64; 3],
    pub power: f64,
}

const GRID_STEP: f64 = 0.5;
const REFINE_START: f64 = 0.25;
const REFINE_STOP: f64 = 1e-7;

/// Solves the load-sharing problem by exhaustive search plus refinement.
///
/// Grid candidates or refinement moves whose efficiency evaluation
/// degenerates (non-positive) are treated as infinitely expensive rather
/// than aborting the solve.
pub fn solve_nlp(p: &LoadSharingProblem) -> Result<NlpSolution, NlpError> {
    let lo: [f64; 3] = [p.plant[0].m_min, p.plant[1].m_min, p.plant[2].m_min];
    let hi: [f64; 3] = [p.plant[0].m_max, p.plant[1].m_max, p.plant[2].m_max];
    let min_total: f64 = lo.iter().sum();
    let max_total: f64 = hi.iter().sum();
    if p.demand < min_total - 1e-9 || p.demand > max_total + 1e-9 {
        return Err(NlpError::InfeasibleDemand {
            demand: p.demand,
            min: min_total,
            max: max_total,
        });
    }

    let total = |m1: f64, m2: f64, m3: f64| -> f64 {
        let mut sum = 0.0;
        for (model, m) in p.plant.iter().zip([m1, m2, m3]) {
            match model.exact_power(m) {
                Ok(w) => sum += w,
                Err(_) => return f64::INFINITY,
            }
        }
        sum
    };

    // Coarse sweep over (m1, m2); m3 carries the demand residual.
    let mut best: Option<(f64, [f64; 3])> = None;
    for m1 in grid(lo[0], hi[0]) {
        for m2 in grid(lo[1], hi[1]) {
            let m3 = p.demand - m1 - m2;
            if m3 < lo[2] - 1e-9 || m3 > hi[2] + 1e-9 {
                continue;
            }
            let m3 = m3.clamp(lo[2], hi[2]);
            let w = total(m1, m2, m3);
            let candidate = (w, [m1, m2, m3]);
            best = Some(match best {
                None => candidate,
                Some(current) => pick(current, candidate),
            });
        }
    }
    let (mut best_w, mut flows) = best.expect("feasible demand always yields grid candidates");

    // Pattern-search refinement in the (m1, m2) plane, m3 slaved to the
    // demand. The diagonal moves exchange flow between the first two
    // compressors directly.
    let mut step = REFINE_START;
    while step > REFINE_STOP {
        let moves = [
            (step, 0.0),
            (-step, 0.0),
            (0.0, step),
            (0.0, -step),
            (step, -step),
            (-step, step),
        ];
        let mut improved = false;
        for (d1, d2) in moves {
            let m1 = flows[0] + d1;
            let m2 = flows[1] + d2;
            let m3 = p.demand - m1 - m2;
            if m1 < lo[0] || m1 > hi[0] || m2 < lo[1] || m2 > hi[1] || m3 < lo[2] || m3 > hi[2]
            {
                continue;
            }
            let w = total(m1, m2, m3);
            if w < best_w {
                best_w = w;
                flows = [m1, m2, m3];
                improved = true;
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok(NlpSolution {
        flows,
        power: best_w,
    })
}

/// Ascending grid over `[lo, hi]` with step [`GRID_STEP`], endpoint included.
fn grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut points = Vec::new();
    let mut m = lo;
    while m < hi - 1e-9 {
        points.push(m);
        m += GRID_STEP;
    }
    points.push(hi);
    points
}

/// Lexicographically smallest flows win among equal-power candidates.
fn pick(a: (f64, [f64; 3]), b: (f64, [f64; 3])) -> (f64, [f64; 3]) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}
