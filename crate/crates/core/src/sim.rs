//! Closed-loop discrete-time simulation of the compressor station.
//!
//! Each controller step reads the demand, measures the plant, optionally
//! feeds the measurements to the per-compressor GP adaptation, estimates the
//! power sensitivities at the measured flows and applies one OFO update. The
//! benchmark mode instead re-solves the perfect-knowledge load-sharing
//! problem whenever the demand changes and holds the optimum.

use rayon::prelude::*;
use thiserror::Error;

use crate::compressor::{
    apply_mismatch, efficiency_poly, reduced_model, CompressorError, CompressorModel,
    EfficiencyMap, GasProperties, MapKind, ModelOrder, PolyCoeffs, SinCoeffs, POLY_DEFAULT,
    RESISTANCE_DEFAULT, SIN_DEFAULT, STATION_SIZE,
};
use crate::gp::{ErrorObservation, GpError, GpErrorModel};
use crate::nlp::{solve_nlp, LoadSharingProblem, NlpError};
use crate::ofo::{self, BeliefModel, OfoConfig, OfoError, OfoState, PlantMeasurement, SensitivityBundle};
use crate::rng;

/// Mass flows at which the GP learning progress is probed (kg s⁻¹).
pub const PROBE_FLOWS: [f64; 3] = [70.0, 95.0, 120.0];

/// A probe flow counts as visited when the compressor's measured flow came
/// within this distance of it at least once (kg s⁻¹).
pub const PROBE_VISIT_RADIUS: f64 = 2.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("demand infeasible at t = {time_h} h")]
    InfeasibleDemand { time_h: f64, source: NlpError },
    #[error("controller failed at t = {time_h} h")]
    Controller { time_h: f64, source: OfoError },
    #[error("adaptation failed at t = {time_h} h")]
    Adaptation { time_h: f64, source: GpError },
    #[error("plant evaluation failed at t = {time_h} h")]
    Plant { time_h: f64, source: CompressorError },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// The four operating modes of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Re-solve the perfect-knowledge problem at every demand change.
    NlpBenchmark,
    /// OFO with the true polynomial maps as belief.
    OfoPerfect,
    /// OFO with mismatched belief, no learning.
    OfoMismatchNoAdapt,
    /// OFO with mismatched belief and online GP adaptation.
    OfoMismatchAdapt,
}

/// Functional form of the plant-truth efficiency maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthMapKind {
    Polynomial,
    Sinusoidal,
}

/// One simulation case: operating mode, mismatch configuration and loop
/// timing. Plant constants live in [`StationParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub truth_map: TruthMapKind,
    /// Half-width of the uniform noise on measured efficiencies.
    pub truth_noise: f64,
    /// Structural order of the belief polynomials.
    pub belief_order: ModelOrder,
    pub horizon_h: f64,
    pub demand_period_h: f64,
    pub controller_step_h: f64,
    pub adapt_period_h: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mode: Mode::OfoMismatchAdapt,
            truth_map: TruthMapKind::Polynomial,
            truth_noise: 0.0,
            belief_order: ModelOrder::Quadratic,
            horizon_h: 5000.0,
            demand_period_h: 25.0,
            controller_step_h: 1.0,
            adapt_period_h: 25.0,
            seed: 1,
        }
    }
}

/// Physical constants of the station and the controller tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct StationParams {
    pub gas: GasProperties,
    /// Linear resistance curve `(ρ1, ρ2)`, shared by all compressors.
    pub resistance: (f64, f64),
    pub m_min: [f64; STATION_SIZE],
    pub m_max: [f64; STATION_SIZE],
    /// True polynomial efficiency rows.
    pub poly: [PolyCoeffs; STATION_SIZE],
    /// Sinusoidal efficiency rows used when the truth is sinusoidal.
    pub sin: [SinCoeffs; STATION_SIZE],
    /// Scaling factors building the mismatched belief rows out of donor
    /// true rows: `belief[i] = scale[i] · poly[donor[i]]`.
    pub mismatch_donor: [usize; STATION_SIZE],
    pub mismatch_scale: [f64; STATION_SIZE],
    /// OFO integral step size ν.
    pub nu: f64,
    /// Forward-difference step δ for the power sensitivities.
    pub delta_fd: f64,
    /// Flow-tracking lag time constant (h); 0 means the plant settles
    /// within one controller step.
    pub flow_lag_tau_h: f64,
}

impl Default for StationParams {
    fn default() -> Self {
        Self {
            gas: GasProperties::default(),
            resistance: RESISTANCE_DEFAULT,
            m_min: [60.0; STATION_SIZE],
            m_max: [125.0; STATION_SIZE],
            poly: POLY_DEFAULT,
            sin: SIN_DEFAULT,
            mismatch_donor: [2, 0, 0],
            mismatch_scale: [0.95, 0.8, 0.8],
            nu: 1e-3,
            delta_fd: 1e-8,
            flow_lag_tau_h: 0.0,
        }
    }
}

impl StationParams {
    /// The belief polynomials for the mismatch modes: donor rows scaled,
    /// then truncated to the requested model order.
    pub fn mismatched_beliefs(&self, order: ModelOrder) -> [PolyCoeffs; STATION_SIZE] {
        let mismatched = if self.mismatch_donor == [2, 0, 0]
            && self.mismatch_scale == [0.95, 0.8, 0.8]
        {
            apply_mismatch(&self.poly)
        } else {
            let mut rows = [PolyCoeffs([0.0; 6]); STATION_SIZE];
            for i in 0..STATION_SIZE {
                rows[i] = crate::compressor::scale_coeffs(
                    &self.poly[self.mismatch_donor[i]],
                    self.mismatch_scale[i],
                );
            }
            rows
        };
        mismatched.map(|c| reduced_model(&c, order))
    }

    /// Builds the true plant models for a scenario.
    pub fn plant(&self, scenario: &Scenario) -> Result<[CompressorModel; STATION_SIZE], SimError> {
        let mut models = Vec::with_capacity(STATION_SIZE);
        for i in 0..STATION_SIZE {
            let kind = match scenario.truth_map {
                TruthMapKind::Polynomial => MapKind::Polynomial(self.poly[i]),
                TruthMapKind::Sinusoidal => MapKind::Sinusoidal(self.sin[i]),
            };
            let map = if scenario.truth_noise > 0.0 {
                EfficiencyMap::noisy(kind, scenario.truth_noise, scenario.seed, i)
            } else {
                EfficiencyMap::exact(kind)
            };
            let model = CompressorModel::new(
                map,
                self.resistance.0,
                self.resistance.1,
                self.m_min[i],
                self.m_max[i],
                self.gas,
            )
            .map_err(|source| SimError::Plant {
                time_h: 0.0,
                source,
            })?;
            models.push(model);
        }
        Ok(models.try_into().expect("fixed station size"))
    }

    pub fn ofo_config(&self) -> OfoConfig {
        OfoConfig {
            nu: self.nu,
            delta_fd: self.delta_fd,
            m_min: self.m_min,
            m_max: self.m_max,
        }
    }
}

/// Piecewise-constant demand, segments ordered by strictly increasing start.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    segments: Vec<(f64, f64)>,
}

/// Default range of the generated demand, chosen so the per-compressor
/// optima sweep past all three probe flows over a long run.
pub const DEMAND_RANGE_DEFAULT: (f64, f64) = (190.0, 365.0);
/// Largest demand change between consecutive segments (kg s⁻¹).
pub const DEMAND_MAX_STEP_DEFAULT: f64 = 40.0;

impl DemandProfile {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if segments.is_empty() {
            return Err(SimError::InvalidScenario("empty demand profile".into()));
        }
        if segments[0].0 != 0.0 {
            return Err(SimError::InvalidScenario(
                "first demand segment must start at t = 0".into(),
            ));
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SimError::InvalidScenario(
                "demand segment starts must be strictly increasing".into(),
            ));
        }
        Ok(Self { segments })
    }

    /// Seeded random-walk generator: a new value every `period_h`, uniform
    /// steps of at most `max_step`, clamped to `range`.
    pub fn generate(
        seed: u64,
        horizon_h: f64,
        period_h: f64,
        range: (f64, f64),
        max_step: f64,
    ) -> Self {
        let key = rng::mix(seed, 0x44_45_4d_41); // demand stream
        let (lo, hi) = range;
        let mut segments = Vec::new();
        let mut level = lo + (hi - lo) * rng::uniform(key, 0);
        let mut start = 0.0;
        let mut counter = 1u64;
        while start < horizon_h {
            segments.push((start, level));
            level = (level + max_step * rng::uniform_signed(key, counter)).clamp(lo, hi);
            counter += 1;
            start += period_h;
        }
        Self { segments }
    }

    pub fn demand_at(&self, t: f64) -> f64 {
        let mut current = self.segments[0].1;
        for &(start, demand) in &self.segments {
            if start <= t + 1e-9 {
                current = demand;
            } else {
                break;
            }
        }
        current
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Fails when some segment demands more than the station can deliver.
    pub fn validate(&self, min_total: f64, max_total: f64) -> Result<(), SimError> {
        for &(start, demand) in &self.segments {
            if demand < min_total - 1e-9 || demand > max_total + 1e-9 {
                return Err(SimError::InfeasibleDemand {
                    time_h: start,
                    source: NlpError::InfeasibleDemand {
                        demand,
                        min: min_total,
                        max: max_total,
                    },
                });
            }
        }
        Ok(())
    }
}

/// One recorded controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_h: f64,
    pub demand: f64,
    /// Commanded set-points at measurement time.
    pub u: [f64; 3],
    /// Delivered flows.
    pub m_c: [f64; 3],
    /// Measured per-compressor power (W).
    pub w: [f64; 3],
    pub w_total: f64,
}

/// GP state snapshot taken after one adaptation event.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSnapshot {
    pub time_h: f64,
    /// Whether this event actually refit the hyperparameters (false for the
    /// seeding event and duplicate skips).
    pub refit: bool,
    /// Dataset size after the event.
    pub k: usize,
    /// Posterior mean of the error at the probe flows.
    pub probe_prediction: [f64; 3],
    /// Dataset dump (`m, pi, delta` rows under a hyperparameter header),
    /// captured only when requested.
    pub dataset_dump: Option<String>,
}

/// Full record of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub rows: Vec<TraceRow>,
    /// Adaptation history per compressor; empty for non-adaptive modes.
    pub gp_history: [Vec<GpSnapshot>; 3],
    /// Closest approach of each compressor's measured flow to each probe.
    pub probe_distance: [[f64; 3]; 3],
}

/// GP learning metrics per compressor and probe flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpLearningMetrics {
    /// Mean absolute prediction error over all adaptation snapshots.
    pub mae: [[f64; 3]; 3],
    /// Prediction error of the first snapshot.
    pub delta_init: [[f64; 3]; 3],
    /// Prediction error of the last snapshot.
    pub delta_fin: [[f64; 3]; 3],
    /// Whether the compressor's flow came within [`PROBE_VISIT_RADIUS`]
    /// of the probe during the run.
    pub visited: [[bool; 3]; 3],
    /// The noise-free true error at each probe.
    pub true_error: [[f64; 3]; 3],
}

/// Scalar results of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    /// Trapezoidal integral of the station power over the horizon (J).
    pub integrated_power_j: f64,
    /// Mean absolute demand violation (kg s⁻¹).
    pub mae_demand: f64,
    /// Mean demand over the horizon (kg s⁻¹).
    pub mean_demand: f64,
    pub gp: Option<GpLearningMetrics>,
}

/// Optional captures that are too heavy to record by default.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Store a dataset dump in every adaptation snapshot.
    pub capture_gp_datasets: bool,
}

/// Steady-state (or first-order-lag) plant response.
struct Plant {
    models: [CompressorModel; STATION_SIZE],
    flows: [f64; STATION_SIZE],
    /// Fraction of the remaining set-point error closed per step;
    /// 1.0 reproduces the steady-state assumption `m_c = u`.
    settle: f64,
}

struct PlantOutputs {
    measurement: PlantMeasurement,
    pi: [f64; 3],
    eta: [f64; 3],
}

impl Plant {
    fn new(models: [CompressorModel; STATION_SIZE], u0: [f64; 3], tau_h: f64, dt_h: f64) -> Self {
        let settle = if tau_h <= 0.0 {
            1.0
        } else {
            1.0 - (-dt_h / tau_h).exp()
        };
        Self {
            models,
            flows: u0,
            settle,
        }
    }

    fn respond(&mut self, u: [f64; 3], step: u64, time_h: f64) -> Result<PlantOutputs, SimError> {
        let mut m_c = [0.0; 3];
        let mut pi = [0.0; 3];
        let mut eta = [0.0; 3];
        let mut w = [0.0; 3];
        for i in 0..STATION_SIZE {
            if self.settle == 1.0 {
                self.flows[i] = u[i];
            } else {
                self.flows[i] += self.settle * (u[i] - self.flows[i]);
            }
            let m = self.flows[i];
            let p = self.models[i].resistance_pi(m);
            let e = self.models[i].efficiency.true_efficiency(m, p, step);
            let power = crate::compressor::power(&self.models[i].gas, m, p, e)
                .map_err(|source| SimError::Plant { time_h, source })?;
            m_c[i] = m;
            pi[i] = p;
            eta[i] = e;
            w[i] = power;
        }
        Ok(PlantOutputs {
            measurement: PlantMeasurement { m_c, w },
            pi,
            eta,
        })
    }
}

/// Runs one scenario over a demand profile.
pub fn run_scenario(
    scenario: &Scenario,
    params: &StationParams,
    profile: &DemandProfile,
) -> Result<(SimulationTrace, RunMetrics), SimError> {
    run_scenario_with_options(scenario, params, profile, RunOptions::default())
}

pub fn run_scenario_with_options(
    scenario: &Scenario,
    params: &StationParams,
    profile: &DemandProfile,
    opts: RunOptions,
) -> Result<(SimulationTrace, RunMetrics), SimError> {
    validate(scenario, params)?;
    let min_total: f64 = params.m_min.iter().sum();
    let max_total: f64 = params.m_max.iter().sum();
    profile.validate(min_total, max_total)?;

    let steps = (scenario.horizon_h / scenario.controller_step_h).round() as u64;
    let adapt_every = (scenario.adapt_period_h / scenario.controller_step_h).round() as u64;
    let dt_h = scenario.controller_step_h;

    let plant_models = params.plant(scenario)?;
    let cfg = params.ofo_config();

    // Initial set-points: equal split of the first demand, clipped to bounds.
    let first_demand = profile.demand_at(0.0);
    let mut u = [0.0; 3];
    for i in 0..3 {
        u[i] = (first_demand / 3.0).clamp(params.m_min[i], params.m_max[i]);
    }

    let belief_coeffs: Option<[PolyCoeffs; 3]> = match scenario.mode {
        Mode::NlpBenchmark => None,
        Mode::OfoPerfect => Some(params.poly),
        Mode::OfoMismatchNoAdapt | Mode::OfoMismatchAdapt => {
            Some(params.mismatched_beliefs(scenario.belief_order))
        }
    };
    let mut beliefs: Option<[BeliefModel; 3]> =
        belief_coeffs.map(|rows| rows.map(BeliefModel::bare));

    let mut plant = Plant::new(plant_models, u, params.flow_lag_tau_h, dt_h);
    let mut rows: Vec<TraceRow> = Vec::with_capacity(steps as usize);
    let mut gp_history: [Vec<GpSnapshot>; 3] = Default::default();
    let mut probe_distance = [[f64::INFINITY; 3]; 3];
    let mut last_demand = f64::NAN;

    for k in 0..steps {
        let time_h = k as f64 * dt_h;
        let demand = profile.demand_at(time_h);

        if scenario.mode == Mode::NlpBenchmark && demand != last_demand {
            let sol = solve_nlp(&LoadSharingProblem {
                plant: plant_models,
                demand,
            })
            .map_err(|source| SimError::InfeasibleDemand { time_h, source })?;
            u = sol.flows;
        }
        last_demand = demand;

        let outputs = plant.respond(u, k, time_h)?;

        for i in 0..3 {
            for (p, probe) in PROBE_FLOWS.iter().enumerate() {
                let dist = (outputs.measurement.m_c[i] - probe).abs();
                if dist < probe_distance[i][p] {
                    probe_distance[i][p] = dist;
                }
            }
        }

        if scenario.mode == Mode::OfoMismatchAdapt && k % adapt_every == 0 {
            let beliefs = beliefs.as_mut().expect("adaptive mode has beliefs");
            for i in 0..3 {
                let model_eta = efficiency_poly(
                    &beliefs[i].coeffs,
                    outputs.measurement.m_c[i],
                    outputs.pi[i],
                );
                let obs = ErrorObservation::new(
                    outputs.measurement.m_c[i],
                    outputs.pi[i],
                    outputs.eta[i],
                    model_eta,
                );
                let before = beliefs[i].gp.len();
                let was_empty = beliefs[i].gp.is_empty();
                beliefs[i].gp = beliefs[i]
                    .gp
                    .adapt(&obs)
                    .map_err(|source| SimError::Adaptation { time_h, source })?;
                let refit = !was_empty && beliefs[i].gp.len() > before;
                let mut probe_prediction = [0.0; 3];
                for (p, probe) in PROBE_FLOWS.iter().enumerate() {
                    let pi = crate::compressor::resistance_pi(
                        params.resistance.0,
                        params.resistance.1,
                        *probe,
                    );
                    probe_prediction[p] = beliefs[i].gp.predict_mean([*probe, pi]);
                }
                let dataset_dump =
                    (opts.capture_gp_datasets && refit).then(|| dataset_dump(&beliefs[i].gp));
                gp_history[i].push(GpSnapshot {
                    time_h,
                    refit,
                    k: beliefs[i].gp.len(),
                    probe_prediction,
                    dataset_dump,
                });
            }
        }

        if let Some(beliefs) = beliefs.as_ref() {
            let mut dw_dm = [0.0; 3];
            for i in 0..3 {
                dw_dm[i] = ofo::sensitivity(
                    &beliefs[i],
                    &params.gas,
                    params.resistance,
                    outputs.measurement.m_c[i],
                    &cfg,
                )
                .map_err(|source| SimError::Controller { time_h, source })?;
            }
            let state = OfoState { u };
            let next = ofo::step(
                &state,
                &outputs.measurement,
                &SensitivityBundle { dw_dm },
                &cfg,
                demand,
            )
            .map_err(|source| match source {
                OfoError::InfeasibleDemand => SimError::InfeasibleDemand {
                    time_h,
                    source: NlpError::InfeasibleDemand {
                        demand,
                        min: min_total,
                        max: max_total,
                    },
                },
                other => SimError::Controller {
                    time_h,
                    source: other,
                },
            })?;
            rows.push(trace_row(time_h, demand, u, &outputs));
            u = next.u;
        } else {
            rows.push(trace_row(time_h, demand, u, &outputs));
        }
    }

    let trace = SimulationTrace {
        rows,
        gp_history,
        probe_distance,
    };
    let true_error = scenario_true_errors(scenario, params);
    let metrics = compute_metrics(&trace, dt_h, true_error);
    Ok((trace, metrics))
}

fn trace_row(time_h: f64, demand: f64, u: [f64; 3], outputs: &PlantOutputs) -> TraceRow {
    TraceRow {
        time_h,
        demand,
        u,
        m_c: outputs.measurement.m_c,
        w: outputs.measurement.w,
        w_total: outputs.measurement.w.iter().sum(),
    }
}

fn validate(scenario: &Scenario, params: &StationParams) -> Result<(), SimError> {
    let ratio = scenario.adapt_period_h / scenario.controller_step_h;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
        return Err(SimError::InvalidScenario(format!(
            "adapt period {} h is not an integer multiple of the controller step {} h",
            scenario.adapt_period_h, scenario.controller_step_h
        )));
    }
    let demand_ratio = scenario.demand_period_h / scenario.adapt_period_h;
    if (demand_ratio - demand_ratio.round()).abs() > 1e-9 || demand_ratio < 1.0 - 1e-9 {
        return Err(SimError::InvalidScenario(format!(
            "demand period {} h is not an integer multiple of the adapt period {} h",
            scenario.demand_period_h, scenario.adapt_period_h
        )));
    }
    if scenario.horizon_h <= 0.0 || scenario.controller_step_h <= 0.0 {
        return Err(SimError::InvalidScenario(
            "horizon and controller step must be positive".into(),
        ));
    }
    if scenario.mode == Mode::OfoPerfect && scenario.truth_map != TruthMapKind::Polynomial {
        return Err(SimError::InvalidScenario(
            "the perfect-knowledge mode requires polynomial truth maps".into(),
        ));
    }
    if !(0.0..=0.01).contains(&scenario.truth_noise) {
        return Err(SimError::InvalidScenario(format!(
            "truth noise {} outside [0, 0.01]",
            scenario.truth_noise
        )));
    }
    for i in 0..STATION_SIZE {
        if params.mismatch_donor[i] >= STATION_SIZE {
            return Err(SimError::InvalidScenario(format!(
                "mismatch donor index {} out of range",
                params.mismatch_donor[i]
            )));
        }
    }
    Ok(())
}

/// Noise-free true error `η_true - η̂_belief` at each probe flow, for the
/// belief polynomials the scenario actually uses.
fn scenario_true_errors(scenario: &Scenario, params: &StationParams) -> [[f64; 3]; 3] {
    let beliefs = match scenario.mode {
        Mode::OfoMismatchAdapt | Mode::OfoMismatchNoAdapt => {
            params.mismatched_beliefs(scenario.belief_order)
        }
        _ => params.poly,
    };
    let mut errors = [[0.0; 3]; 3];
    for i in 0..STATION_SIZE {
        for (p, probe) in PROBE_FLOWS.iter().enumerate() {
            let pi =
                crate::compressor::resistance_pi(params.resistance.0, params.resistance.1, *probe);
            let truth = match scenario.truth_map {
                TruthMapKind::Polynomial => efficiency_poly(&params.poly[i], *probe, pi),
                TruthMapKind::Sinusoidal => {
                    crate::compressor::efficiency_sin(&params.sin[i], *probe, pi)
                }
            };
            errors[i][p] = truth - efficiency_poly(&beliefs[i], *probe, pi);
        }
    }
    errors
}

/// Aggregates a trace into scalar metrics.
pub fn compute_metrics(
    trace: &SimulationTrace,
    dt_h: f64,
    true_error: [[f64; 3]; 3],
) -> RunMetrics {
    assert!(!trace.rows.is_empty(), "empty trace");
    let dt_s = dt_h * 3600.0;

    let mut integrated = 0.0;
    for pair in trace.rows.windows(2) {
        integrated += 0.5 * (pair[0].w_total + pair[1].w_total) * dt_s;
    }
    if trace.rows.len() == 1 {
        integrated = trace.rows[0].w_total * dt_s;
    }

    let mut demand_abs = 0.0;
    let mut demand_sum = 0.0;
    for row in &trace.rows {
        let delivered: f64 = row.m_c.iter().sum();
        demand_abs += (delivered - row.demand).abs();
        demand_sum += row.demand;
    }
    let n = trace.rows.len() as f64;

    let has_history = trace.gp_history.iter().any(|h| !h.is_empty());
    let gp = has_history.then(|| {
        let mut mae = [[0.0; 3]; 3];
        let mut delta_init = [[0.0; 3]; 3];
        let mut delta_fin = [[0.0; 3]; 3];
        let mut visited = [[false; 3]; 3];
        for i in 0..STATION_SIZE {
            let history = &trace.gp_history[i];
            for p in 0..PROBE_FLOWS.len() {
                if let (Some(first), Some(last)) = (history.first(), history.last()) {
                    delta_init[i][p] = first.probe_prediction[p] - true_error[i][p];
                    delta_fin[i][p] = last.probe_prediction[p] - true_error[i][p];
                }
                if !history.is_empty() {
                    mae[i][p] = history
                        .iter()
                        .map(|s| (s.probe_prediction[p] - true_error[i][p]).abs())
                        .sum::<f64>()
                        / history.len() as f64;
                }
                visited[i][p] = trace.probe_distance[i][p] <= PROBE_VISIT_RADIUS;
            }
        }
        GpLearningMetrics {
            mae,
            delta_init,
            delta_fin,
            visited,
            true_error,
        }
    });

    RunMetrics {
        integrated_power_j: integrated,
        mae_demand: demand_abs / n,
        mean_demand: demand_sum / n,
        gp,
    }
}

/// One cell of the 12-case mismatch sweep.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub truth_map: TruthMapKind,
    pub truth_noise: f64,
    pub belief_order: ModelOrder,
    pub metrics: RunMetrics,
}

/// Runs the full mismatch sweep: {polynomial, sinusoidal} truth ×
/// {no noise, ±0.001 noise} × {quadratic, linear, constant} belief, all in
/// the adaptive mode over the same demand profile.
///
/// Cases run in parallel on at most `jobs` threads; the result order is the
/// fixed case order, independent of scheduling.
pub fn mismatch_sweep(
    base: &Scenario,
    params: &StationParams,
    profile: &DemandProfile,
    jobs: usize,
) -> Result<Vec<SweepCase>, SimError> {
    let mut cases = Vec::new();
    for truth_map in [TruthMapKind::Polynomial, TruthMapKind::Sinusoidal] {
        for truth_noise in [0.0, 0.001] {
            for belief_order in [ModelOrder::Quadratic, ModelOrder::Linear, ModelOrder::Constant]
            {
                cases.push(Scenario {
                    mode: Mode::OfoMismatchAdapt,
                    truth_map,
                    truth_noise,
                    belief_order,
                    ..*base
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::InvalidScenario(format!("thread pool: {e}")))?;
    pool.install(|| {
        cases
            .par_iter()
            .map(|scenario| {
                let (_, metrics) = run_scenario(scenario, params, profile)?;
                Ok(SweepCase {
                    truth_map: scenario.truth_map,
                    truth_noise: scenario.truth_noise,
                    belief_order: scenario.belief_order,
                    metrics,
                })
            })
            .collect()
    })
}

/// Renders a trace as delimited text: one row per controller step, columns
/// `time_h, demand, u1..u3, mc1..mc3, w1..w3, w_total`.
pub fn trace_to_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from(
        "time_h,demand_kg_s,u1_kg_s,u2_kg_s,u3_kg_s,mc1_kg_s,mc2_kg_s,mc3_kg_s,w1_w,w2_w,w3_w,w_total_w\n",
    );
    for r in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.time_h,
            r.demand,
            r.u[0],
            r.u[1],
            r.u[2],
            r.m_c[0],
            r.m_c[1],
            r.m_c[2],
            r.w[0],
            r.w[1],
            r.w[2],
            r.w_total
        ));
    }
    out
}

/// Renders run metrics as `key = value` lines.
pub fn metrics_to_text(metrics: &RunMetrics) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "integrated_power_j = {}\n",
        metrics.integrated_power_j
    ));
    out.push_str(&format!("mae_demand_kg_s = {}\n", metrics.mae_demand));
    out.push_str(&format!("mean_demand_kg_s = {}\n", metrics.mean_demand));
    if let Some(gp) = &metrics.gp {
        for i in 0..STATION_SIZE {
            for (p, probe) in PROBE_FLOWS.iter().enumerate() {
                let tag = format!("c{}_{probe}", i + 1);
                out.push_str(&format!("mae_gp_{tag} = {}\n", gp.mae[i][p]));
                out.push_str(&format!("delta_init_{tag} = {}\n", gp.delta_init[i][p]));
                out.push_str(&format!("delta_fin_{tag} = {}\n", gp.delta_fin[i][p]));
                out.push_str(&format!("visited_{tag} = {}\n", gp.visited[i][p]));
                out.push_str(&format!("true_error_{tag} = {}\n", gp.true_error[i][p]));
            }
        }
    }
    out
}

/// Dataset dump: a hyperparameter header followed by `m, pi, delta` rows.
fn dataset_dump(model: &GpErrorModel) -> String {
    let h = model.hyper();
    let mut out = format!(
        "# beta = {}, theta_f2 = {}, theta_l = {}, sigma_n2 = {}\n",
        h.beta, h.theta_f2, h.theta_l, h.sigma_n2
    );
    for (x, d) in model
        .dataset()
        .inputs()
        .iter()
        .zip(model.dataset().targets())
    {
        out.push_str(&format!("{}, {}, {}\n", x[0], x[1], d));
    }
    out
}
