//! Run configuration: a TOML file holding every tunable constant of the
//! study, validated strictly (unknown keys are errors) before anything runs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use loadshare::compressor::{GasProperties, PolyCoeffs, SinCoeffs, STATION_SIZE};
use loadshare::compressor::{ModelOrder, POLY_DEFAULT, SIN_DEFAULT};
use loadshare::sim::{
    DemandProfile, Mode, Scenario, StationParams, TruthMapKind, DEMAND_MAX_STEP_DEFAULT,
    DEMAND_RANGE_DEFAULT,
};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(toml::de::Error),
    Invalid { field: &'static str, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "cannot parse config: {e}"),
            ConfigError::Invalid { field, message } => {
                write!(f, "invalid config field `{field}`: {message}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Which scenarios a plain (non-sweep) invocation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Nlp,
    OfoPerfect,
    OfoMismatch,
    OfoAdapt,
    #[default]
    All,
}

impl RunMode {
    pub fn scenarios(self) -> Vec<Mode> {
        match self {
            RunMode::Nlp => vec![Mode::NlpBenchmark],
            RunMode::OfoPerfect => vec![Mode::OfoPerfect],
            RunMode::OfoMismatch => vec![Mode::OfoMismatchNoAdapt],
            RunMode::OfoAdapt => vec![Mode::OfoMismatchAdapt],
            RunMode::All => vec![
                Mode::NlpBenchmark,
                Mode::OfoPerfect,
                Mode::OfoMismatchNoAdapt,
                Mode::OfoMismatchAdapt,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMapConfig {
    Polynomial,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefOrderConfig {
    Quadratic,
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub horizon_h: f64,
    pub controller_step_h: f64,
    pub adapt_period_h: f64,
    pub demand_period_h: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            horizon_h: 5000.0,
            controller_step_h: 1.0,
            adapt_period_h: 25.0,
            demand_period_h: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    pub map: TruthMapConfig,
    pub noise: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            map: TruthMapConfig::Polynomial,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeliefConfig {
    pub order: BeliefOrderConfig,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        Self {
            order: BeliefOrderConfig::Quadratic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Integral step size ν.
    pub nu: f64,
    /// Forward-difference step δ for the power sensitivities (kg/s).
    pub delta_fd: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            nu: 0.001,
            delta_fd: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasConfig {
    pub z: f64,
    pub r: f64,
    pub t1_k: f64,
    pub m_w_kg_mol: f64,
    pub n: f64,
}

impl Default for GasConfig {
    fn default() -> Self {
        Self {
            z: 0.9,
            r: 8.314,
            t1_k: 293.0,
            m_w_kg_mol: 0.01604,
            n: 1.27,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResistanceConfig {
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for ResistanceConfig {
    fn default() -> Self {
        Self {
            rho1: 0.017,
            rho2: 0.78,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowsConfig {
    pub m_min: [f64; STATION_SIZE],
    pub m_max: [f64; STATION_SIZE],
}

impl Default for FlowsConfig {
    fn default() -> Self {
        Self {
            m_min: [60.0; STATION_SIZE],
            m_max: [125.0; STATION_SIZE],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfficiencyConfig {
    /// True quadratic rows, basis order `(1, m, Π, mΠ, m², Π²)`.
    pub poly: [[f64; 6]; STATION_SIZE],
    /// Sinusoidal truth rows `(s1, s2, s3)`.
    pub sin: [[f64; 3]; STATION_SIZE],
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            poly: [POLY_DEFAULT[0].0, POLY_DEFAULT[1].0, POLY_DEFAULT[2].0],
            sin: [
                [SIN_DEFAULT[0].s1, SIN_DEFAULT[0].s2, SIN_DEFAULT[0].s3],
                [SIN_DEFAULT[1].s1, SIN_DEFAULT[1].s2, SIN_DEFAULT[1].s3],
                [SIN_DEFAULT[2].s1, SIN_DEFAULT[2].s2, SIN_DEFAULT[2].s3],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchConfig {
    /// 1-based true-row index feeding each mismatched belief row.
    pub donor: [usize; STATION_SIZE],
    pub scale: [f64; STATION_SIZE],
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self {
            donor: [3, 1, 1],
            scale: [0.95, 0.8, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Flow-tracking lag time constant (h); 0 keeps the steady-state plant.
    pub flow_lag_tau_h: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { flow_lag_tau_h: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandSource {
    Generated,
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    pub source: DemandSource,
    pub min: f64,
    pub max: f64,
    pub max_step: f64,
    /// `(start_h, demand)` pairs, used when `source = "inline"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<[f64; 2]>>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            source: DemandSource::Generated,
            min: DEMAND_RANGE_DEFAULT.0,
            max: DEMAND_RANGE_DEFAULT.1,
            max_step: DEMAND_MAX_STEP_DEFAULT,
            segments: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dump_gp_datasets: bool,
}

/// The whole run configuration. Every field has a default equal to the
/// study's baseline constants, so a minimal file can hold just `mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub out_dir: String,
    pub jobs: usize,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub truth: TruthConfig,
    pub belief: BeliefConfig,
    pub controller: ControllerConfig,
    pub gas: GasConfig,
    pub resistance: ResistanceConfig,
    pub flows: FlowsConfig,
    pub efficiency: EfficiencyConfig,
    pub mismatch: MismatchConfig,
    pub plant: PlantConfig,
    pub demand: DemandConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::All,
            seed: 1,
            out_dir: "runs".into(),
            jobs: 4,
            loop_cfg: LoopConfig::default(),
            truth: TruthConfig::default(),
            belief: BeliefConfig::default(),
            controller: ControllerConfig::default(),
            gas: GasConfig::default(),
            resistance: ResistanceConfig::default(),
            flows: FlowsConfig::default(),
            efficiency: EfficiencyConfig::default(),
            mismatch: MismatchConfig::default(),
            plant: PlantConfig::default(),
            demand: DemandConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(ConfigError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical emitter; `parse(emit(config)) == config`.
    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.controller.nu.is_finite() || self.controller.nu <= 0.0 {
            return Err(invalid("controller.nu", "must be positive"));
        }
        if !self.controller.delta_fd.is_finite() || self.controller.delta_fd <= 0.0 {
            return Err(invalid("controller.delta_fd", "must be positive"));
        }
        if [self.gas.z, self.gas.r, self.gas.t1_k].iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(invalid("gas", "z, r and t1_k must be positive"));
        }
        if !self.gas.m_w_kg_mol.is_finite() || self.gas.m_w_kg_mol <= 0.0 {
            return Err(invalid("gas.m_w_kg_mol", "must be positive"));
        }
        if !self.gas.n.is_finite() || self.gas.n <= 1.0 {
            return Err(invalid("gas.n", "polytropic coefficient must exceed 1"));
        }
        if !self.resistance.rho1.is_finite() || self.resistance.rho1 <= 0.0 {
            return Err(invalid("resistance.rho1", "must be positive"));
        }
        for i in 0..STATION_SIZE {
            if !self.flows.m_min[i].is_finite()
                || self.flows.m_min[i] <= 0.0
                || self.flows.m_min[i] >= self.flows.m_max[i]
            {
                return Err(invalid(
                    "flows",
                    format!("need 0 < m_min < m_max for compressor {}", i + 1),
                ));
            }
            if self.resistance.rho1 * self.flows.m_min[i] + self.resistance.rho2 <= 1.0 {
                return Err(invalid(
                    "resistance",
                    "pressure ratio must exceed 1 over the admissible flow range",
                ));
            }
            let donor = self.mismatch.donor[i];
            if !(1..=STATION_SIZE).contains(&donor) {
                return Err(invalid(
                    "mismatch.donor",
                    format!("donor index {donor} outside 1..={STATION_SIZE}"),
                ));
            }
            if self.efficiency.sin[i][1] <= 0.0 {
                return Err(invalid("efficiency.sin", "amplitude s2 must be positive"));
            }
        }
        if !(0.0..=0.01).contains(&self.truth.noise) {
            return Err(invalid("truth.noise", "must lie in [0, 0.01]"));
        }
        if [self.loop_cfg.horizon_h, self.loop_cfg.controller_step_h]
            .iter()
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err(invalid("loop", "horizon and controller step must be positive"));
        }
        let ratio = self.loop_cfg.adapt_period_h / self.loop_cfg.controller_step_h;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(invalid(
                "loop.adapt_period_h",
                "must be an integer multiple of controller_step_h",
            ));
        }
        let dratio = self.loop_cfg.demand_period_h / self.loop_cfg.adapt_period_h;
        if (dratio - dratio.round()).abs() > 1e-9 || dratio < 1.0 - 1e-9 {
            return Err(invalid(
                "loop.demand_period_h",
                "must be an integer multiple of adapt_period_h",
            ));
        }
        let min_total: f64 = self.flows.m_min.iter().sum();
        let max_total: f64 = self.flows.m_max.iter().sum();
        match self.demand.source {
            DemandSource::Generated => {
                if self.demand.min >= self.demand.max {
                    return Err(invalid("demand", "need min < max"));
                }
                if self.demand.min < min_total - 1e-9 || self.demand.max > max_total + 1e-9 {
                    return Err(invalid(
                        "demand",
                        format!("range must stay within the station limits [{min_total}, {max_total}]"),
                    ));
                }
                if !self.demand.max_step.is_finite() || self.demand.max_step <= 0.0 {
                    return Err(invalid("demand.max_step", "must be positive"));
                }
            }
            DemandSource::Inline => {
                let segments = self
                    .demand
                    .segments
                    .as_ref()
                    .ok_or_else(|| invalid("demand.segments", "required when source = \"inline\""))?;
                if segments.is_empty() {
                    return Err(invalid("demand.segments", "must not be empty"));
                }
                for pair in segments.windows(2) {
                    if pair[1][0] <= pair[0][0] {
                        return Err(invalid(
                            "demand.segments",
                            "segment starts must be strictly increasing",
                        ));
                    }
                }
                if segments[0][0] != 0.0 {
                    return Err(invalid("demand.segments", "first segment must start at 0"));
                }
                for seg in segments {
                    if seg[1] < min_total - 1e-9 || seg[1] > max_total + 1e-9 {
                        return Err(invalid(
                            "demand.segments",
                            format!(
                                "demand {} outside the station limits [{min_total}, {max_total}]",
                                seg[1]
                            ),
                        ));
                    }
                }
            }
        }
        if self.jobs == 0 {
            return Err(invalid("jobs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn station_params(&self) -> Result<StationParams, ConfigError> {
        let gas = GasProperties::new(
            self.gas.z,
            self.gas.r,
            self.gas.t1_k,
            self.gas.m_w_kg_mol,
            self.gas.n,
        )
        .map_err(|e| invalid("gas", e.to_string()))?;
        let mut donor = [0usize; STATION_SIZE];
        for i in 0..STATION_SIZE {
            donor[i] = self.mismatch.donor[i] - 1;
        }
        Ok(StationParams {
            gas,
            resistance: (self.resistance.rho1, self.resistance.rho2),
            m_min: self.flows.m_min,
            m_max: self.flows.m_max,
            poly: self.efficiency.poly.map(PolyCoeffs),
            sin: self.efficiency.sin.map(|s| SinCoeffs {
                s1: s[0],
                s2: s[1],
                s3: s[2],
            }),
            mismatch_donor: donor,
            mismatch_scale: self.mismatch.scale,
            nu: self.controller.nu,
            delta_fd: self.controller.delta_fd,
            flow_lag_tau_h: self.plant.flow_lag_tau_h,
        })
    }

    pub fn scenario(&self, mode: Mode) -> Scenario {
        Scenario {
            mode,
            truth_map: match self.truth.map {
                TruthMapConfig::Polynomial => TruthMapKind::Polynomial,
                TruthMapConfig::Sinusoidal => TruthMapKind::Sinusoidal,
            },
            truth_noise: self.truth.noise,
            belief_order: match self.belief.order {
                BeliefOrderConfig::Quadratic => ModelOrder::Quadratic,
                BeliefOrderConfig::Linear => ModelOrder::Linear,
                BeliefOrderConfig::Constant => ModelOrder::Constant,
            },
            horizon_h: self.loop_cfg.horizon_h,
            demand_period_h: self.loop_cfg.demand_period_h,
            controller_step_h: self.loop_cfg.controller_step_h,
            adapt_period_h: self.loop_cfg.adapt_period_h,
            seed: self.seed,
        }
    }

    pub fn demand_profile(&self) -> Result<DemandProfile, ConfigError> {
        match self.demand.source {
            DemandSource::Generated => Ok(DemandProfile::generate(
                self.seed,
                self.loop_cfg.horizon_h,
                self.loop_cfg.demand_period_h,
                (self.demand.min, self.demand.max),
                self.demand.max_step,
            )),
            DemandSource::Inline => {
                let segments = self
                    .demand
                    .segments
                    .as_ref()
                    .expect("validated inline segments")
                    .iter()
                    .map(|s| (s[0], s[1]))
                    .collect();
                DemandProfile::new(segments)
                    .map_err(|e| invalid("demand.segments", e.to_string()))
            }
        }
    }
}
