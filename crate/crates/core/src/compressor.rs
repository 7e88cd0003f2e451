//! Static compressor physics.
//!
//! Everything here is a pure function of its arguments: efficiency maps
//! (quadratic polynomial or two-dimensional sinusoid, optionally with keyed
//! measurement noise), the linear system resistance curve, the polytropic
//! head, and the resulting shaft power.

use thiserror::Error;

use crate::rng;

/// Number of compressors in the station.
pub const STATION_SIZE: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CompressorError {
    /// An efficiency evaluation came out non-positive, so power is undefined.
    /// The caller must clamp the operating point or abort the scenario.
    #[error("non-positive efficiency {eta} at flow {flow} kg/s")]
    NonPositiveEfficiency { eta: f64, flow: f64 },
    /// A parameter violated its validity range at construction time.
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Thermodynamic constants of the compressed gas.
///
/// `phi = (n - 1) / n` is always derived from `n` on demand so the two can
/// never disagree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasProperties {
    /// Compressibility factor (dimensionless).
    pub z: f64,
    /// Gas constant (J mol⁻¹ K⁻¹).
    pub r: f64,
    /// Inlet temperature (K).
    pub t1: f64,
    /// Molecular weight (kg mol⁻¹).
    pub m_w: f64,
    /// Polytropic coefficient (dimensionless, > 1).
    pub n: f64,
}

impl GasProperties {
    pub fn new(z: f64, r: f64, t1: f64, m_w: f64, n: f64) -> Result<Self, CompressorError> {
        let check = |name, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(CompressorError::InvalidParameter { name, value })
            }
        };
        check("z", z, z > 0.0)?;
        check("r", r, r > 0.0)?;
        check("t1", t1, t1 > 0.0)?;
        check("m_w", m_w, m_w > 0.0)?;
        check("n", n, n > 1.0)?;
        Ok(Self { z, r, t1, m_w, n })
    }

    /// Polytropic exponent `(n - 1) / n`, always in (0, 1).
    pub fn phi(&self) -> f64 {
        (self.n - 1.0) / self.n
    }
}

impl Default for GasProperties {
    /// Natural-gas-like constants. Only the relative power between the
    /// compressors matters for load sharing, so the absolute head scale is
    /// uncalibrated.
    fn default() -> Self {
        Self {
            z: 0.9,
            r: 8.314,
            t1: 293.0,
            m_w: 0.01604,
            n: 1.27,
        }
    }
}

/// Coefficients of the quadratic efficiency surface, ordered as the basis
/// `(1, m, Π, mΠ, m², Π²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoeffs(pub [f64; 6]);

/// Parameters of the sinusoidal efficiency surface
/// `η = s2·sin(0.02·(m + s3·Π + s1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinCoeffs {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

/// Default efficiency polynomials for the three compressors.
pub const POLY_DEFAULT: [PolyCoeffs; STATION_SIZE] = [
    PolyCoeffs([0.5919, -0.0021, 0.2934, 0.0030, 0.0, -0.1179]),
    PolyCoeffs([0.6383, -0.0020, 0.3220, 0.0034, 0.0, -0.1260]),
    PolyCoeffs([0.6291, -0.0023, 0.3104, 0.0032, 0.0, -0.1306]),
];

/// Sinusoidal efficiency surfaces for the three compressors.
pub const SIN_DEFAULT: [SinCoeffs; STATION_SIZE] = [
    SinCoeffs {
        s1: -7.294,
        s2: 0.8559,
        s3: -9.222,
    },
    SinCoeffs {
        s1: -11.15,
        s2: 0.966,
        s3: -7.511,
    },
    SinCoeffs {
        s1: -3.595,
        s2: 0.8584,
        s3: -10.47,
    },
];

/// Default linear resistance curve coefficients `(ρ1, ρ2)`.
pub const RESISTANCE_DEFAULT: (f64, f64) = (0.017, 0.78);

/// Default per-compressor flow bounds (kg s⁻¹), wide enough that the probe
/// flows 70/95/120 are interior.
pub const FLOW_BOUNDS_DEFAULT: (f64, f64) = (60.0, 125.0);

/// Evaluates the quadratic efficiency surface at `(m, pi)`.
pub fn efficiency_poly(c: &PolyCoeffs, m: f64, pi: f64) -> f64 {
    let a = &c.0;
    a[0] + a[1] * m + a[2] * pi + a[3] * m * pi + a[4] * m * m + a[5] * pi * pi
}

/// Evaluates the sinusoidal efficiency surface at `(m, pi)`.
///
/// The argument of the sine is in radians.
pub fn efficiency_sin(c: &SinCoeffs, m: f64, pi: f64) -> f64 {
    c.s2 * (0.02 * (m + c.s3 * pi + c.s1)).sin()
}

/// How much of the quadratic surface a controller belief model keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelOrder {
    /// Full quadratic surface.
    Quadratic,
    /// Only the affine terms `(1, m, Π)`.
    Linear,
    /// Only the constant term.
    Constant,
}

/// Returns a copy of `c` truncated to the requested model order:
/// `Linear` zeroes the `mΠ`, `m²`, `Π²` terms, `Constant` zeroes everything
/// but the constant term.
pub fn reduced_model(c: &PolyCoeffs, order: ModelOrder) -> PolyCoeffs {
    let a = c.0;
    match order {
        ModelOrder::Quadratic => *c,
        ModelOrder::Linear => PolyCoeffs([a[0], a[1], a[2], 0.0, 0.0, 0.0]),
        ModelOrder::Constant => PolyCoeffs([a[0], 0.0, 0.0, 0.0, 0.0, 0.0]),
    }
}

/// Builds the mismatched belief polynomials from the true (default)
/// coefficient rows: the belief for compressor 1 is 0.95 times the true
/// row of compressor 3, and the beliefs for compressors 2 and 3 are both
/// 0.8 times the true row of compressor 1.
pub fn apply_mismatch(defaults: &[PolyCoeffs; STATION_SIZE]) -> [PolyCoeffs; STATION_SIZE] {
    [
        scale_coeffs(&defaults[2], 0.95),
        scale_coeffs(&defaults[0], 0.8),
        scale_coeffs(&defaults[0], 0.8),
    ]
}

/// Scales every coefficient of a row by `factor`.
pub fn scale_coeffs(c: &PolyCoeffs, factor: f64) -> PolyCoeffs {
    PolyCoeffs(c.0.map(|a| a * factor))
}

/// Underlying functional form of an efficiency map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    Polynomial(PolyCoeffs),
    Sinusoidal(SinCoeffs),
}

/// A plant-truth efficiency map: a deterministic surface plus optional
/// additive uniform measurement noise.
///
/// Noise draws are keyed on `(rng_seed, step)` where `rng_seed` already
/// encodes the compressor identity, so replays are bit-identical regardless
/// of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyMap {
    pub kind: MapKind,
    /// Half-width of the uniform noise band; 0 disables noise.
    pub noise_amplitude: f64,
    /// Key for the counter-based noise generator.
    pub rng_seed: u64,
}

impl EfficiencyMap {
    /// A noise-free map.
    pub fn exact(kind: MapKind) -> Self {
        Self {
            kind,
            noise_amplitude: 0.0,
            rng_seed: 0,
        }
    }

    /// A map with additive uniform noise of half-width `amplitude`, keyed on
    /// the station seed and the compressor index.
    pub fn noisy(kind: MapKind, amplitude: f64, seed: u64, compressor: usize) -> Self {
        assert!(
            (0.0..=0.01).contains(&amplitude),
            "noise amplitude {amplitude} outside [0, 0.01]"
        );
        Self {
            kind,
            noise_amplitude: amplitude,
            rng_seed: rng::mix(seed, compressor as u64),
        }
    }

    /// Noise-free surface value at `(m, pi)`.
    pub fn surface(&self, m: f64, pi: f64) -> f64 {
        match &self.kind {
            MapKind::Polynomial(c) => efficiency_poly(c, m, pi),
            MapKind::Sinusoidal(c) => efficiency_sin(c, m, pi),
        }
    }

    /// Measured efficiency at time index `step`: the surface plus one
    /// uniform draw from `[-noise_amplitude, +noise_amplitude]`. The draw is
    /// redrawn per measurement event and is a pure function of
    /// `(rng_seed, step)`.
    pub fn true_efficiency(&self, m: f64, pi: f64, step: u64) -> f64 {
        let clean = self.surface(m, pi);
        if self.noise_amplitude == 0.0 {
            clean
        } else {
            clean + self.noise_amplitude * rng::uniform_signed(self.rng_seed, step)
        }
    }
}

/// One compressor: its true efficiency map, its resistance curve, and its
/// admissible flow range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorModel {
    pub efficiency: EfficiencyMap,
    /// Resistance curve slope (kg⁻¹ s), strictly positive.
    pub rho1: f64,
    /// Resistance curve offset (dimensionless).
    pub rho2: f64,
    /// Minimal admissible flow (kg s⁻¹).
    pub m_min: f64,
    /// Maximal admissible flow (kg s⁻¹).
    pub m_max: f64,
    pub gas: GasProperties,
}

impl CompressorModel {
    pub fn new(
        efficiency: EfficiencyMap,
        rho1: f64,
        rho2: f64,
        m_min: f64,
        m_max: f64,
        gas: GasProperties,
    ) -> Result<Self, CompressorError> {
        if !rho1.is_finite() || rho1 <= 0.0 {
            return Err(CompressorError::InvalidParameter {
                name: "rho1",
                value: rho1,
            });
        }
        if !m_min.is_finite() || m_min <= 0.0 || m_min >= m_max {
            return Err(CompressorError::InvalidParameter {
                name: "m_min",
                value: m_min,
            });
        }
        // Compression (not expansion) over the whole admissible range.
        if rho1 * m_min + rho2 <= 1.0 {
            return Err(CompressorError::InvalidParameter {
                name: "rho2",
                value: rho2,
            });
        }
        Ok(Self {
            efficiency,
            rho1,
            rho2,
            m_min,
            m_max,
            gas,
        })
    }

    /// Pressure ratio imposed by the system resistance at flow `m`.
    pub fn resistance_pi(&self, m: f64) -> f64 {
        resistance_pi(self.rho1, self.rho2, m)
    }

    /// Measured power at flow `m` and time index `step`, evaluating the true
    /// (possibly noisy) efficiency along the resistance curve.
    pub fn measure_power(&self, m: f64, step: u64) -> Result<f64, CompressorError> {
        let pi = self.resistance_pi(m);
        let eta = self.efficiency.true_efficiency(m, pi, step);
        power(&self.gas, m, pi, eta)
    }

    /// Noise-free power at flow `m`.
    pub fn exact_power(&self, m: f64) -> Result<f64, CompressorError> {
        let pi = self.resistance_pi(m);
        let eta = self.efficiency.surface(m, pi);
        power(&self.gas, m, pi, eta)
    }
}

/// Linear resistance curve `Π(m) = ρ1·m + ρ2`.
pub fn resistance_pi(rho1: f64, rho2: f64, m: f64) -> f64 {
    rho1 * m + rho2
}

/// Polytropic head (J kg⁻¹) at pressure ratio `pi`:
/// `H = Z·R·T1 / (M_W·φ) · (Π^φ - 1)`.
pub fn head(gas: &GasProperties, pi: f64) -> f64 {
    let phi = gas.phi();
    gas.z * gas.r * gas.t1 / (gas.m_w * phi) * (pi.powf(phi) - 1.0)
}

/// Shaft power (W) `W = H·m / η`.
///
/// Fails with [`CompressorError::NonPositiveEfficiency`] when `eta <= 0`,
/// which signals a degenerate map evaluation.
pub fn power(gas: &GasProperties, m: f64, pi: f64, eta: f64) -> Result<f64, CompressorError> {
    if eta <= 0.0 {
        return Err(CompressorError::NonPositiveEfficiency { eta, flow: m });
    }
    Ok(head(gas, pi) * m / eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Frozen by independent evaluation of the six-term polynomial with the
    // default row 1 coefficients and the default resistance curve.
    const ETA_POLY_1_AT_95: f64 = 1.1013906525;
    // Frozen by direct evaluation: sin argument 1.3123862 rad.
    const ETA_SIN_1_AT_95: f64 = 0.8274819649064146;
    // Frozen by direct evaluation of the head formula with default gas.
    const HEAD_AT_2_395: f64 = 131_178.9699626344;

    #[test]
    fn poly_efficiency_matches_hand_evaluation() {
        let pi = resistance_pi(0.017, 0.78, 95.0);
        assert_relative_eq!(pi, 2.395, max_relative = 1e-12);
        assert_relative_eq!(
            efficiency_poly(&POLY_DEFAULT[0], 95.0, pi),
            ETA_POLY_1_AT_95,
            max_relative = 1e-9
        );
    }

    #[test]
    fn poly_efficiency_degenerate_rows() {
        let zero = PolyCoeffs([0.0; 6]);
        assert_eq!(efficiency_poly(&zero, 70.0, 2.0), 0.0);
        let constant = PolyCoeffs([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(efficiency_poly(&constant, 83.0, 2.7), 1.0);
    }

    #[test]
    fn sin_efficiency_matches_hand_evaluation() {
        assert_relative_eq!(
            efficiency_sin(&SIN_DEFAULT[0], 95.0, 2.395),
            ETA_SIN_1_AT_95,
            max_relative = 1e-12
        );
    }

    #[test]
    fn sin_efficiency_degenerate_cases() {
        let flat = SinCoeffs {
            s1: -3.0,
            s2: 0.0,
            s3: 2.0,
        };
        assert_eq!(efficiency_sin(&flat, 80.0, 2.0), 0.0);
        // s1 placed so the argument is exactly π/2.
        let peak = SinCoeffs {
            s1: std::f64::consts::FRAC_PI_2 / 0.02 - 80.0,
            s2: 1.0,
            s3: 0.0,
        };
        assert_relative_eq!(efficiency_sin(&peak, 80.0, 2.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn resistance_curve_values() {
        assert_relative_eq!(resistance_pi(0.017, 0.78, 70.0), 1.97, max_relative = 1e-12);
        assert_relative_eq!(resistance_pi(0.017, 0.78, 120.0), 2.82, max_relative = 1e-12);
        assert_eq!(resistance_pi(0.0, 2.0, 81.3), 2.0);
    }

    #[test]
    fn head_at_unit_pressure_ratio_is_zero() {
        let gas = GasProperties::default();
        assert_eq!(head(&gas, 1.0), 0.0);
    }

    #[test]
    fn head_matches_hand_evaluation_and_increases() {
        let gas = GasProperties::default();
        assert_relative_eq!(head(&gas, 2.395), HEAD_AT_2_395, max_relative = 1e-9);
        assert!(head(&gas, 2.82) > head(&gas, 1.97));
    }

    #[test]
    fn power_composes_head_and_efficiency() {
        let gas = GasProperties::default();
        let w = power(&gas, 95.0, 2.395, ETA_POLY_1_AT_95).unwrap();
        assert_relative_eq!(w, 11_314_788.370650595, max_relative = 1e-9);
        assert_eq!(power(&gas, 95.0, 1.0, 0.8).unwrap(), 0.0);
        // Doubling the efficiency halves the power.
        let w2 = power(&gas, 95.0, 2.395, 2.0 * ETA_POLY_1_AT_95).unwrap();
        assert_relative_eq!(w, 2.0 * w2, max_relative = 1e-12);
    }

    #[test]
    fn power_rejects_non_positive_efficiency() {
        let gas = GasProperties::default();
        assert!(matches!(
            power(&gas, 95.0, 2.4, 0.0),
            Err(CompressorError::NonPositiveEfficiency { .. })
        ));
        assert!(matches!(
            power(&gas, 95.0, 2.4, -0.3),
            Err(CompressorError::NonPositiveEfficiency { .. })
        ));
    }

    #[test]
    fn mismatch_rows_match_hand_scaling() {
        let m = apply_mismatch(&POLY_DEFAULT);
        let expected1 = [0.597645, -0.002185, 0.29488, 0.00304, 0.0, -0.12407];
        for (got, want) in m[0].0.iter().zip(expected1) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        // Compressors 2 and 3 share the same mismatched row.
        assert_eq!(m[1], m[2]);
        for (got, want) in m[1].0.iter().zip(POLY_DEFAULT[0].0) {
            assert_relative_eq!(*got, 0.8 * want, max_relative = 1e-12);
        }
    }

    #[test]
    fn scaling_by_one_is_identity() {
        assert_eq!(scale_coeffs(&POLY_DEFAULT[1], 1.0), POLY_DEFAULT[1]);
        let zero = PolyCoeffs([0.0; 6]);
        assert_eq!(scale_coeffs(&zero, 0.95), zero);
    }

    #[test]
    fn reduced_model_zeroes_the_right_terms() {
        let c = POLY_DEFAULT[0];
        assert_eq!(reduced_model(&c, ModelOrder::Quadratic), c);
        assert_eq!(
            reduced_model(&c, ModelOrder::Linear),
            PolyCoeffs([0.5919, -0.0021, 0.2934, 0.0, 0.0, 0.0])
        );
        assert_eq!(
            reduced_model(&c, ModelOrder::Constant),
            PolyCoeffs([0.5919, 0.0, 0.0, 0.0, 0.0, 0.0])
        );
    }

    #[test]
    fn noise_free_map_is_pure() {
        let map = EfficiencyMap::exact(MapKind::Polynomial(POLY_DEFAULT[0]));
        let direct = efficiency_poly(&POLY_DEFAULT[0], 95.0, 2.395);
        assert_eq!(map.true_efficiency(95.0, 2.395, 0).to_bits(), direct.to_bits());
        assert_eq!(map.true_efficiency(95.0, 2.395, 10).to_bits(), direct.to_bits());
    }

    #[test]
    fn noise_stays_in_band_and_replays() {
        let map = EfficiencyMap::noisy(MapKind::Polynomial(POLY_DEFAULT[0]), 0.001, 7, 1);
        let clean = map.surface(95.0, 2.395);
        for step in 0..500 {
            let eta = map.true_efficiency(95.0, 2.395, step);
            assert!((eta - clean).abs() <= 0.001);
            assert_eq!(eta.to_bits(), map.true_efficiency(95.0, 2.395, step).to_bits());
        }
    }

    #[test]
    fn noise_differs_between_compressors_and_steps() {
        let m1 = EfficiencyMap::noisy(MapKind::Polynomial(POLY_DEFAULT[0]), 0.001, 7, 1);
        let m2 = EfficiencyMap::noisy(MapKind::Polynomial(POLY_DEFAULT[0]), 0.001, 7, 2);
        assert_ne!(
            m1.true_efficiency(95.0, 2.395, 3),
            m2.true_efficiency(95.0, 2.395, 3)
        );
        assert_ne!(
            m1.true_efficiency(95.0, 2.395, 3),
            m1.true_efficiency(95.0, 2.395, 4)
        );
    }

    #[test]
    fn gas_properties_validate() {
        assert!(GasProperties::new(0.9, 8.314, 293.0, 0.016, 1.27).is_ok());
        assert!(GasProperties::new(0.9, 8.314, 293.0, 0.016, 1.0).is_err());
        assert!(GasProperties::new(-1.0, 8.314, 293.0, 0.016, 1.27).is_err());
        let gas = GasProperties::default();
        assert!(gas.phi() > 0.0 && gas.phi() < 1.0);
    }

    #[test]
    fn compressor_model_validates_ranges() {
        let map = EfficiencyMap::exact(MapKind::Polynomial(POLY_DEFAULT[0]));
        let gas = GasProperties::default();
        assert!(CompressorModel::new(map, 0.017, 0.78, 60.0, 125.0, gas).is_ok());
        assert!(CompressorModel::new(map, 0.0, 0.78, 60.0, 125.0, gas).is_err());
        assert!(CompressorModel::new(map, 0.017, 0.78, 125.0, 60.0, gas).is_err());
        // Π(m_min) must exceed 1.
        assert!(CompressorModel::new(map, 0.001, 0.5, 60.0, 125.0, gas).is_err());
    }

    #[test]
    fn default_polynomials_positive_over_operating_range() {
        // Power must stay finite: dense sweep of every default row at 0.1 kg/s.
        let (rho1, rho2) = RESISTANCE_DEFAULT;
        for c in &POLY_DEFAULT {
            let mut m = 70.0;
            while m <= 120.0 {
                let pi = resistance_pi(rho1, rho2, m);
                assert!(efficiency_poly(c, m, pi) > 0.0, "eta <= 0 at m = {m}");
                m += 0.1;
            }
        }
    }
}
