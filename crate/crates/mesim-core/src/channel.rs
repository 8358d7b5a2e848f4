//! Wireless channel model: TX coil field, film transducer response, and
//! misalignment gains.
//!
//! The field along the coil axis is the closed-form circular-loop
//! magnitude; off-axis movement and rotations are applied as measured
//! gain tables rather than a full field solve. The transducer's resonant
//! settling is a first-order envelope with a time constant of
//! `ringup_cycles / 3` carrier periods.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::downlink::FieldSchedule;
use crate::interp::MonotoneCubic;

/// Vacuum permeability, H/m.
pub const MU_0: f64 = 4.0e-7 * PI;
/// Field conversion for air: 1 Oe corresponds to 1e-4 T.
pub const OERSTED_PER_TESLA: f64 = 1.0e4;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("angle {0} deg outside [0, 90]")]
    AngleOutOfRange(f64),
    #[error("lateral offset {0} m must be >= 0")]
    NegativeOffset(f64),
    #[error("implants {0} and {1} have coincident poses")]
    CoincidentPoses(usize, usize),
    #[error("unknown implant index {0}")]
    UnknownImplant(usize),
    #[error("invalid {what}: {why}")]
    InvalidSpec { what: &'static str, why: String },
}

/// Transmit coil parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoilSpec {
    /// Coil radius in meters.
    pub radius: f64,
    /// Number of turns.
    pub turns: u32,
    /// Peak drive current in amperes.
    pub drive_current_peak: f64,
    /// Carrier frequency in hertz.
    pub carrier_freq: f64,
    /// Series resistance of the coil in ohms, used for TX power accounting.
    pub series_resistance: f64,
}

impl Default for CoilSpec {
    fn default() -> Self {
        Self {
            radius: 0.03,
            turns: 20,
            drive_current_peak: 1.0,
            carrier_freq: 330e3,
            series_resistance: 0.5,
        }
    }
}

impl CoilSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let err = |why: String| ChannelError::InvalidSpec { what: "coil", why };
        if !(self.radius > 0.0) {
            return Err(err(format!("radius {} must be > 0", self.radius)));
        }
        if !(self.carrier_freq > 0.0) {
            return Err(err(format!("carrier_freq {} must be > 0", self.carrier_freq)));
        }
        if self.drive_current_peak < 0.0 {
            return Err(err(format!(
                "drive_current_peak {} must be >= 0",
                self.drive_current_peak
            )));
        }
        if !(self.series_resistance > 0.0) {
            return Err(err(format!(
                "series_resistance {} must be > 0",
                self.series_resistance
            )));
        }
        Ok(())
    }

    /// Carrier period in seconds.
    pub fn carrier_period(&self) -> f64 {
        1.0 / self.carrier_freq
    }

    /// On-axis field per ampere of drive at axial distance `z`, in Oe/A.
    pub fn field_per_ampere(&self, z: f64) -> f64 {
        let r2 = self.radius * self.radius;
        let b_per_a = MU_0 * self.turns as f64 * r2 / (2.0 * (r2 + z * z).powf(1.5));
        b_per_a * OERSTED_PER_TESLA
    }

    /// Drive current that produces `target_oe` on axis at distance `z`.
    pub fn current_for_axial_field(&self, z: f64, target_oe: f64) -> f64 {
        target_oe / self.field_per_ampere(z)
    }

    /// TX coil power at the configured peak drive, watts.
    pub fn tx_power(&self) -> f64 {
        0.5 * self.drive_current_peak * self.drive_current_peak * self.series_resistance
    }
}

/// Magnetoelectric film parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MEFilmSpec {
    pub length: f64,
    pub width: f64,
    pub resonant_freq: f64,
    /// Purely resistive source impedance, ohms.
    pub source_resistance: f64,
    /// Open-circuit voltage amplitude per oersted of field, V/Oe.
    pub voltage_coefficient: f64,
    /// Carrier cycles to settle after a field edge.
    pub ringup_cycles: u32,
}

impl Default for MEFilmSpec {
    fn default() -> Self {
        Self {
            length: 3e-3,
            width: 2e-3,
            resonant_freq: 330e3,
            source_resistance: 800.0,
            voltage_coefficient: 0.7,
            ringup_cycles: 15,
        }
    }
}

impl MEFilmSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let err = |why: String| ChannelError::InvalidSpec { what: "film", why };
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("resonant_freq", self.resonant_freq),
            ("source_resistance", self.source_resistance),
            ("voltage_coefficient", self.voltage_coefficient),
        ] {
            if !(v > 0.0) {
                return Err(err(format!("{name} {v} must be > 0")));
            }
        }
        if self.ringup_cycles == 0 {
            return Err(err("ringup_cycles must be > 0".into()));
        }
        // 5 Oe must induce at least 7 Vpp (3.5 V amplitude).
        if self.voltage_coefficient * 5.0 < 3.5 {
            return Err(err(format!(
                "voltage_coefficient {} V/Oe gives less than 7 Vpp at 5 Oe",
                self.voltage_coefficient
            )));
        }
        Ok(())
    }

    /// Envelope time constant in carrier periods: settles (~95%) within
    /// `ringup_cycles` after an edge.
    pub fn ringup_tau_cycles(&self) -> f64 {
        self.ringup_cycles as f64 / 3.0
    }
}

/// Implant position and orientation relative to the TX coil axis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Pose {
    /// Distance along the coil axis, meters.
    pub axial_distance: f64,
    /// Radial displacement from the axis, meters.
    pub lateral_offset: f64,
    /// Rotation in the XZ-plane, degrees.
    pub theta_xz: f64,
    /// Rotation in the YZ-plane, degrees.
    pub theta_yz: f64,
    /// Rotation about the film long axis, degrees. Does not affect the
    /// received voltage (field symmetry) but is validated like the others.
    pub theta_z: f64,
}

impl Pose {
    pub fn axial(z: f64) -> Self {
        Self {
            axial_distance: z,
            lateral_offset: 0.0,
            theta_xz: 0.0,
            theta_yz: 0.0,
            theta_z: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.axial_distance < 0.0 {
            return Err(ChannelError::InvalidSpec {
                what: "pose",
                why: format!("axial_distance {} must be >= 0", self.axial_distance),
            });
        }
        if self.lateral_offset < 0.0 {
            return Err(ChannelError::NegativeOffset(self.lateral_offset));
        }
        for angle in [self.theta_xz, self.theta_yz, self.theta_z] {
            if !(0.0..=90.0).contains(&angle) {
                return Err(ChannelError::AngleOutOfRange(angle));
            }
        }
        Ok(())
    }
}

/// Normalized gain versus angle (degrees) or lateral offset (meters).
///
/// Knots must start at (0, 1.0) and be nonincreasing with gains in [0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct GainTable {
    knots: Vec<(f64, f64)>,
    curve: MonotoneCubic,
}

impl TryFrom<Vec<(f64, f64)>> for GainTable {
    type Error = ChannelError;
    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, ChannelError> {
        GainTable::new(knots)
    }
}

impl From<GainTable> for Vec<(f64, f64)> {
    fn from(t: GainTable) -> Self {
        t.knots
    }
}

impl GainTable {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, ChannelError> {
        let err = |why: String| ChannelError::InvalidSpec { what: "gain table", why };
        if knots.len() < 2 {
            return Err(err("need at least two knots".into()));
        }
        if knots[0].0 != 0.0 || knots[0].1 != 1.0 {
            return Err(err(format!("first knot must be (0, 1.0), got {:?}", knots[0])));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(err("knot arguments must be strictly increasing".into()));
            }
            if w[1].1 > w[0].1 {
                return Err(err("gains must be nonincreasing".into()));
            }
        }
        if knots.iter().any(|k| !(0.0..=1.0).contains(&k.1)) {
            return Err(err("gains must lie in [0, 1]".into()));
        }
        // Gains are even in their argument, so the curve is flat at 0.
        let curve = MonotoneCubic::new_flat_start(&knots);
        Ok(Self { knots, curve })
    }

    /// Film misalignment curve: under 20% loss up to 60 degrees.
    pub fn default_angular() -> Self {
        Self::new(vec![(0.0, 1.0), (30.0, 0.95), (60.0, 0.80), (90.0, 0.35)]).unwrap()
    }

    /// Lateral movement curve: ~20% loss at 1.5 cm.
    pub fn default_lateral() -> Self {
        Self::new(vec![
            (0.0, 1.0),
            (0.005, 0.98),
            (0.010, 0.92),
            (0.015, 0.80),
            (0.020, 0.62),
            (0.030, 0.30),
        ])
        .unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval_clamped(x)
    }

    /// True when `x` lies beyond the last knot, i.e. the returned gain is
    /// a clamped extrapolation that should be flagged in the trace.
    pub fn beyond_range(&self, x: f64) -> bool {
        x > self.curve.x_max()
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }
}

/// Per-scene channel tables and tissue attenuation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub angular_xz: GainTable,
    pub angular_yz: GainTable,
    pub lateral: GainTable,
    /// Scalar attenuation on field strength for tissue paths; 1.0 = air.
    pub tissue_attenuation: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            angular_xz: GainTable::default_angular(),
            angular_yz: GainTable::default_angular(),
            lateral: GainTable::default_lateral(),
            tissue_attenuation: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.tissue_attenuation > 0.0 && self.tissue_attenuation <= 1.0) {
            return Err(ChannelError::InvalidSpec {
                what: "channel config",
                why: format!(
                    "tissue_attenuation {} must be in (0, 1]",
                    self.tissue_attenuation
                ),
            });
        }
        Ok(())
    }
}

/// On-axis field magnitude at the pose's axial distance, in oersted.
pub fn coil_field(coil: &CoilSpec, pose: &Pose, current: f64) -> f64 {
    coil.field_per_ampere(pose.axial_distance) * current
}

/// Combined angular misalignment gain, the product of the per-plane
/// interpolated gains. Rotation about the film long axis has no effect.
pub fn angular_gain(
    xz: &GainTable,
    yz: &GainTable,
    theta_xz: f64,
    theta_yz: f64,
) -> Result<f64, ChannelError> {
    for angle in [theta_xz, theta_yz] {
        if !(0.0..=90.0).contains(&angle) {
            return Err(ChannelError::AngleOutOfRange(angle));
        }
    }
    Ok(xz.eval(theta_xz) * yz.eval(theta_yz))
}

/// Lateral misalignment gain. Offsets beyond the table are clamped to the
/// last knot; the second return value flags that extrapolation.
pub fn lateral_gain(table: &GainTable, offset: f64) -> Result<(f64, bool), ChannelError> {
    if offset < 0.0 {
        return Err(ChannelError::NegativeOffset(offset));
    }
    Ok((table.eval(offset), table.beyond_range(offset)))
}

/// Resonant settling factor in [0, 1] at `t_since_edge` seconds after a
/// field edge. Rising edges relax toward 1, falling edges decay toward 0
/// with the same time constant.
pub fn ringup_envelope(t_since_edge: f64, film: &MEFilmSpec, rising: bool) -> f64 {
    let tau = film.ringup_tau_cycles() / film.resonant_freq;
    let decay = (-t_since_edge / tau).exp();
    if rising {
        1.0 - decay
    } else {
        decay
    }
}

/// Inter-film coupling factor per implant: films closer than 8 mm see a
/// small flux reduction, at most 3%.
pub fn coupling_perturbation(poses: &[Pose]) -> Result<Vec<f64>, ChannelError> {
    const FULL_SPACING: f64 = 8e-3;
    const MAX_DROP: f64 = 0.03;
    let mut factors = vec![1.0f64; poses.len()];
    for i in 0..poses.len() {
        for j in (i + 1)..poses.len() {
            let dz = poses[i].axial_distance - poses[j].axial_distance;
            let dl = poses[i].lateral_offset - poses[j].lateral_offset;
            let spacing = (dz * dz + dl * dl).sqrt();
            if spacing == 0.0 {
                return Err(ChannelError::CoincidentPoses(i, j));
            }
            if spacing < FULL_SPACING {
                let factor = 1.0 - MAX_DROP * (1.0 - spacing / FULL_SPACING);
                factors[i] = factors[i].min(factor);
                factors[j] = factors[j].min(factor);
            }
        }
    }
    Ok(factors)
}

/// Static channel state for one scene: everything about an implant's
/// received voltage except the TX schedule level and settling.
#[derive(Clone, Debug)]
pub struct ChannelModel {
    pub coil: CoilSpec,
    pub film: MEFilmSpec,
    pub config: ChannelConfig,
    poses: Vec<Pose>,
    /// Settled open-circuit amplitude at full drive per implant, volts.
    full_amplitudes: Vec<f64>,
    /// Lateral offsets beyond the gain table, flagged for the trace.
    lateral_clamped: Vec<bool>,
}

impl ChannelModel {
    pub fn new(
        coil: CoilSpec,
        film: MEFilmSpec,
        config: ChannelConfig,
        poses: Vec<Pose>,
    ) -> Result<Self, ChannelError> {
        coil.validate()?;
        film.validate()?;
        config.validate()?;
        for pose in &poses {
            pose.validate()?;
        }
        let coupling = coupling_perturbation(&poses)?;
        let mut full_amplitudes = Vec::with_capacity(poses.len());
        let mut lateral_clamped = Vec::with_capacity(poses.len());
        for (pose, coupling) in poses.iter().zip(&coupling) {
            let field = coil_field(&coil, pose, coil.drive_current_peak) * config.tissue_attenuation;
            let ang = angular_gain(
                &config.angular_xz,
                &config.angular_yz,
                pose.theta_xz,
                pose.theta_yz,
            )?;
            let (lat, clamped) = lateral_gain(&config.lateral, pose.lateral_offset)?;
            full_amplitudes.push(film.voltage_coefficient * field * ang * lat * coupling);
            lateral_clamped.push(clamped);
        }
        Ok(Self {
            coil,
            film,
            config,
            poses,
            full_amplitudes,
            lateral_clamped,
        })
    }

    pub fn implant_count(&self) -> usize {
        self.poses.len()
    }

    pub fn pose(&self, idx: usize) -> Result<&Pose, ChannelError> {
        self.poses.get(idx).ok_or(ChannelError::UnknownImplant(idx))
    }

    /// Settled open-circuit amplitude at ASK level 1.0, volts.
    pub fn full_amplitude(&self, idx: usize) -> Result<f64, ChannelError> {
        self.full_amplitudes
            .get(idx)
            .copied()
            .ok_or(ChannelError::UnknownImplant(idx))
    }

    pub fn lateral_clamped(&self, idx: usize) -> bool {
        self.lateral_clamped.get(idx).copied().unwrap_or(false)
    }

    /// Open-circuit envelope amplitude at time `t` under `schedule`,
    /// including the resonant settling through every segment edge.
    pub fn received_voltage(
        &self,
        schedule: &FieldSchedule,
        idx: usize,
        t: f64,
    ) -> Result<f64, ChannelError> {
        let full = self.full_amplitude(idx)?;
        let tau = self.film.ringup_tau_cycles() * self.coil.carrier_period();
        let mut env = 0.0;
        let mut elapsed = 0.0;
        for segment in schedule.segments() {
            let seg_duration = segment.cycles as f64 * self.coil.carrier_period();
            let target = full * segment.level;
            let dt = if t < elapsed + seg_duration {
                t - elapsed
            } else {
                seg_duration
            };
            env = target + (env - target) * (-dt / tau).exp();
            elapsed += seg_duration;
            if t < elapsed {
                break;
            }
        }
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downlink::{FieldSchedule, Segment};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const CARRIER: f64 = 330e3;

    #[test]
    fn coil_field_zero_drive() {
        let coil = CoilSpec::default();
        assert_eq!(coil_field(&coil, &Pose::axial(0.01), 0.0), 0.0);
    }

    #[test]
    fn coil_field_center_to_radius_ratio() {
        // Closed-form loop formula: B(0)/B(R) = (2R^2 / R^2)^1.5 = 2^1.5.
        let coil = CoilSpec::default();
        let b0 = coil_field(&coil, &Pose::axial(0.0), 1.0);
        let br = coil_field(&coil, &Pose::axial(coil.radius), 1.0);
        assert_relative_eq!(b0 / br, 2.0_f64.powf(1.5), epsilon = 1e-12);
    }

    #[test]
    fn coil_field_safety_point_calibration() {
        // Drive chosen so the field at 60 mm is 0.1 mT, i.e. 1 Oe in air.
        let coil = CoilSpec::default();
        let drive = coil.current_for_axial_field(0.06, 1.0);
        let field = coil_field(&coil, &Pose::axial(0.06), drive);
        assert_relative_eq!(field, 1.0, epsilon = 1e-12);
        let tesla = field / OERSTED_PER_TESLA;
        assert_relative_eq!(tesla, 1.0e-4, epsilon = 1e-16);
    }

    #[test]
    fn coil_field_strictly_decreasing_in_z() {
        let coil = CoilSpec::default();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let z = i as f64 * 1e-3;
            let b = coil_field(&coil, &Pose::axial(z), 1.0);
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn angular_gain_ideal_alignment() {
        let t = GainTable::default_angular();
        assert_eq!(angular_gain(&t, &t, 0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn angular_gain_paper_anchor_60_deg() {
        let t = GainTable::default_angular();
        assert_relative_eq!(angular_gain(&t, &t, 60.0, 0.0).unwrap(), 0.80, epsilon = 1e-12);
    }

    #[test]
    fn angular_gain_45_deg_between_knots() {
        let t = GainTable::default_angular();
        let g45 = angular_gain(&t, &t, 45.0, 0.0).unwrap();
        let g30 = angular_gain(&t, &t, 30.0, 0.0).unwrap();
        let g60 = angular_gain(&t, &t, 60.0, 0.0).unwrap();
        assert!(g45 >= 45.0_f64.to_radians().cos());
        assert!(g45 <= 1.0);
        assert!(g60 < g45 && g45 < g30, "not monotone: {g60} {g45} {g30}");
    }

    #[test]
    fn angular_gain_rejects_out_of_range() {
        let t = GainTable::default_angular();
        assert_eq!(
            angular_gain(&t, &t, 91.0, 0.0),
            Err(ChannelError::AngleOutOfRange(91.0))
        );
        assert_eq!(
            angular_gain(&t, &t, 0.0, -1.0),
            Err(ChannelError::AngleOutOfRange(-1.0))
        );
    }

    #[test]
    fn lateral_gain_anchors() {
        let t = GainTable::default_lateral();
        assert_eq!(lateral_gain(&t, 0.0).unwrap(), (1.0, false));
        let (g15, clamped) = lateral_gain(&t, 0.015).unwrap();
        assert_relative_eq!(g15, 0.80, epsilon = 1e-12);
        assert!(!clamped);
        let (g75, _) = lateral_gain(&t, 0.0075).unwrap();
        assert!(g75 > 0.80 && g75 < 1.0, "{g75}");
    }

    #[test]
    fn lateral_gain_clamps_beyond_table() {
        let t = GainTable::default_lateral();
        let (g, clamped) = lateral_gain(&t, 0.05).unwrap();
        assert_eq!(g, 0.30);
        assert!(clamped);
    }

    #[test]
    fn ringup_trivial_and_anchors() {
        let film = MEFilmSpec::default();
        assert_eq!(ringup_envelope(0.0, &film, true), 0.0);
        // 15 cycles after a rising edge the envelope has settled to >= 95%.
        let t15 = 15.0 / CARRIER;
        assert!(ringup_envelope(t15, &film, true) >= 0.95);
        // One time constant: 1 - 1/e.
        let tau = film.ringup_tau_cycles() / CARRIER;
        assert_relative_eq!(
            ringup_envelope(tau, &film, true),
            1.0 - (-1.0_f64).exp(),
            epsilon = 1e-12
        );
        // Falling edge mirrors the rising one.
        assert_relative_eq!(
            ringup_envelope(tau, &film, false),
            (-1.0_f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn coupling_single_and_spaced() {
        let single = coupling_perturbation(&[Pose::axial(0.02)]).unwrap();
        assert_eq!(single, vec![1.0]);
        let spaced = coupling_perturbation(&[Pose::axial(0.02), Pose::axial(0.03)]).unwrap();
        assert_eq!(spaced, vec![1.0, 1.0]);
    }

    #[test]
    fn coupling_ramp_midpoint() {
        // 4 mm spacing is the midpoint of the 8 mm ramp: 1 - 0.03/2.
        let factors = coupling_perturbation(&[Pose::axial(0.02), Pose::axial(0.024)]).unwrap();
        assert_relative_eq!(factors[0], 0.985, epsilon = 1e-12);
        assert_relative_eq!(factors[1], 0.985, epsilon = 1e-12);
    }

    #[test]
    fn coupling_coincident_rejected() {
        let err = coupling_perturbation(&[Pose::axial(0.02), Pose::axial(0.02)]).unwrap_err();
        assert_eq!(err, ChannelError::CoincidentPoses(0, 1));
    }

    fn model_with(poses: Vec<Pose>, drive: f64) -> ChannelModel {
        let coil = CoilSpec {
            drive_current_peak: drive,
            ..CoilSpec::default()
        };
        ChannelModel::new(coil, MEFilmSpec::default(), ChannelConfig::default(), poses).unwrap()
    }

    #[test]
    fn received_voltage_1v5_at_40mm_calibration() {
        // Minimum operating amplitude at the maximum distance: calibrate the
        // drive so 40 mm receives exactly 1.5 V.
        let coil = CoilSpec::default();
        let film = MEFilmSpec::default();
        let drive = 1.5 / (film.voltage_coefficient * coil.field_per_ampere(0.04));
        let model = model_with(vec![Pose::axial(0.04)], drive);
        assert_relative_eq!(model.full_amplitude(0).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn received_voltage_zero_after_field_off() {
        let model = model_with(vec![Pose::axial(0.02)], 10.0);
        let schedule = FieldSchedule::from_segments(vec![
            Segment { cycles: 200, level: 1.0 },
            Segment { cycles: 200, level: 0.0 },
        ]);
        let period = 1.0 / CARRIER;
        // Deep into the off segment, far past the settle time.
        let v = model.received_voltage(&schedule, 0, 390.0 * period).unwrap();
        assert!(v < 1e-6, "{v}");
    }

    #[test]
    fn received_voltage_ask_half_depth() {
        let model = model_with(vec![Pose::axial(0.02)], 10.0);
        let schedule = FieldSchedule::from_segments(vec![
            Segment { cycles: 200, level: 1.0 },
            Segment { cycles: 200, level: 0.5 },
        ]);
        let period = 1.0 / CARRIER;
        let high = model.received_voltage(&schedule, 0, 199.0 * period).unwrap();
        let low = model.received_voltage(&schedule, 0, 399.0 * period).unwrap();
        assert_relative_eq!(low / high, 0.5, epsilon = 1e-5);
    }

    #[test]
    fn received_voltage_unknown_implant() {
        let model = model_with(vec![Pose::axial(0.02)], 1.0);
        let schedule = FieldSchedule::from_segments(vec![Segment { cycles: 10, level: 1.0 }]);
        assert!(matches!(
            model.received_voltage(&schedule, 3, 0.0),
            Err(ChannelError::UnknownImplant(3))
        ));
    }

    #[test]
    fn theta_z_never_changes_amplitude() {
        for theta_z in [0.0, 30.0, 60.0, 90.0] {
            let pose = Pose {
                theta_z,
                ..Pose::axial(0.025)
            };
            let model = model_with(vec![pose], 5.0);
            let reference = model_with(vec![Pose::axial(0.025)], 5.0);
            assert_eq!(
                model.full_amplitude(0).unwrap(),
                reference.full_amplitude(0).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn amplitude_nonincreasing_in_each_misalignment(
            z in 0.005f64..0.05,
            dz in 0.001f64..0.01,
            theta in 0.0f64..80.0,
            dtheta in 1.0f64..10.0,
            lat in 0.0f64..0.02,
            dlat in 0.001f64..0.008,
        ) {
            let base = Pose { axial_distance: z, lateral_offset: lat, theta_xz: theta, theta_yz: theta, theta_z: 0.0 };
            let v0 = model_with(vec![base], 5.0).full_amplitude(0).unwrap();
            let deeper = Pose { axial_distance: z + dz, ..base };
            prop_assert!(model_with(vec![deeper], 5.0).full_amplitude(0).unwrap() <= v0);
            let turned_xz = Pose { theta_xz: theta + dtheta, ..base };
            prop_assert!(model_with(vec![turned_xz], 5.0).full_amplitude(0).unwrap() <= v0);
            let turned_yz = Pose { theta_yz: theta + dtheta, ..base };
            prop_assert!(model_with(vec![turned_yz], 5.0).full_amplitude(0).unwrap() <= v0);
            let shifted = Pose { lateral_offset: lat + dlat, ..base };
            prop_assert!(model_with(vec![shifted], 5.0).full_amplitude(0).unwrap() <= v0);
        }

        #[test]
        fn per_plane_gain_dominates_cosine_below_60(theta in 0.0f64..=60.0) {
            let t = GainTable::default_angular();
            prop_assert!(t.eval(theta) >= theta.to_radians().cos() - 1e-12);
        }

        #[test]
        fn coupling_within_three_percent(
            z0 in 0.01f64..0.04,
            gap in 0.0005f64..0.02,
            lat in 0.0f64..0.01,
        ) {
            let poses = vec![
                Pose::axial(z0),
                Pose { axial_distance: z0 + gap, lateral_offset: lat, ..Pose::axial(0.0) },
            ];
            for factor in coupling_perturbation(&poses).unwrap() {
                prop_assert!((0.97..=1.0).contains(&factor));
            }
        }

        #[test]
        fn envelope_in_unit_range(t_cycles in 0.0f64..200.0, rising in proptest::bool::ANY) {
            let film = MEFilmSpec::default();
            let f = ringup_envelope(t_cycles / CARRIER, &film, rising);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
