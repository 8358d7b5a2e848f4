//! Static link-budget analysis over scenes: power transfer efficiency,
//! safe-power limits, operating-region maps, and the distance/volume
//! figure of merit, anchored to measured datasets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelConfig, ChannelError, ChannelModel, CoilSpec, MEFilmSpec, Pose};
use crate::exec::{map_indexed, Execution};

/// Received amplitude below which the implant cannot operate, volts.
pub const OPERATING_THRESHOLD: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("TX drive power must be > 0")]
    ZeroTxPower,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Measured anchor points. The depth-efficiency table (simulation context)
/// and the bench peak efficiency are separate datasets and are never mixed
/// in one interpolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnchorDataset {
    /// Simulated PTE versus depth: (meters, fraction).
    pub pte_vs_depth: Vec<(f64, f64)>,
    /// Bench peak PTE at the coil center with ideal alignment.
    pub peak_pte: f64,
    /// Safety-limited receivable power: (meters, watts).
    pub safe_power: Vec<(f64, f64)>,
    /// 13.56 MHz inductive comparison points: (meters, watts).
    pub inductive_reference: Vec<(f64, f64)>,
    /// Safety field anchor: (depth meters, tesla).
    pub field_limit: (f64, f64),
}

impl Default for AnchorDataset {
    fn default() -> Self {
        Self {
            pte_vs_depth: vec![(0.010, 0.0167), (0.030, 0.0028)],
            peak_pte: 0.0103,
            safe_power: vec![(0.030, 3.8e-3)],
            inductive_reference: vec![(0.030, 0.4e-3)],
            field_limit: (0.060, 1.0e-4),
        }
    }
}

impl AnchorDataset {
    /// Reference power of the inductive comparison at `depth`, if anchored.
    pub fn inductive_power_at(&self, depth: f64) -> Option<f64> {
        self.inductive_reference
            .iter()
            .find(|(d, _)| (d - depth).abs() < 1e-9)
            .map(|(_, p)| *p)
    }
}

/// Coil, film and channel tables without implants: evaluates the settled
/// received amplitude at arbitrary poses for region maps.
#[derive(Clone, Debug)]
pub struct SceneTemplate {
    pub coil: CoilSpec,
    pub film: MEFilmSpec,
    pub channel: ChannelConfig,
}

impl SceneTemplate {
    /// Settled open-circuit amplitude at a single pose, full drive.
    pub fn amplitude(&self, pose: &Pose) -> Result<f64, ChannelError> {
        let model = ChannelModel::new(
            self.coil.clone(),
            self.film.clone(),
            self.channel.clone(),
            vec![*pose],
        )?;
        model.full_amplitude(0)
    }
}

/// One evaluated grid point of an operating-region map.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegionPoint {
    pub pose: Pose,
    pub amplitude: f64,
    pub pass: bool,
}

/// Shmoo map over pose grid points: pass where the received amplitude
/// reaches the 1.5 V operating threshold.
pub fn operating_region(
    template: &SceneTemplate,
    points: &[Pose],
    exec: Execution,
) -> Result<Vec<RegionPoint>, ChannelError> {
    let evaluated = map_indexed(exec, points.len(), |i| {
        template.amplitude(&points[i]).map(|amplitude| RegionPoint {
            pose: points[i],
            amplitude,
            pass: amplitude >= OPERATING_THRESHOLD,
        })
    });
    evaluated.into_iter().collect()
}

/// Link-budget analyzer for one scene, calibrated so that ideal center
/// alignment reproduces the bench peak efficiency exactly.
#[derive(Clone, Debug)]
pub struct LinkBudget {
    model: ChannelModel,
    pub anchors: AnchorDataset,
    calibration: f64,
}

impl LinkBudget {
    pub fn new(model: ChannelModel, anchors: AnchorDataset) -> Result<Self, LinkError> {
        let tx_power = model.coil.tx_power();
        if !(tx_power > 0.0) {
            return Err(LinkError::ZeroTxPower);
        }
        // Raw matched-load efficiency at the coil center, ideal alignment,
        // in air; the anchor peak is the same quantity measured.
        let v_center = model.film.voltage_coefficient
            * model.coil.field_per_ampere(0.0)
            * model.coil.drive_current_peak;
        let raw_center = matched_load_power(v_center, model.film.source_resistance) / tx_power;
        let calibration = anchors.peak_pte / raw_center;
        Ok(Self {
            model,
            anchors,
            calibration,
        })
    }

    /// Power transfer efficiency for one implant: matched-load receivable
    /// power over TX coil power, scaled to the measured peak anchor.
    pub fn pte(&self, implant_index: usize) -> Result<f64, LinkError> {
        let v = self.model.full_amplitude(implant_index)?;
        Ok(self.pte_for_amplitude(v))
    }

    /// Efficiency for an arbitrary received amplitude (0 V while the field
    /// is off gives 0).
    pub fn pte_for_amplitude(&self, v_oc: f64) -> f64 {
        let received = matched_load_power(v_oc, self.model.film.source_resistance);
        self.calibration * received / self.model.coil.tx_power()
    }

    /// Maximum safely receivable power at `depth`, interpolated along the
    /// safety-limited field curve through the 30 mm anchor. Depths beyond
    /// the 60 mm field anchor clamp there; the flag reports the clamp.
    pub fn max_safe_power(&self, depth: f64) -> (f64, bool) {
        let (anchor_depth, anchor_power) = self.anchors.safe_power[0];
        let limit_depth = self.anchors.field_limit.0;
        let clamped = depth > limit_depth;
        let d = depth.min(limit_depth);
        let ratio = self.model.coil.field_per_ampere(d) / self.model.coil.field_per_ampere(anchor_depth);
        (anchor_power * ratio * ratio, clamped)
    }
}

/// Maximum power a source of amplitude `v` and resistance `r` can deliver
/// into a matched load: V_rms^2 / (4 R) = V^2 / (8 R).
pub fn matched_load_power(v_amplitude: f64, r_source: f64) -> f64 {
    v_amplitude * v_amplitude / (8.0 * r_source)
}

/// Max-distance over implant-volume figure of merit, in mm/mm^3.
pub fn figure_of_merit(max_distance_m: f64, implant_volume_m3: f64) -> f64 {
    let distance_mm = max_distance_m * 1e3;
    let volume_mm3 = implant_volume_m3 * 1e9;
    distance_mm / volume_mm3
}

/// Qualitative crossover check on externally supplied efficiency curves:
/// true when the first curve dominates the second at every area below the
/// threshold (both as `(area_mm2, pte)` points).
pub fn outperforms_below(
    me_curve: &[(f64, f64)],
    other_curve: &[(f64, f64)],
    area_threshold_mm2: f64,
) -> bool {
    me_curve
        .iter()
        .filter(|(area, _)| *area < area_threshold_mm2)
        .all(|(area, me_pte)| {
            other_curve
                .iter()
                .find(|(a, _)| (a - area).abs() < 1e-9)
                .map_or(true, |(_, other_pte)| me_pte >= other_pte)
        })
}
