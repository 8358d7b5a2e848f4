//! Scenario definition: the JSON schema describing a scene (coil, film,
//! implants, TX schedule) plus validation and resolution into the static
//! structures the kernel runs on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelConfig, ChannelModel, CoilSpec, MEFilmSpec, Pose};
use crate::downlink::{modulate, FieldSchedule, PacketFormat, TxPlan};
use crate::identity::{generate_id, DeviceId, DEFAULT_NOISE_SIGMA};
use crate::powerpath::{default_c_store, PowerConfig};
use crate::stimengine::LoadModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

/// Replace the explicit drive current with one calibrated to produce a
/// target received amplitude at an ideally aligned axial distance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriveCalibration {
    pub axial_distance: f64,
    pub target_voltage: f64,
}

/// One implant entry: pose, identity source, load and storage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImplantSpec {
    pub name: String,
    pub pose: Pose,
    /// PUF device seed; the 8-bit ID is generated at POR.
    #[serde(default)]
    pub device_seed: Option<u64>,
    /// Fixed ID override as a binary string, e.g. "11010111".
    #[serde(default)]
    pub fixed_id: Option<String>,
    #[serde(default = "default_load")]
    pub load: LoadModel,
    /// Storage capacitance; defaults to the droop-derived value.
    #[serde(default)]
    pub c_store: Option<f64>,
}

fn default_load() -> LoadModel {
    LoadModel::resistive(1000.0)
}

/// Complete simulation scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub description: String,
    pub global_seed: u64,
    #[serde(default)]
    pub coil: CoilSpec,
    /// When present, overrides `coil.drive_current_peak`.
    #[serde(default)]
    pub drive_calibration: Option<DriveCalibration>,
    #[serde(default)]
    pub film: MEFilmSpec,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub power: PowerConfig,
    pub implants: Vec<ImplantSpec>,
    /// Accept scenes whose implants share an ID (both then accept the
    /// same packets).
    #[serde(default)]
    pub allow_collisions: bool,
    pub schedule: TxPlan,
    #[serde(default)]
    pub packet_format: PacketFormat,
    /// Envelope/power integration substeps per carrier cycle.
    #[serde(default = "default_substeps")]
    pub substeps_per_cycle: u32,
    /// Keep every K-th waveform sample in the trace.
    #[serde(default = "default_decimation")]
    pub trace_decimation: u32,
    /// PUF noise scale.
    #[serde(default = "default_noise_sigma")]
    pub puf_noise_sigma: f64,
}

fn default_substeps() -> u32 {
    1
}

fn default_decimation() -> u32 {
    10
}

fn default_noise_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

/// Scenario resolved into the kernel's static inputs.
#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub model: ChannelModel,
    pub schedule: FieldSchedule,
    /// Predicted post-POR ID per implant (the run regenerates them).
    pub ids: Vec<DeviceId>,
    pub c_stores: Vec<f64>,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Drive current after calibration, amperes.
    pub fn resolved_drive(&self) -> f64 {
        match &self.drive_calibration {
            Some(cal) => {
                cal.target_voltage
                    / (self.film.voltage_coefficient
                        * self.coil.field_per_ampere(cal.axial_distance)
                        * self.channel.tissue_attenuation)
            }
            None => self.coil.drive_current_peak,
        }
    }

    /// The ID each implant will settle on after POR.
    pub fn predicted_id(&self, implant: &ImplantSpec) -> Result<DeviceId, String> {
        match (&implant.fixed_id, implant.device_seed) {
            (Some(bits), None) => parse_id_bits(bits)
                .map(|bits| DeviceId { bits, stable: true })
                .ok_or_else(|| {
                    format!(
                        "implant '{}': fixed_id '{}' is not 8 binary digits",
                        implant.name, bits
                    )
                }),
            (None, Some(seed)) => Ok(generate_id(seed, true, self.puf_noise_sigma)
                .expect("POR-triggered generation")),
            _ => Err(format!(
                "implant '{}': exactly one of device_seed / fixed_id required",
                implant.name
            )),
        }
    }

    /// Validate everything and resolve into kernel inputs. Collects all
    /// violations rather than stopping at the first.
    pub fn resolve(&self) -> Result<ResolvedScenario, ScenarioError> {
        let mut violations = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            violations.push(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let mut coil = self.coil.clone();
        coil.drive_current_peak = self.resolved_drive();
        if let Err(e) = coil.validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.film.validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.channel.validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.power.validate() {
            violations.push(e.to_string());
        }
        if self.implants.is_empty() {
            violations.push("scenario needs at least one implant".into());
        }
        if self.substeps_per_cycle == 0 {
            violations.push("substeps_per_cycle must be >= 1".into());
        }
        if self.trace_decimation == 0 {
            violations.push("trace_decimation must be >= 1".into());
        }

        let mut ids = Vec::new();
        let mut c_stores = Vec::new();
        for implant in &self.implants {
            if let Err(e) = implant.pose.validate() {
                violations.push(format!("implant '{}': {e}", implant.name));
            }
            if let Err(e) = implant.load.validate() {
                violations.push(format!("implant '{}': {e}", implant.name));
            }
            let c_store = implant.c_store.unwrap_or_else(default_c_store);
            if !(c_store > 0.0) {
                violations.push(format!("implant '{}': c_store must be > 0", implant.name));
            }
            c_stores.push(c_store);
            match self.predicted_id(implant) {
                Ok(id) => ids.push(id),
                Err(e) => {
                    violations.push(e);
                    ids.push(DeviceId {
                        bits: 0,
                        stable: false,
                    });
                }
            }
        }
        if !self.allow_collisions {
            for i in 0..ids.len() {
                for j in (i + 1)..ids.len() {
                    if ids[i].stable && ids[j].stable && ids[i].bits == ids[j].bits {
                        violations.push(format!(
                            "implants '{}' and '{}' share ID {:08b} (set allow_collisions to permit)",
                            self.implants[i].name, self.implants[j].name, ids[i].bits
                        ));
                    }
                }
            }
        }

        let schedule = match modulate(&self.schedule, &self.packet_format) {
            Ok(s) => Some(s),
            Err(e) => {
                violations.push(format!("schedule: {e}"));
                None
            }
        };

        let poses: Vec<Pose> = self.implants.iter().map(|i| i.pose).collect();
        let model = match ChannelModel::new(coil, self.film.clone(), self.channel.clone(), poses) {
            Ok(m) => Some(m),
            Err(e) => {
                violations.push(e.to_string());
                None
            }
        };

        if !violations.is_empty() {
            return Err(ScenarioError::Validation(violations));
        }
        Ok(ResolvedScenario {
            scenario: self.clone(),
            model: model.unwrap(),
            schedule: schedule.unwrap(),
            ids,
            c_stores,
        })
    }
}

fn parse_id_bits(s: &str) -> Option<u8> {
    if s.len() != 8 || !s.bytes().all(|b| b == b'0' || b == b'1') {
        return None;
    }
    u8::from_str_radix(s, 2).ok()
}
