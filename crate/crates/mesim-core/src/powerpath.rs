//! Implant power chain: active rectifier with watchdog outputs, adaptive
//! switched-capacitor converter with storage regulation, always-on voltage
//! selector, LDO/POR, and per-implant energy ledger.
//!
//! The converter is a 4x charge pump abstracted to a per-step
//! charge-transfer limit; regulation disconnects the storage capacitor at
//! the supply target and reconnects 50 mV below it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimengine::driver_efficiency;

/// Rectifier voltage conversion ratio.
pub const RECT_EFFICIENCY: f64 = 0.95;
/// Rectifier drop, volts.
pub const RECT_DROP: f64 = 0.1;
/// Switched-capacitor converter efficiency.
pub const CONVERTER_EFFICIENCY: f64 = 0.8;
/// Charge-pump output ceiling as a multiple of the rectified voltage.
pub const PUMP_RATIO: f64 = 4.0;
/// Regulation reconnect hysteresis, volts.
pub const REGULATION_HYSTERESIS: f64 = 0.05;
/// SoC idle consumption, watts.
pub const QUIESCENT_POWER: f64 = 9e-6;
/// Consecutive carrier-absent cycles before a notch is declared.
pub const NOTCH_DETECT_CYCLES: u32 = 16;
/// Minimum supply of the stimulation driver, volts.
pub const DRIVER_MIN_SUPPLY: f64 = 1.5;
/// Stimulation supply margin over the programmed amplitude.
pub const SUPPLY_MARGIN: f64 = 1.1;
/// LDO headroom between V_DD_H and the 1.0 V logic supply.
pub const LDO_DROPOUT: f64 = 0.1;
/// Nominal logic supply, volts.
pub const VDD_L_NOMINAL: f64 = 1.0;
/// POR fires when V_DD_L stays within this band of nominal...
pub const POR_BAND: f64 = 0.05;
/// ...for this many carrier cycles.
pub const POR_STABLE_CYCLES: u32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("available power {0} W must be >= 0")]
    NegativePower(f64),
    #[error("invalid power config: {0}")]
    InvalidConfig(String),
}

/// Tunable power-chain parameters; defaults match the module constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerConfig {
    pub rect_efficiency: f64,
    pub rect_drop: f64,
    /// Rectified-node decay time constant when the source sags, seconds
    /// (hold capacitor discharging into the chip load).
    pub rect_decay_tau: f64,
    pub converter_efficiency: f64,
    pub pump_ratio: f64,
    pub hysteresis: f64,
    pub quiescent_power: f64,
    pub notch_detect_cycles: u32,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            rect_efficiency: RECT_EFFICIENCY,
            rect_drop: RECT_DROP,
            rect_decay_tau: 100e-6,
            converter_efficiency: CONVERTER_EFFICIENCY,
            pump_ratio: PUMP_RATIO,
            hysteresis: REGULATION_HYSTERESIS,
            quiescent_power: QUIESCENT_POWER,
            notch_detect_cycles: NOTCH_DETECT_CYCLES,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<(), PowerError> {
        let checks = [
            ("rect_efficiency", self.rect_efficiency, 0.0, 1.0),
            ("converter_efficiency", self.converter_efficiency, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !(v > lo && v <= hi) {
                return Err(PowerError::InvalidConfig(format!(
                    "{name} {v} must be in ({lo}, {hi}]"
                )));
            }
        }
        if self.rect_drop < 0.0 || self.rect_decay_tau <= 0.0 || self.pump_ratio < 1.0 {
            return Err(PowerError::InvalidConfig(
                "rect_drop >= 0, rect_decay_tau > 0, pump_ratio >= 1 required".into(),
            ));
        }
        if self.notch_detect_cycles == 0 {
            return Err(PowerError::InvalidConfig("notch_detect_cycles must be > 0".into()));
        }
        Ok(())
    }
}

/// Stimulation supply regulation point: 10% above the programmed
/// amplitude, floored at the driver minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationTarget {
    pub v_amp_ref: f64,
}

impl RegulationTarget {
    pub fn v_supply_target(&self) -> f64 {
        DRIVER_MIN_SUPPLY.max(SUPPLY_MARGIN * self.v_amp_ref)
    }
}

/// Per-implant power state and energy ledger.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerState {
    pub v_rect: f64,
    pub v_store: f64,
    pub v_dd_h: f64,
    pub v_dd_l: f64,
    pub por_fired: bool,
    pub c_store: f64,
    /// Energy drawn from the film, joules.
    pub energy_in: f64,
    /// Energy delivered to the stimulation load, joules.
    pub energy_out: f64,
    /// Conversion, driver and logic losses, joules.
    pub energy_lost: f64,
    scpc_connected: bool,
}

impl PowerState {
    pub fn new(c_store: f64) -> Self {
        Self {
            v_rect: 0.0,
            v_store: 0.0,
            v_dd_h: 0.0,
            v_dd_l: 0.0,
            por_fired: false,
            c_store,
            energy_in: 0.0,
            energy_out: 0.0,
            energy_lost: 0.0,
            scpc_connected: true,
        }
    }

    /// Energy currently held on the storage capacitor, joules.
    pub fn stored_energy(&self) -> f64 {
        0.5 * self.c_store * self.v_store * self.v_store
    }

    /// Ledger residual: in - out - lost - stored. Zero up to float
    /// accumulation for a cold-started implant.
    pub fn ledger_residual(&self) -> f64 {
        self.energy_in - self.energy_out - self.energy_lost - self.stored_energy()
    }

    /// Draw `energy` joules from the storage capacitor.
    pub fn discharge_store(&mut self, energy: f64) {
        let e = (self.stored_energy() - energy).max(0.0);
        self.v_store = (2.0 * e / self.c_store).sqrt();
    }
}

/// Steady-state rectified voltage for a given ME amplitude.
pub fn rectify(v_me_amplitude: f64, config: &PowerConfig) -> f64 {
    (config.rect_efficiency * v_me_amplitude - config.rect_drop).max(0.0)
}

/// Advance the rectified node one step: it follows a rising source
/// immediately and decays toward a lower one with the configured RC.
pub fn rect_step(v_rect: f64, v_me_amplitude: f64, dt: f64, config: &PowerConfig) -> f64 {
    let target = rectify(v_me_amplitude, config);
    if target >= v_rect {
        target
    } else {
        target + (v_rect - target) * (-dt / config.rect_decay_tau).exp()
    }
}

/// Always-on voltage selector: output follows the higher of the rectified
/// voltage and the stimulation supply.
pub fn supply_select(v_rect: f64, v_store: f64) -> f64 {
    v_rect.max(v_store)
}

/// LDO output from the selected high supply.
pub fn ldo_output(v_dd_h: f64) -> f64 {
    (v_dd_h - LDO_DROPOUT).clamp(0.0, VDD_L_NOMINAL)
}

/// Rectifier-comparator watchdog event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WatchdogEvent {
    /// Carrier absent for the detection threshold.
    NotchDetected,
    /// Carrier returned after a detected notch.
    CarrierResumed,
}

/// Counts consecutive carrier-absent cycles and reports notches. Gaps
/// shorter than the threshold (including ASK low bits, where the carrier
/// is still present) produce no events.
#[derive(Clone, Debug, Default)]
pub struct Watchdog {
    absent_run: u32,
}

impl Watchdog {
    pub fn on_cycle(&mut self, carrier_present: bool, threshold: u32) -> Option<WatchdogEvent> {
        if carrier_present {
            let resumed = self.absent_run >= threshold;
            self.absent_run = 0;
            if resumed {
                return Some(WatchdogEvent::CarrierResumed);
            }
            None
        } else {
            self.absent_run += 1;
            if self.absent_run == threshold {
                return Some(WatchdogEvent::NotchDetected);
            }
            None
        }
    }
}

/// Scan a carrier-presence stream for notches. Returns `(detect_cycle,
/// resume_cycle)` per notch; a gap still open at the end of the stream
/// resumes at `stream.len()`.
pub fn watchdog_notches(stream: &[bool], threshold: u32) -> Vec<(u64, u64)> {
    let mut watchdog = Watchdog::default();
    let mut notches = Vec::new();
    let mut pending: Option<u64> = None;
    for (cycle, &present) in stream.iter().enumerate() {
        match watchdog.on_cycle(present, threshold) {
            Some(WatchdogEvent::NotchDetected) => pending = Some(cycle as u64),
            Some(WatchdogEvent::CarrierResumed) => {
                if let Some(detect) = pending.take() {
                    notches.push((detect, cycle as u64));
                }
            }
            None => {}
        }
    }
    if let Some(detect) = pending {
        notches.push((detect, stream.len() as u64));
    }
    notches
}

/// One regulation step of the switched-capacitor converter.
///
/// Charges the storage capacitor from the available film power while below
/// the supply target, limited by the converter efficiency and the 4x pump
/// ceiling; disconnects at the target and reconnects one hysteresis band
/// below it. Ledger entries split the drawn energy into stored and lost.
pub fn scpc_step(
    state: &mut PowerState,
    dt: f64,
    target: &RegulationTarget,
    available_power: f64,
) -> Result<(), PowerError> {
    scpc_step_with(state, dt, target, available_power, &PowerConfig::default())
}

pub fn scpc_step_with(
    state: &mut PowerState,
    dt: f64,
    target: &RegulationTarget,
    available_power: f64,
    config: &PowerConfig,
) -> Result<(), PowerError> {
    if available_power < 0.0 {
        return Err(PowerError::NegativePower(available_power));
    }
    let v_target = target.v_supply_target();
    if state.v_store >= v_target {
        state.scpc_connected = false;
    } else if state.v_store < v_target - config.hysteresis {
        state.scpc_connected = true;
    }
    if !state.scpc_connected {
        return Ok(());
    }
    let ceiling = config.pump_ratio * state.v_rect;
    if state.v_store >= ceiling {
        return Ok(());
    }
    let delta_e = config.converter_efficiency * available_power * dt;
    if delta_e <= 0.0 {
        return Ok(());
    }
    let old = state.v_store;
    let mut new_v = (old * old + 2.0 * delta_e / state.c_store).sqrt();
    if new_v > ceiling {
        new_v = ceiling.max(old);
    }
    let stored_delta = 0.5 * state.c_store * (new_v * new_v - old * old);
    let drawn = stored_delta / config.converter_efficiency;
    state.v_store = new_v;
    state.energy_in += drawn;
    state.energy_lost += drawn - stored_delta;
    Ok(())
}

/// Idle SoC consumption over `dt`. The energy comes from the film when the
/// rectified voltage carries the selector, from storage otherwise.
pub fn quiescent_drain(state: &mut PowerState, dt: f64, stimulating: bool) {
    quiescent_drain_with(state, dt, stimulating, &PowerConfig::default())
}

pub fn quiescent_drain_with(
    state: &mut PowerState,
    dt: f64,
    stimulating: bool,
    config: &PowerConfig,
) {
    if stimulating || dt <= 0.0 {
        return;
    }
    let energy = config.quiescent_power * dt;
    if state.v_rect >= state.v_store {
        state.energy_in += energy;
    } else {
        state.discharge_store(energy);
    }
    state.energy_lost += energy;
}

/// POR event kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PorEvent {
    /// V_DD_L held 1.0 V within 5% for the stability window.
    Fired,
    /// V_DD_L dropped out of band after a POR; the next recovery is a cold
    /// restart.
    BrownOut,
}

/// Power-on-reset monitor: fires once per cold start, re-arms on brown-out.
#[derive(Clone, Debug, Default)]
pub struct PorMonitor {
    stable_run: u32,
    fired: bool,
}

impl PorMonitor {
    pub fn on_cycle(&mut self, v_dd_l: f64) -> Option<PorEvent> {
        let in_band = (v_dd_l - VDD_L_NOMINAL).abs() <= POR_BAND * VDD_L_NOMINAL;
        if in_band {
            self.stable_run += 1;
            if !self.fired && self.stable_run >= POR_STABLE_CYCLES {
                self.fired = true;
                return Some(PorEvent::Fired);
            }
            None
        } else {
            self.stable_run = 0;
            if self.fired {
                self.fired = false;
                return Some(PorEvent::BrownOut);
            }
            None
        }
    }
}

/// Closed-form storage-capacitor sizing from the regulation droop energy
/// balance: a regulated pulse of `amplitude` into `load_r` lasting
/// `pulse_seconds` (total conduction time) drawn through the driver must
/// take the supply from `v_regulated` down to exactly `v_after`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CStoreDerivation {
    pub amplitude: f64,
    pub load_r: f64,
    pub pulse_seconds: f64,
    pub v_regulated: f64,
    pub v_after: f64,
    pub driver_eta: f64,
    pub load_energy: f64,
    pub drawn_energy: f64,
    pub c_store: f64,
}

pub fn derive_c_store(
    amplitude: f64,
    load_r: f64,
    pulse_seconds: f64,
    v_regulated: f64,
    v_after: f64,
) -> CStoreDerivation {
    let driver_eta = driver_efficiency(amplitude);
    let load_energy = amplitude * amplitude / load_r * pulse_seconds;
    let drawn_energy = load_energy / driver_eta;
    let c_store = 2.0 * drawn_energy / (v_regulated * v_regulated - v_after * v_after);
    CStoreDerivation {
        amplitude,
        load_r,
        pulse_seconds,
        v_regulated,
        v_after,
        driver_eta,
        load_energy,
        drawn_energy,
        c_store,
    }
}

/// Default storage capacitance: 2.5 V, 1.2 ms-per-phase biphasic pulse
/// into 1 kOhm dropping a 2.75 V supply to 2.15 V.
pub fn default_c_store() -> f64 {
    derive_c_store(2.5, 1000.0, 2.4e-3, 2.75, 2.15).c_store
}
