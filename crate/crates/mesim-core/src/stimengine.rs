//! Stimulation generation: register decode, mono/biphasic pulse drive
//! into a load model, storage-capacitor droop through the 90%-efficiency
//! driver, and post-pulse electrode shorting.
//!
//! All pulse timing is quantized to the 82.5 kHz stimulation clock
//! (4 carrier cycles per tick).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downlink::{StimMode, STIM_CLOCK_DIVIDER};
use crate::identity::RegisterFile;
use crate::powerpath::{PowerState, DRIVER_MIN_SUPPLY, REGULATION_HYSTERESIS, SUPPLY_MARGIN};

/// Amplitude step, volts per LSB (codes 1..=14 cover 0.25-3.5 V).
pub const AMP_VOLTS_PER_LSB: f64 = 0.25;
/// Highest usable amplitude code; 15 is reserved and clamps here.
pub const AMP_CODE_MAX: u8 = 14;
/// Pulse-width code map: base plus step per code.
pub const PW_BASE: f64 = 0.15e-3;
pub const PW_STEP: f64 = 0.07e-3;
/// Delay step: two stimulation-clock periods per code.
pub const DELAY_TICKS_PER_CODE: u64 = 2;
/// Lower clamp for free-form (non-code) pulse widths, seconds.
pub const MIN_FREE_PULSE_WIDTH: f64 = 50e-6;
/// Electrode shorting window: 4 RC or this cap, whichever is smaller.
pub const MAX_SHORT_WINDOW: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum StimError {
    #[error("storage at {v_store} V below the {required} V start gate")]
    Undervoltage { v_store: f64, required: f64 },
    #[error("invalid load: {0}")]
    InvalidLoad(String),
}

/// Decoded stimulation recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimSettings {
    /// Programmed amplitude, volts (0 disables the stimulus).
    pub amplitude: f64,
    /// Per-phase conduction time, seconds.
    pub pulse_width: f64,
    /// Start delay after the stimulation phase begins, seconds.
    pub delay: f64,
    pub mode: StimMode,
}

/// Decode the register file through the linear code maps. Returns the
/// settings and whether the reserved amplitude code 15 was clamped.
pub fn decode_settings(rf: &RegisterFile) -> (StimSettings, bool) {
    let clamped = rf.amp_code > AMP_CODE_MAX;
    let amp_code = rf.amp_code.min(AMP_CODE_MAX);
    let delay_ticks = DELAY_TICKS_PER_CODE * rf.delay_code as u64;
    (
        StimSettings {
            amplitude: AMP_VOLTS_PER_LSB * amp_code as f64,
            pulse_width: PW_BASE + PW_STEP * rf.pw_code as f64,
            delay: delay_ticks as f64 * STIM_CLOCK_DIVIDER as f64 / 330e3,
            mode: rf.mode,
        },
        clamped,
    )
}

/// Driver efficiency at a programmed amplitude: the supply regulates 10%
/// above the amplitude with a 1.5 V floor, and the LDO-based driver loses
/// the headroom.
pub fn driver_efficiency(amplitude: f64) -> f64 {
    amplitude / DRIVER_MIN_SUPPLY.max(SUPPLY_MARGIN * amplitude)
}

/// Electrode-facing load: resistive by default, optionally with a series
/// capacitance that accumulates residual charge across phases.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LoadModel {
    pub resistance: f64,
    pub series_capacitance: Option<f64>,
    /// Charge left on the series capacitance, coulombs.
    #[serde(default)]
    pub residual_charge: f64,
}

impl LoadModel {
    pub fn resistive(resistance: f64) -> Self {
        Self {
            resistance,
            series_capacitance: None,
            residual_charge: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), StimError> {
        if !(self.resistance > 0.0) {
            return Err(StimError::InvalidLoad(format!(
                "resistance {} must be > 0",
                self.resistance
            )));
        }
        if let Some(c) = self.series_capacitance {
            if !(c > 0.0) {
                return Err(StimError::InvalidLoad(format!(
                    "series_capacitance {c} must be > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Shorting the electrodes after a stimulus: the series capacitance
/// discharges through the load within 4 RC (capped at 1 ms) and the
/// residual charge is removed. Purely resistive loads are a no-op.
/// Returns the shorting window duration in seconds.
pub fn short_electrodes(load: &mut LoadModel) -> f64 {
    match load.series_capacitance {
        None => 0.0,
        Some(c) => {
            load.residual_charge = 0.0;
            (4.0 * load.resistance * c).min(MAX_SHORT_WINDOW)
        }
    }
}

/// One waveform sample at carrier-cycle resolution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WaveformSample {
    pub t: f64,
    pub v_load: f64,
    pub i_load: f64,
    pub v_store: f64,
}

/// Generated stimulus record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StimWaveform {
    pub settings: StimSettings,
    pub samples: Vec<WaveformSample>,
    /// Signed charge through the load per phase, coulombs.
    pub charge_phase1: f64,
    pub charge_phase2: f64,
    /// Energy into the load network, joules.
    pub energy_delivered: f64,
    /// Energy drawn from storage, joules.
    pub energy_drawn: f64,
    pub truncated: bool,
    /// Delay-to-first-drive, seconds (quantized).
    pub onset_delay: f64,
}

/// Where the engine stands inside the stimulation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EngineStage {
    Delay,
    Phase(u8),
    Shorting,
    Done,
}

/// Incremental pulse generator, stepped one carrier cycle at a time so the
/// kernel can interleave it with power and protocol state.
#[derive(Clone, Debug)]
pub struct StimEngine {
    settings: StimSettings,
    carrier_freq: f64,
    delay_cycles: u64,
    phase_cycles: u64,
    phases: u8,
    short_cycles: u64,
    cycle: u64,
    stage: EngineStage,
    charge: [f64; 2],
    energy_delivered: f64,
    energy_drawn: f64,
    truncated: bool,
    v_cap: f64,
}

/// Outcome of one engine step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StimStep {
    pub v_load: f64,
    pub i_load: f64,
    pub finished: bool,
    pub truncated: bool,
    /// Set on the step where phase 1 begins driving.
    pub fired: bool,
}

impl StimEngine {
    /// Quantized per-phase width in stimulation-clock ticks.
    pub fn width_ticks(pulse_width: f64, carrier_freq: f64) -> u64 {
        let clamped = pulse_width.max(MIN_FREE_PULSE_WIDTH);
        let tick = STIM_CLOCK_DIVIDER as f64 / carrier_freq;
        ((clamped / tick).round() as u64).max(1)
    }

    /// Gate the stimulus on the supply: storage must be at the regulation
    /// point before the first phase. Disconnect-based regulation holds the
    /// supply inside one hysteresis band below the target, so that band
    /// counts as regulated.
    pub fn start_gate(amplitude: f64) -> f64 {
        DRIVER_MIN_SUPPLY.max(SUPPLY_MARGIN * amplitude) - REGULATION_HYSTERESIS
    }

    /// Supply level below which a running pulse collapses and truncates.
    fn hold_gate(amplitude: f64) -> f64 {
        (SUPPLY_MARGIN * amplitude).min(DRIVER_MIN_SUPPLY)
    }

    pub fn new(
        settings: StimSettings,
        power: &PowerState,
        load: &LoadModel,
        carrier_freq: f64,
    ) -> Result<Self, StimError> {
        load.validate()?;
        if settings.amplitude > 0.0 {
            let required = Self::start_gate(settings.amplitude);
            if power.v_store < required {
                return Err(StimError::Undervoltage {
                    v_store: power.v_store,
                    required,
                });
            }
        }
        let tick_cycles = STIM_CLOCK_DIVIDER;
        let delay_ticks = (settings.delay * carrier_freq / tick_cycles as f64).round() as u64;
        let phases = match settings.mode {
            StimMode::Monophasic => 1,
            StimMode::Biphasic => 2,
        };
        let short_window = match load.series_capacitance {
            Some(c) => (4.0 * load.resistance * c).min(MAX_SHORT_WINDOW),
            None => 0.0,
        };
        let (phase_cycles, stage) = if settings.amplitude > 0.0 {
            (
                Self::width_ticks(settings.pulse_width, carrier_freq) * tick_cycles,
                EngineStage::Delay,
            )
        } else {
            // Nothing programmed: a flat waveform that completes at once.
            (0, EngineStage::Done)
        };
        Ok(Self {
            settings,
            carrier_freq,
            delay_cycles: delay_ticks * tick_cycles,
            phase_cycles,
            phases,
            short_cycles: (short_window * carrier_freq).ceil() as u64,
            cycle: 0,
            stage,
            charge: [0.0; 2],
            energy_delivered: 0.0,
            energy_drawn: 0.0,
            truncated: false,
            v_cap: 0.0,
        })
    }

    /// Quantized onset delay in seconds.
    pub fn onset_delay(&self) -> f64 {
        self.delay_cycles as f64 / self.carrier_freq
    }

    pub fn is_done(&self) -> bool {
        self.stage == EngineStage::Done
    }

    /// Advance one carrier cycle, drawing pulse energy from `power`.
    pub fn step(&mut self, power: &mut PowerState, load: &mut LoadModel) -> StimStep {
        let dt = 1.0 / self.carrier_freq;
        let mut out = StimStep {
            v_load: 0.0,
            i_load: 0.0,
            finished: false,
            truncated: false,
            fired: false,
        };
        match self.stage {
            EngineStage::Done => {
                out.finished = true;
                return out;
            }
            EngineStage::Delay => {
                if self.cycle >= self.delay_cycles {
                    self.stage = EngineStage::Phase(0);
                    out.fired = true;
                    self.cycle = 0;
                    return self.drive(power, load, dt, out);
                }
                self.cycle += 1;
                out
            }
            EngineStage::Phase(_) => self.drive(power, load, dt, out),
            EngineStage::Shorting => {
                // Residual charge bleeds off through the shorted electrodes.
                if let Some(c) = load.series_capacitance {
                    let tau = load.resistance * c;
                    self.v_cap *= (-dt / tau).exp();
                    load.residual_charge = c * self.v_cap;
                }
                self.cycle += 1;
                if self.cycle >= self.short_cycles {
                    // Shorting window over: residual fully removed.
                    load.residual_charge = 0.0;
                    self.v_cap = 0.0;
                    self.stage = EngineStage::Done;
                    out.finished = true;
                }
                out
            }
        }
    }

    fn drive(
        &mut self,
        power: &mut PowerState,
        load: &mut LoadModel,
        dt: f64,
        mut out: StimStep,
    ) -> StimStep {
        let EngineStage::Phase(phase) = self.stage else {
            return out;
        };
        let amp = self.settings.amplitude;
        if power.v_store < Self::hold_gate(amp) {
            // Supply collapsed mid-pulse.
            self.truncated = true;
            out.truncated = true;
            self.finish_drive(load);
            return out;
        }
        let polarity = if phase == 0 { 1.0 } else { -1.0 };
        let v_drive = polarity * amp;
        let i = match load.series_capacitance {
            Some(c) => {
                let i = (v_drive - self.v_cap) / load.resistance;
                self.v_cap += i * dt / c;
                load.residual_charge = c * self.v_cap;
                i
            }
            None => v_drive / load.resistance,
        };
        let p_load = (v_drive * i).max(0.0);
        let drawn = p_load / driver_efficiency(amp) * dt;
        power.discharge_store(drawn);
        power.energy_out += p_load * dt;
        power.energy_lost += drawn - p_load * dt;
        self.energy_delivered += p_load * dt;
        self.energy_drawn += drawn;
        self.charge[phase as usize] += i * dt;
        out.v_load = v_drive;
        out.i_load = i;
        self.cycle += 1;
        if self.cycle >= self.phase_cycles {
            self.cycle = 0;
            if phase + 1 < self.phases {
                self.stage = EngineStage::Phase(phase + 1);
            } else {
                self.finish_drive(load);
            }
        }
        out
    }

    fn finish_drive(&mut self, load: &LoadModel) {
        self.cycle = 0;
        self.stage = if load.series_capacitance.is_some() && self.short_cycles > 0 {
            EngineStage::Shorting
        } else {
            EngineStage::Done
        };
    }

    pub fn into_summary(self) -> StimWaveform {
        StimWaveform {
            settings: self.settings,
            samples: Vec::new(),
            charge_phase1: self.charge[0],
            charge_phase2: self.charge[1],
            energy_delivered: self.energy_delivered,
            energy_drawn: self.energy_drawn,
            truncated: self.truncated,
            onset_delay: self.delay_cycles as f64 / self.carrier_freq,
        }
    }
}

/// Generate one complete stimulus standalone: waits the programmed delay,
/// drives the phase(s) from the storage capacitor, shorts the electrodes.
pub fn run_stimulus(
    settings: StimSettings,
    power: &mut PowerState,
    load: &mut LoadModel,
    carrier_freq: f64,
) -> Result<StimWaveform, StimError> {
    let mut engine = StimEngine::new(settings, power, load, carrier_freq)?;
    let mut samples = Vec::new();
    let mut cycle = 0u64;
    loop {
        let step = engine.step(power, load);
        if step.finished && samples.is_empty() && engine.is_done() && cycle == 0 {
            // Zero-amplitude stimulus: flat waveform.
            break;
        }
        samples.push(WaveformSample {
            t: cycle as f64 / carrier_freq,
            v_load: step.v_load,
            i_load: step.i_load,
            v_store: power.v_store,
        });
        cycle += 1;
        if step.finished || step.truncated {
            break;
        }
    }
    let mut waveform = engine.into_summary();
    waveform.samples = samples;
    Ok(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerpath::{default_c_store, PowerState};
    use approx::assert_relative_eq;

    const CARRIER: f64 = 330e3;

    fn rf(amp: u8, pw: u8, delay: u8, mode: StimMode) -> RegisterFile {
        RegisterFile {
            amp_code: amp,
            pw_code: pw,
            delay_code: delay,
            mode,
            ref_trim: 0,
        }
    }

    #[test]
    fn decode_full_scale_amplitude() {
        let (settings, clamped) = decode_settings(&rf(14, 15, 0, StimMode::Biphasic));
        assert_relative_eq!(settings.amplitude, 3.5, epsilon = 1e-12);
        assert_relative_eq!(settings.pulse_width, 1.2e-3, epsilon = 1e-12);
        assert!(!clamped);
    }

    #[test]
    fn decode_all_zero_codes() {
        let (settings, clamped) = decode_settings(&rf(0, 0, 0, StimMode::Monophasic));
        assert_eq!(settings.amplitude, 0.0);
        assert_relative_eq!(settings.pulse_width, 0.15e-3, epsilon = 1e-12);
        assert_eq!(settings.delay, 0.0);
        assert!(!clamped);
    }

    #[test]
    fn decode_reserved_code_clamps() {
        let (settings, clamped) = decode_settings(&rf(15, 0, 0, StimMode::Monophasic));
        assert_relative_eq!(settings.amplitude, 3.5, epsilon = 1e-12);
        assert!(clamped);
    }

    #[test]
    fn decode_max_delay_inside_bound() {
        let (settings, _) = decode_settings(&rf(1, 0, 31, StimMode::Monophasic));
        // 31 x 2 stim-clock periods = 751.5 us, inside the 0.8 ms bound.
        assert_relative_eq!(settings.delay, 31.0 * 2.0 * 4.0 / CARRIER, epsilon = 1e-12);
        assert!(settings.delay <= 0.8e-3);
    }

    #[test]
    fn driver_efficiency_anchors() {
        assert_relative_eq!(driver_efficiency(3.5), 0.909, epsilon = 1e-3);
        assert_relative_eq!(driver_efficiency(1.5), 1.5 / 1.65, epsilon = 1e-12);
        assert_relative_eq!(driver_efficiency(0.75), 0.50, epsilon = 1e-12);
        // Every code at or above 1.5 V holds >= 90%.
        for code in 6..=14u8 {
            let amp = AMP_VOLTS_PER_LSB * code as f64;
            assert!(driver_efficiency(amp) >= 0.90, "code {code}");
        }
    }

    fn charged_state(v_store: f64) -> PowerState {
        let mut state = PowerState::new(default_c_store());
        state.v_store = v_store;
        // Account for the pre-charged storage so the ledger still closes.
        state.energy_in = state.stored_energy();
        state
    }

    #[test]
    fn fig14_droop_from_derived_capacitance() {
        let mut power = charged_state(2.75);
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 2.5,
            pulse_width: 1.2e-3,
            delay: 0.0,
            mode: StimMode::Biphasic,
        };
        let waveform = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap();
        assert!(!waveform.truncated);
        assert_relative_eq!(power.v_store, 2.15, epsilon = 1e-6);
        // Drawn energy equals delivered / driver efficiency exactly.
        assert_relative_eq!(
            waveform.energy_drawn,
            waveform.energy_delivered / driver_efficiency(2.5),
            epsilon = 1e-12
        );
        // 1.2 ms per phase quantizes exactly to 99 stimulation-clock ticks.
        assert_eq!(StimEngine::width_ticks(1.2e-3, CARRIER), 99);
    }

    #[test]
    fn zero_amplitude_flat_waveform() {
        let mut power = charged_state(2.0);
        let before = power.v_store;
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 0.0,
            pulse_width: 0.15e-3,
            delay: 0.0,
            mode: StimMode::Monophasic,
        };
        let waveform = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap();
        assert_eq!(power.v_store, before);
        assert_eq!(waveform.energy_delivered, 0.0);
        assert!(waveform.samples.iter().all(|s| s.v_load == 0.0));
    }

    #[test]
    fn monophasic_charge_integral() {
        let mut power = charged_state(2.0);
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 1.0,
            pulse_width: 0.15e-3,
            delay: 0.0,
            mode: StimMode::Monophasic,
        };
        let waveform = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap();
        // Q = V/R x realized width; 0.15 ms rounds to 12 ticks (48 cycles).
        let ticks = StimEngine::width_ticks(0.15e-3, CARRIER);
        assert_eq!(ticks, 12);
        let realized = ticks as f64 * 4.0 / CARRIER;
        assert_relative_eq!(waveform.charge_phase1, 1.0 / 1000.0 * realized, epsilon = 1e-12);
        assert_eq!(waveform.charge_phase2, 0.0);
    }

    #[test]
    fn undervoltage_start_is_rejected() {
        let mut power = charged_state(2.0);
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 2.5,
            pulse_width: 0.5e-3,
            delay: 0.0,
            mode: StimMode::Monophasic,
        };
        let err = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap_err();
        assert_eq!(
            err,
            StimError::Undervoltage {
                v_store: 2.0,
                required: StimEngine::start_gate(2.5)
            }
        );
    }

    #[test]
    fn supply_collapse_truncates_pulse() {
        // A tiny storage capacitor collapses below 1.5 V mid-pulse.
        let mut power = PowerState::new(0.2e-6);
        power.v_store = 2.75;
        power.energy_in = power.stored_energy();
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 2.5,
            pulse_width: 1.2e-3,
            delay: 0.0,
            mode: StimMode::Biphasic,
        };
        let waveform = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap();
        assert!(waveform.truncated);
        assert!(power.v_store < 1.5);
    }

    #[test]
    fn biphasic_net_charge_balances() {
        let mut power = charged_state(StimEngine::start_gate(3.5));
        let mut load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 3.5,
            pulse_width: 1.2e-3,
            delay: 0.0,
            mode: StimMode::Biphasic,
        };
        let waveform = run_stimulus(settings, &mut power, &mut load, CARRIER).unwrap();
        let net = waveform.charge_phase1 + waveform.charge_phase2;
        assert!(
            net.abs() < 0.01 * waveform.charge_phase1.abs(),
            "net {net} vs per-phase {}",
            waveform.charge_phase1
        );
    }

    #[test]
    fn series_capacitance_residual_and_shorting() {
        let c_series = 100e-9;
        let mut load = LoadModel {
            resistance: 1000.0,
            series_capacitance: Some(c_series),
            residual_charge: 0.0,
        };
        let mut power = charged_state(2.2);
        let settings = StimSettings {
            amplitude: 2.0,
            pulse_width: 0.5e-3,
            delay: 0.0,
            mode: StimMode::Monophasic,
        };
        // Monophasic pulse leaves charge on the series capacitance...
        let mut engine = StimEngine::new(settings, &power, &load, CARRIER).unwrap();
        let mut residual_after_pulse = 0.0;
        loop {
            let step = engine.step(&mut power, &mut load);
            if matches!(engine.stage, EngineStage::Shorting) && residual_after_pulse == 0.0 {
                residual_after_pulse = load.residual_charge;
            }
            if step.finished || step.truncated {
                break;
            }
        }
        assert!(residual_after_pulse > 0.0);
        // ...and the shorting window removes it.
        assert_eq!(load.residual_charge, 0.0);
    }

    #[test]
    fn balanced_biphasic_into_series_cap_small_residual() {
        // Residual after equal-and-opposite phases scales with
        // (1 - exp(-PW/RC)); RC far above the pulse width keeps it < 1%.
        let c_series = 22e-6;
        let mut load = LoadModel {
            resistance: 1000.0,
            series_capacitance: Some(c_series),
            residual_charge: 0.0,
        };
        let mut power = charged_state(2.75);
        let settings = StimSettings {
            amplitude: 2.5,
            pulse_width: 0.15e-3,
            delay: 0.0,
            mode: StimMode::Biphasic,
        };
        let mut engine = StimEngine::new(settings, &power, &load, CARRIER).unwrap();
        let mut residual_before_short = f64::NAN;
        loop {
            let step = engine.step(&mut power, &mut load);
            if matches!(engine.stage, EngineStage::Shorting) && residual_before_short.is_nan() {
                residual_before_short = load.residual_charge;
            }
            if step.finished || step.truncated {
                break;
            }
        }
        let summary = engine.into_summary();
        assert!(
            residual_before_short.abs() < 0.01 * summary.charge_phase1.abs(),
            "residual {residual_before_short} vs per-phase {}",
            summary.charge_phase1
        );
    }

    #[test]
    fn short_electrodes_resistive_noop() {
        let mut load = LoadModel::resistive(1000.0);
        assert_eq!(short_electrodes(&mut load), 0.0);
        let mut with_cap = LoadModel {
            resistance: 1000.0,
            series_capacitance: Some(100e-9),
            residual_charge: 1e-7,
        };
        let window = short_electrodes(&mut with_cap);
        assert_eq!(with_cap.residual_charge, 0.0);
        assert_relative_eq!(window, 4.0 * 1000.0 * 100e-9, epsilon = 1e-12);
    }

    #[test]
    fn delay_quantized_to_stim_clock() {
        let power = charged_state(2.0);
        let load = LoadModel::resistive(1000.0);
        let settings = StimSettings {
            amplitude: 1.0,
            pulse_width: 0.15e-3,
            delay: 16.0 * 2.0 * 4.0 / CARRIER,
            mode: StimMode::Monophasic,
        };
        let engine = StimEngine::new(settings, &power, &load, CARRIER).unwrap();
        // Delay code 16: 32 ticks = 128 carrier cycles.
        assert_relative_eq!(engine.onset_delay(), 128.0 / CARRIER, epsilon = 1e-15);
    }
}
