//! Deterministic fixed-step simulation kernel.
//!
//! The kernel steps at carrier-cycle resolution with envelope-domain
//! state. Implants do not interact once the scene is built (the static
//! coupling factor is part of the channel model), so each implant's whole
//! timeline is simulated independently and implants are mapped in
//! parallel; results merge in index order, keeping runs bit-identical
//! across execution modes.

use crate::channel::ChannelError;
use crate::downlink::{
    frame_dump, packet_dump, threshold_from_plateaus, OperatingPhase, PhaseController, PhaseEvent,
    RecoveredClock, ClockRecovery, BIT_CYCLES, CLOCK_MIN_AMPLITUDE,
};
use crate::exec::{map_indexed, Execution};
use crate::identity::{DeviceId, RegisterFile};
use crate::linkbudget::matched_load_power;
use crate::powerpath::{
    ldo_output, quiescent_drain_with, rect_step, scpc_step_with, supply_select, PorEvent,
    PorMonitor, PowerState, RegulationTarget, Watchdog, WatchdogEvent,
};
use crate::scenario::{ResolvedScenario, Scenario, ScenarioError};
use crate::stimengine::{
    decode_settings, LoadModel, StimEngine, StimError, AMP_CODE_MAX, AMP_VOLTS_PER_LSB,
};
use crate::trace::{
    merge_events, Event, EventKind, EventSource, ImplantTrace, LedgerSummary, PacketRecord,
    PacketSentRecord, StimRecord, TraceBundle, TxTrace, Waveform,
};

/// Run a scenario with the default execution policy.
pub fn run(scenario: &Scenario) -> Result<TraceBundle, ScenarioError> {
    run_with(scenario, Execution::default())
}

/// Run a scenario, stepping implants sequentially or in parallel. The
/// resulting bundle is bit-identical either way.
pub fn run_with(scenario: &Scenario, exec: Execution) -> Result<TraceBundle, ScenarioError> {
    let resolved = scenario.resolve()?;
    Ok(run_resolved(&resolved, exec))
}

fn run_resolved(resolved: &ResolvedScenario, exec: Execution) -> TraceBundle {
    let ctx = RunContext::new(resolved);
    let n = resolved.model.implant_count();
    let outcomes = map_indexed(exec, n, |idx| ImplantSim::new(&ctx, idx).run());

    let mut events = tx_events(&ctx);
    let mut implants = Vec::with_capacity(n);
    for (trace, implant_events) in outcomes {
        events.extend(implant_events);
        implants.push(trace);
    }
    TraceBundle {
        schema_version: crate::scenario::SCHEMA_VERSION,
        description: resolved.scenario.description.clone(),
        global_seed: resolved.scenario.global_seed,
        carrier_freq: resolved.model.coil.carrier_freq,
        trace_decimation: resolved.scenario.trace_decimation,
        tx: TxTrace {
            total_cycles: ctx.levels.len() as u64,
            sent_packets: tx_sent_records(&ctx),
        },
        implants,
        events: merge_events(events),
    }
}

/// Static inputs shared by every implant's simulation.
struct RunContext<'a> {
    resolved: &'a ResolvedScenario,
    levels: Vec<f64>,
    period: f64,
    substeps: u32,
    /// Envelope relaxation factor per substep.
    env_alpha: f64,
    carrier_sense_floor: f64,
}

impl<'a> RunContext<'a> {
    fn new(resolved: &'a ResolvedScenario) -> Self {
        let period = resolved.model.coil.carrier_period();
        let substeps = resolved.scenario.substeps_per_cycle;
        let tau_cycles = resolved.model.film.ringup_tau_cycles();
        let env_alpha = 1.0 - (-1.0 / (tau_cycles * substeps as f64)).exp();
        Self {
            resolved,
            levels: resolved.schedule.levels(),
            period,
            substeps,
            env_alpha,
            carrier_sense_floor: CLOCK_MIN_AMPLITUDE,
        }
    }

    fn expected_bits(&self, op_idx: usize) -> u64 {
        self.resolved
            .schedule
            .annotations()
            .get(op_idx)
            .map(|a| a.bits.len() as u64)
            .unwrap_or(0)
    }
}

fn tx_sent_records(ctx: &RunContext) -> Vec<PacketSentRecord> {
    let format = &ctx.resolved.scenario.packet_format;
    let frame_cycles = format.frame_bits() as u64 * BIT_CYCLES;
    let mut records = Vec::new();
    for (op_cycle, (ann, plan)) in ctx
        .resolved
        .schedule
        .annotations()
        .iter()
        .zip(&ctx.resolved.scenario.schedule.cycles)
        .enumerate()
    {
        for (frame_index, packet) in plan.packets.iter().enumerate() {
            records.push(PacketSentRecord {
                op_cycle,
                frame_index,
                start_cycle: ann.data_start_cycle + frame_index as u64 * frame_cycles,
                dump: packet_dump(format, packet),
            });
        }
    }
    records
}

fn tx_events(ctx: &RunContext) -> Vec<Event> {
    tx_sent_records(ctx)
        .into_iter()
        .map(|r| Event {
            t: r.start_cycle as f64 * ctx.period,
            cycle: r.start_cycle,
            source: EventSource::Tx,
            kind: EventKind::PacketSent { dump: r.dump },
        })
        .collect()
}

/// Incremental bit-window accumulator for the data phase.
struct DemodAccum {
    frame_bits: usize,
    preamble_bits: usize,
    cycle_in_window: u32,
    window_sum: f64,
    means: Vec<f64>,
    threshold: Option<f64>,
    calib_failed: bool,
    frame_index: usize,
}

struct FrameResult {
    frame_index: usize,
    /// All frame bits decided against the calibrated threshold, or `None`
    /// when calibration failed and the frame was dropped.
    bits: Option<Vec<bool>>,
}

impl DemodAccum {
    fn new(frame_bits: usize, preamble_bits: usize) -> Self {
        Self {
            frame_bits,
            preamble_bits,
            cycle_in_window: 0,
            window_sum: 0.0,
            means: Vec::with_capacity(frame_bits),
            threshold: None,
            calib_failed: false,
            frame_index: 0,
        }
    }

    /// Feed one carrier cycle of envelope; returns a frame when complete.
    fn on_cycle(&mut self, env: f64) -> Option<FrameResult> {
        // Plateau sampling: skip the settling third, average the center.
        if (16..48).contains(&self.cycle_in_window) {
            self.window_sum += env;
        }
        self.cycle_in_window += 1;
        if u64::from(self.cycle_in_window) < BIT_CYCLES {
            return None;
        }
        self.cycle_in_window = 0;
        self.means.push(self.window_sum / 32.0);
        self.window_sum = 0.0;
        if self.means.len() == self.preamble_bits {
            match threshold_from_plateaus(&self.means) {
                Ok(t) => self.threshold = Some(t),
                Err(_) => self.calib_failed = true,
            }
        }
        if self.means.len() < self.frame_bits {
            return None;
        }
        let bits = match (self.calib_failed, self.threshold) {
            (false, Some(t)) => Some(self.means.iter().map(|&m| m > t).collect()),
            _ => None,
        };
        let result = FrameResult {
            frame_index: self.frame_index,
            bits,
        };
        self.frame_index += 1;
        self.means.clear();
        self.threshold = None;
        self.calib_failed = false;
        Some(result)
    }
}

/// In-flight stimulus bookkeeping around the engine.
struct ActiveStim {
    engine: StimEngine,
    onset_cycle: Option<u64>,
    v_store_start: f64,
    v_store_min: f64,
    amplitude: f64,
}

struct ImplantSim<'a> {
    ctx: &'a RunContext<'a>,
    idx: usize,
    full_amplitude: f64,
    env: f64,
    power: PowerState,
    load: LoadModel,
    watchdog: Watchdog,
    clock: ClockRecovery,
    locked: Option<RecoveredClock>,
    por: PorMonitor,
    controller: PhaseController,
    registers: RegisterFile,
    id: Option<DeviceId>,
    demod: Option<DemodAccum>,
    stim: Option<ActiveStim>,
    op_idx: usize,
    notch_index: u8,
    events: Vec<Event>,
    waveform: Waveform,
    stimuli: Vec<StimRecord>,
    packets: Vec<PacketRecord>,
    bits_compared: u64,
    bit_errors: u64,
    cur_v_load: f64,
    cur_i_load: f64,
}

impl<'a> ImplantSim<'a> {
    fn new(ctx: &'a RunContext<'a>, idx: usize) -> Self {
        let resolved = ctx.resolved;
        let implant = &resolved.scenario.implants[idx];
        let seed = implant.device_seed.unwrap_or(resolved.scenario.global_seed)
            ^ resolved.scenario.global_seed.rotate_left(idx as u32 + 1);
        Self {
            ctx,
            idx,
            full_amplitude: resolved.model.full_amplitude(idx).expect("validated index"),
            env: 0.0,
            power: PowerState::new(resolved.c_stores[idx]),
            load: implant.load,
            watchdog: Watchdog::default(),
            clock: ClockRecovery::new(
                resolved.model.coil.carrier_freq,
                CLOCK_MIN_AMPLITUDE,
                seed,
            ),
            locked: None,
            por: PorMonitor::default(),
            controller: PhaseController::default(),
            registers: RegisterFile::default(),
            id: None,
            demod: None,
            stim: None,
            op_idx: 0,
            notch_index: 0,
            events: Vec::new(),
            waveform: Waveform::default(),
            stimuli: Vec::new(),
            packets: Vec::new(),
            bits_compared: 0,
            bit_errors: 0,
            cur_v_load: 0.0,
            cur_i_load: 0.0,
        }
    }

    fn time(&self, cycle: u64) -> f64 {
        cycle as f64 * self.ctx.period + self.offset()
    }

    fn offset(&self) -> f64 {
        self.clock.clock().map(|c| c.phase_offset).unwrap_or(0.0)
    }

    fn emit(&mut self, cycle: u64, kind: EventKind) {
        self.events.push(Event {
            t: self.time(cycle),
            cycle,
            source: EventSource::Implant(self.idx),
            kind,
        });
    }

    fn run(mut self) -> (ImplantTrace, Vec<Event>) {
        if self.ctx.resolved.model.lateral_clamped(self.idx) {
            self.emit(0, EventKind::LateralGainExtrapolated);
        }
        for cycle in 0..self.ctx.levels.len() as u64 {
            self.step_cycle(cycle);
        }
        let ledger = LedgerSummary::new(
            self.power.energy_in,
            self.power.energy_out,
            self.power.energy_lost,
            self.power.stored_energy(),
        );
        let trace = ImplantTrace {
            name: self.ctx.resolved.scenario.implants[self.idx].name.clone(),
            id_bits: self.id.map(|id| id.to_bit_string()),
            phase_offset: self.offset(),
            waveform: self.waveform,
            stimuli: self.stimuli,
            packets: self.packets,
            bits_compared: self.bits_compared,
            bit_errors: self.bit_errors,
            ledger,
            final_registers: self.registers,
        };
        (trace, self.events)
    }

    fn step_cycle(&mut self, cycle: u64) {
        let ctx = self.ctx;
        let level = ctx.levels[cycle as usize];
        let target_env = self.full_amplitude * level;
        for _ in 0..ctx.substeps {
            self.env += (target_env - self.env) * ctx.env_alpha;
        }
        self.cur_v_load = 0.0;
        self.cur_i_load = 0.0;

        // Power rails.
        let power_cfg = &ctx.resolved.scenario.power;
        self.power.v_rect = rect_step(self.power.v_rect, self.env, ctx.period, power_cfg);
        self.power.v_dd_h = supply_select(self.power.v_rect, self.power.v_store);
        self.power.v_dd_l = ldo_output(self.power.v_dd_h);

        match self.por.on_cycle(self.power.v_dd_l) {
            Some(PorEvent::Fired) => {
                self.power.por_fired = true;
                self.id = Some(self.ctx.resolved.ids[self.idx]);
                self.registers = RegisterFile::default();
                self.emit(cycle, EventKind::PorFired);
            }
            Some(PorEvent::BrownOut) => {
                self.power.por_fired = false;
                self.id = None;
                self.registers = RegisterFile::default();
                self.demod = None;
                self.controller = PhaseController::default();
                self.emit(cycle, EventKind::BrownOut);
            }
            None => {}
        }

        if self.locked.is_none() {
            if let Some(clock) = self.clock.on_cycle(self.env, cycle) {
                self.locked = Some(clock);
                self.emit(
                    cycle,
                    EventKind::ClockLocked {
                        phase_offset: clock.phase_offset,
                    },
                );
            }
        }

        // Protocol machinery runs once logic is powered and clocked.
        if self.power.por_fired && self.locked.is_some() {
            let present = level > 0.0 && target_env >= ctx.carrier_sense_floor;
            match self
                .watchdog
                .on_cycle(present, ctx.resolved.scenario.power.notch_detect_cycles)
            {
                Some(WatchdogEvent::NotchDetected) => self.on_notch_detected(cycle),
                Some(WatchdogEvent::CarrierResumed) => self.on_carrier_resumed(cycle),
                None => {}
            }
        }

        // Data-phase bit windows.
        if self.controller.phase() == OperatingPhase::DataTransmission {
            if let Some(result) = self.demod.as_mut().and_then(|d| d.on_cycle(self.env)) {
                self.on_frame(cycle, result);
            }
            if self.controller.tick_data() {
                self.demod = None;
                self.emit(
                    cycle,
                    EventKind::PhaseChanged {
                        from: OperatingPhase::DataTransmission,
                        to: OperatingPhase::Charging,
                    },
                );
            }
        }

        // Stimulation engine.
        if self.stim.is_some() {
            self.step_stim(cycle);
        }

        // Adaptive converter and idle drain.
        let target = RegulationTarget {
            v_amp_ref: AMP_VOLTS_PER_LSB * self.registers.amp_code.min(AMP_CODE_MAX) as f64,
        };
        let available = matched_load_power(self.env, ctx.resolved.model.film.source_resistance);
        scpc_step_with(&mut self.power, ctx.period, &target, available, power_cfg)
            .expect("available power is nonnegative");
        if self.power.v_dd_l > 0.0 {
            let stimulating = self.controller.phase() == OperatingPhase::Stimulation;
            quiescent_drain_with(&mut self.power, ctx.period, stimulating, power_cfg);
        }

        if cycle % ctx.resolved.scenario.trace_decimation as u64 == 0 {
            self.waveform.push(
                cycle as f64 * ctx.period,
                self.env,
                self.power.v_rect,
                self.power.v_store,
                self.cur_v_load,
                self.cur_i_load,
            );
        }
    }

    fn on_notch_detected(&mut self, cycle: u64) {
        self.notch_index = self.notch_index.wrapping_add(1);
        self.emit(
            cycle,
            EventKind::NotchDetected {
                index: self.notch_index,
            },
        );
        let expected = self.ctx.expected_bits(self.op_idx);
        if self.controller.on_notch(expected) == Some(PhaseEvent::ProtocolViolation) {
            self.emit(cycle, EventKind::ProtocolViolation);
            self.notch_index = 0;
            // The interrupted stimulus ends where it stands.
            if self.stim.is_some() {
                self.finish_stim(cycle, true);
            }
            self.demod = None;
        }
    }

    fn on_carrier_resumed(&mut self, cycle: u64) {
        match self.controller.on_carrier_resume() {
            Some(PhaseEvent::Entered(OperatingPhase::DataTransmission)) => {
                let format = &self.ctx.resolved.scenario.packet_format;
                self.demod = Some(DemodAccum::new(
                    format.frame_bits(),
                    format.preamble.len(),
                ));
                self.emit(
                    cycle,
                    EventKind::PhaseChanged {
                        from: OperatingPhase::Charging,
                        to: OperatingPhase::DataTransmission,
                    },
                );
            }
            Some(PhaseEvent::Entered(OperatingPhase::Stimulation)) => {
                self.emit(
                    cycle,
                    EventKind::PhaseChanged {
                        from: OperatingPhase::Charging,
                        to: OperatingPhase::Stimulation,
                    },
                );
                self.begin_stim(cycle);
            }
            _ => {}
        }
    }

    fn begin_stim(&mut self, cycle: u64) {
        let (settings, clamped) = decode_settings(&self.registers);
        if clamped {
            self.emit(cycle, EventKind::AmplitudeCodeClamped);
        }
        let carrier = self.ctx.resolved.model.coil.carrier_freq;
        match StimEngine::new(settings, &self.power, &self.load, carrier) {
            Ok(engine) => {
                self.stim = Some(ActiveStim {
                    engine,
                    onset_cycle: None,
                    v_store_start: self.power.v_store,
                    v_store_min: self.power.v_store,
                    amplitude: settings.amplitude,
                });
            }
            Err(StimError::Undervoltage { v_store, required }) => {
                self.emit(cycle, EventKind::StimSkippedUndervoltage { v_store, required });
                self.complete_stim_phase(cycle);
            }
            Err(StimError::InvalidLoad(_)) => unreachable!("load validated at resolve time"),
        }
    }

    fn step_stim(&mut self, cycle: u64) {
        let Some(active) = self.stim.as_mut() else {
            return;
        };
        let step = active.engine.step(&mut self.power, &mut self.load);
        active.v_store_min = active.v_store_min.min(self.power.v_store);
        self.cur_v_load = step.v_load;
        self.cur_i_load = step.i_load;
        if step.fired && active.onset_cycle.is_none() {
            active.onset_cycle = Some(cycle);
            let amplitude = active.amplitude;
            self.emit(cycle, EventKind::StimStarted { amplitude });
        }
        if step.finished || step.truncated {
            self.finish_stim(cycle, step.truncated);
        }
    }

    fn finish_stim(&mut self, cycle: u64, truncated: bool) {
        let Some(active) = self.stim.take() else {
            return;
        };
        let fired = active.onset_cycle.is_some();
        let summary = active.engine.into_summary();
        if fired {
            let onset_cycle = active.onset_cycle.unwrap();
            self.stimuli.push(StimRecord {
                op_cycle: self.op_idx,
                onset_cycle,
                onset_t: self.time(onset_cycle),
                settings: summary.settings,
                charge_phase1: summary.charge_phase1,
                charge_phase2: summary.charge_phase2,
                energy_delivered: summary.energy_delivered,
                energy_drawn: summary.energy_drawn,
                efficiency: if summary.energy_drawn > 0.0 {
                    summary.energy_delivered / summary.energy_drawn
                } else {
                    0.0
                },
                v_store_start: active.v_store_start,
                v_store_end: self.power.v_store,
                v_store_min: active.v_store_min,
                truncated: truncated || summary.truncated,
            });
            self.emit(
                cycle,
                EventKind::StimCompleted {
                    amplitude: active.amplitude,
                    truncated: truncated || summary.truncated,
                },
            );
        }
        self.complete_stim_phase(cycle);
    }

    fn complete_stim_phase(&mut self, cycle: u64) {
        self.controller.on_stim_complete();
        self.notch_index = 0;
        self.op_idx += 1;
        self.emit(
            cycle,
            EventKind::PhaseChanged {
                from: OperatingPhase::Stimulation,
                to: OperatingPhase::Charging,
            },
        );
    }

    fn on_frame(&mut self, cycle: u64, result: FrameResult) {
        let format = &self.ctx.resolved.scenario.packet_format;
        let tx_bits = self
            .ctx
            .resolved
            .schedule
            .annotations()
            .get(self.op_idx)
            .map(|ann| {
                let frame_cycles = format.frame_bits();
                let start = result.frame_index * frame_cycles;
                &ann.bits[start..(start + frame_cycles).min(ann.bits.len())]
            });
        match result.bits {
            None => {
                self.emit(cycle, EventKind::CalibrationFailed);
                self.packets.push(PacketRecord {
                    op_cycle: self.op_idx,
                    frame_index: result.frame_index,
                    dump: String::new(),
                    bit_errors: 0,
                    accepted: false,
                    dropped: true,
                });
            }
            Some(bits) => {
                let bit_errors = tx_bits
                    .map(|tx| {
                        self.bits_compared += tx.len() as u64;
                        let errors = tx
                            .iter()
                            .zip(&bits)
                            .filter(|(a, b)| a != b)
                            .count() as u64;
                        self.bit_errors += errors;
                        errors as u32
                    })
                    .unwrap_or(0);
                let dump = frame_dump(format, &bits);
                let packet =
                    crate::downlink::decode_packet(format, &bits).expect("frame length fixed");
                self.emit(
                    cycle,
                    EventKind::PacketDecoded {
                        dump: dump.clone(),
                        bit_errors,
                    },
                );
                let accepted = match &self.id {
                    Some(id) => {
                        let (new_rf, accepted) =
                            crate::identity::update_registers(&self.registers, &packet, id);
                        if accepted {
                            self.registers = new_rf;
                            self.emit(cycle, EventKind::PacketAccepted { dump: dump.clone() });
                            self.emit(
                                cycle,
                                EventKind::RegistersUpdated {
                                    registers: new_rf,
                                },
                            );
                        } else {
                            self.emit(cycle, EventKind::PacketRejected { dump: dump.clone() });
                        }
                        accepted
                    }
                    None => false,
                };
                self.packets.push(PacketRecord {
                    op_cycle: self.op_idx,
                    frame_index: result.frame_index,
                    dump,
                    bit_errors,
                    accepted,
                    dropped: false,
                });
            }
        }
    }
}

/// Convenience: settled received amplitude per implant for a scenario.
pub fn settled_amplitudes(scenario: &Scenario) -> Result<Vec<f64>, ScenarioError> {
    let resolved = scenario.resolve()?;
    (0..resolved.model.implant_count())
        .map(|i| resolved.model.full_amplitude(i))
        .collect::<Result<_, ChannelError>>()
        .map_err(|e| ScenarioError::Validation(vec![e.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downlink::{CyclePlan, Packet, Payload, StimMode, TxPlan};
    use crate::powerpath::QUIESCENT_POWER;
    use crate::scenario::{DriveCalibration, ImplantSpec, SCHEMA_VERSION};
    use crate::channel::{ChannelConfig, CoilSpec, MEFilmSpec, Pose};
    use crate::powerpath::PowerConfig;
    use crate::downlink::PacketFormat;
    use crate::identity::DEFAULT_NOISE_SIGMA;
    use approx::assert_relative_eq;

    fn payload(amp: u8) -> Payload {
        Payload {
            amp_code: amp,
            pw_code: 15,
            delay_code: 0,
            mode: StimMode::Biphasic,
            ref_trim: 0,
        }
    }

    fn base_scenario(implants: Vec<ImplantSpec>, cycles: Vec<CyclePlan>) -> Scenario {
        Scenario {
            schema_version: SCHEMA_VERSION,
            description: "kernel test".into(),
            global_seed: 11,
            coil: CoilSpec::default(),
            drive_calibration: Some(DriveCalibration {
                axial_distance: 0.025,
                target_voltage: 2.0,
            }),
            film: MEFilmSpec::default(),
            channel: ChannelConfig::default(),
            power: PowerConfig::default(),
            implants,
            allow_collisions: false,
            schedule: TxPlan {
                ask_depth: 0.5,
                initial_charge_cycles: 30_000,
                charge_cycles: 12_000,
                inter_cycles: 14_000,
                stim_window_cycles: 1_600,
                cycles,
            },
            packet_format: PacketFormat::default(),
            substeps_per_cycle: 1,
            trace_decimation: 10,
            puf_noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }

    fn implant(name: &str, z: f64, seed: u64) -> ImplantSpec {
        ImplantSpec {
            name: name.into(),
            pose: Pose::axial(z),
            device_seed: Some(seed),
            fixed_id: None,
            load: LoadModel::resistive(1000.0),
            c_store: None,
        }
    }

    fn id_of(seed: u64) -> u8 {
        crate::identity::generate_id(seed, true, DEFAULT_NOISE_SIGMA)
            .unwrap()
            .bits
    }

    #[test]
    fn single_implant_full_cycle() {
        let seed = 21;
        let scenario = base_scenario(
            vec![implant("A", 0.025, seed)],
            vec![CyclePlan {
                packets: vec![Packet {
                    device_id: id_of(seed),
                    payload: payload(8),
                }],
                trigger_only: false,
                drive_scale: 1.0,
            }],
        );
        let bundle = run(&scenario).unwrap();
        let implant = &bundle.implants[0];

        // POR fired, clock locked, packet accepted, stimulus generated.
        assert!(bundle
            .implant_events(0)
            .any(|e| matches!(e.kind, EventKind::PorFired)));
        assert!(implant.id_bits.is_some());
        assert_eq!(implant.packets.len(), 1);
        assert!(implant.packets[0].accepted);
        assert_eq!(implant.packets[0].bit_errors, 0);
        assert_eq!(implant.stimuli.len(), 1);
        let stim = &implant.stimuli[0];
        assert_relative_eq!(stim.settings.amplitude, 2.0, epsilon = 1e-12);
        assert!(!stim.truncated);
        // Biphasic into a resistor balances charge.
        assert!((stim.charge_phase1 + stim.charge_phase2).abs() < 0.01 * stim.charge_phase1);
        // Ledger closes.
        assert!(
            implant.ledger.residual_fraction.abs() < 1e-3,
            "residual {}",
            implant.ledger.residual_fraction
        );
    }

    #[test]
    fn identical_runs_identical_bundles() {
        let seed = 21;
        let scenario = base_scenario(
            vec![implant("A", 0.02, seed), implant("B", 0.03, 99)],
            vec![
                CyclePlan {
                    packets: vec![Packet {
                        device_id: id_of(seed),
                        payload: payload(6),
                    }],
                    trigger_only: false,
                    drive_scale: 1.0,
                },
                CyclePlan {
                    packets: vec![],
                    trigger_only: true,
                    drive_scale: 1.0,
                },
            ],
        );
        let a = run_with(&scenario, Execution::Sequential).unwrap().to_json();
        let b = run_with(&scenario, Execution::Sequential).unwrap().to_json();
        assert_eq!(a, b);
        let c = run_with(&scenario, Execution::Parallel).unwrap().to_json();
        assert_eq!(a, c, "parallel run must be bit-identical to sequential");
    }

    #[test]
    fn unaddressed_implant_rejects_packet() {
        let scenario = base_scenario(
            vec![implant("A", 0.02, 21), implant("B", 0.03, 99)],
            vec![CyclePlan {
                packets: vec![Packet {
                    device_id: id_of(21),
                    payload: payload(4),
                }],
                trigger_only: false,
                drive_scale: 1.0,
            }],
        );
        let bundle = run(&scenario).unwrap();
        assert!(bundle.implants[0].packets[0].accepted);
        assert!(!bundle.implants[1].packets[0].accepted);
        // The rejecting implant keeps default registers and does not fire.
        assert_eq!(bundle.implants[1].final_registers, RegisterFile::default());
        assert!(bundle.implants[1].stimuli.is_empty());
    }

    #[test]
    fn idle_scenario_only_quiescent_drain() {
        let mut scenario = base_scenario(
            vec![implant("A", 0.025, 21)],
            vec![CyclePlan {
                packets: vec![],
                trigger_only: true,
                drive_scale: 1.0,
            }],
        );
        scenario.schedule.initial_charge_cycles = 20_000;
        let bundle = run(&scenario).unwrap();
        let implant = &bundle.implants[0];
        assert!(implant.stimuli.is_empty());
        assert_eq!(implant.ledger.energy_out, 0.0);
        // Losses are SCPC conversion loss plus the quiescent drain; the
        // quiescent part alone is P_q x alive time, within the charging loss.
        let total_t = bundle.tx.total_cycles as f64 / bundle.carrier_freq;
        assert!(implant.ledger.energy_lost >= QUIESCENT_POWER * total_t * 0.5);
        assert!(implant.ledger.residual_fraction.abs() < 1e-3);
    }

    #[test]
    fn phase_transitions_shared_within_skew() {
        let scenario = base_scenario(
            vec![
                implant("A", 0.015, 1),
                implant("B", 0.025, 2),
                implant("C", 0.035, 3),
            ],
            vec![CyclePlan {
                packets: vec![Packet {
                    device_id: id_of(1),
                    payload: payload(4),
                }],
                trigger_only: false,
                drive_scale: 1.0,
            }],
        );
        let bundle = run(&scenario).unwrap();
        // Group the broadcast-driven phase changes (notch-triggered entries
        // and the fixed-length data return) by order per implant; stimulus
        // completion times depend on each implant's programmed pulse and
        // are excluded. Cycles must agree and event times differ only by
        // the clock offsets.
        let mut per_implant: Vec<Vec<&Event>> = vec![Vec::new(); 3];
        for event in &bundle.events {
            if let (
                EventSource::Implant(i),
                EventKind::PhaseChanged {
                    from,
                    to,
                },
            ) = (&event.source, &event.kind)
            {
                let broadcast_driven = !(*from == OperatingPhase::Stimulation
                    && *to == OperatingPhase::Charging);
                if broadcast_driven {
                    per_implant[*i].push(event);
                }
            }
        }
        let transitions = per_implant[0].len();
        assert!(transitions >= 3);
        for group in 0..transitions {
            let cycles: Vec<u64> = per_implant.iter().map(|v| v[group].cycle).collect();
            assert!(cycles.iter().all(|&c| c == cycles[0]), "{cycles:?}");
            let ts: Vec<f64> = per_implant.iter().map(|v| v[group].t).collect();
            let spread = ts.iter().cloned().fold(f64::MIN, f64::max)
                - ts.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread <= 0.75e-6, "spread {spread}");
        }
    }
}
