//! Downlink protocol: TX-side ASK modulation and the implant-side receive
//! chain (clock recovery, notch-driven phase control, threshold
//! calibration, demodulation, packet codec).
//!
//! One bit occupies 64 carrier cycles; a notch is a 100 us field gap
//! (exactly 33 cycles at 330 kHz). The first notch of an operating cycle
//! starts data transmission, the second triggers stimulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

/// Carrier cycles per downlink bit.
pub const BIT_CYCLES: u64 = 64;
/// Carrier cycles per notch: 100 us at 330 kHz.
pub const NOTCH_CYCLES: u64 = 33;
/// Divider from the carrier to the data-recovery clock (10.3125 kHz).
pub const DATA_CLOCK_DIVIDER: u64 = 32;
/// Divider from the carrier to the stimulation clock (82.5 kHz).
pub const STIM_CLOCK_DIVIDER: u64 = 4;
/// Worst-case spread between two implants' recovered clocks, seconds.
pub const MAX_CLOCK_SKEW: f64 = 0.75e-6;
/// Minimum envelope amplitude for clock recovery, volts.
pub const CLOCK_MIN_AMPLITUDE: f64 = 0.09;
/// Payload bits following the 8-bit device ID.
pub const PAYLOAD_BITS: usize = 19;

#[derive(Debug, Error, PartialEq)]
pub enum DownlinkError {
    #[error("ask_depth {0} must lie strictly inside (0, 1)")]
    InvalidAskDepth(f64),
    #[error("cycle {0}: has packets but is flagged trigger-only")]
    TriggerOnlyWithPackets(usize),
    #[error("cycle {0}: empty data phase must be flagged trigger-only")]
    EmptyCycleNotFlagged(usize),
    #[error("schedule has no operating cycles")]
    NoCycles,
    #[error("frame length {got} bits, expected {expected}")]
    FrameLength { expected: usize, got: usize },
    #[error("preamble carries no modulation, cannot calibrate threshold")]
    FlatPreamble,
    #[error("{field} code {value} exceeds {max}")]
    CodeRange {
        field: &'static str,
        value: u8,
        max: u8,
    },
}

/// Mono- or biphasic stimulus selection, one payload bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimMode {
    Monophasic,
    Biphasic,
}

/// 19-bit payload: stimulation recipe plus reference trim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    /// Amplitude code, 4 bits (0.25 V per step, 15 reserved).
    pub amp_code: u8,
    /// Pulse-width code, 4 bits (0.15 ms + 0.07 ms per step).
    pub pw_code: u8,
    /// Start-delay code, 5 bits (two stim-clock periods per step).
    pub delay_code: u8,
    pub mode: StimMode,
    /// Voltage-reference trim, 5 bits.
    pub ref_trim: u8,
}

impl Payload {
    pub fn validate(&self) -> Result<(), DownlinkError> {
        let checks = [
            ("amp", self.amp_code, 15u8),
            ("pw", self.pw_code, 15),
            ("delay", self.delay_code, 31),
            ("ref_trim", self.ref_trim, 31),
        ];
        for (field, value, max) in checks {
            if value > max {
                return Err(DownlinkError::CodeRange { field, value, max });
            }
        }
        Ok(())
    }

    fn to_bits(self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(PAYLOAD_BITS);
        push_bits(&mut bits, self.amp_code as u32, 4);
        push_bits(&mut bits, self.pw_code as u32, 4);
        push_bits(&mut bits, self.delay_code as u32, 5);
        bits.push(self.mode == StimMode::Biphasic);
        push_bits(&mut bits, self.ref_trim as u32, 5);
        bits
    }

    fn from_bits(bits: &[bool]) -> Self {
        debug_assert_eq!(bits.len(), PAYLOAD_BITS);
        Self {
            amp_code: take_bits(&bits[0..4]) as u8,
            pw_code: take_bits(&bits[4..8]) as u8,
            delay_code: take_bits(&bits[8..13]) as u8,
            mode: if bits[13] {
                StimMode::Biphasic
            } else {
                StimMode::Monophasic
            },
            ref_trim: take_bits(&bits[14..19]) as u8,
        }
    }
}

fn push_bits(bits: &mut Vec<bool>, value: u32, width: u32) {
    for i in (0..width).rev() {
        bits.push(value >> i & 1 == 1);
    }
}

fn take_bits(bits: &[bool]) -> u32 {
    bits.iter().fold(0, |acc, &b| acc << 1 | b as u32)
}

/// Downlink frame: preamble, 8-bit device ID, 19-bit payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    /// Target device address. Serialized as a binary string ("11010111");
    /// plain numbers are accepted on input.
    #[serde(with = "device_id_serde")]
    pub device_id: u8,
    pub payload: Payload,
}

mod device_id_serde {
    use serde::de::{Error, Unexpected};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &u8, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{bits:08b}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<u8, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(u64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => {
                if s.len() == 8 && s.bytes().all(|b| b == b'0' || b == b'1') {
                    Ok(u8::from_str_radix(&s, 2).unwrap())
                } else {
                    Err(Error::invalid_value(
                        Unexpected::Str(&s),
                        &"8 binary digits",
                    ))
                }
            }
            Repr::Number(n) => u8::try_from(n)
                .map_err(|_| Error::invalid_value(Unexpected::Unsigned(n), &"a device id <= 255")),
        }
    }
}

/// On-air framing shared by TX and all implants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PacketFormat {
    /// Preamble pattern, MSB first. Alternating bits give the threshold
    /// calibrator both levels.
    pub preamble: Vec<bool>,
}

impl Default for PacketFormat {
    fn default() -> Self {
        Self {
            preamble: vec![true, false, true, false, true, false, true, false],
        }
    }
}

impl PacketFormat {
    pub fn frame_bits(&self) -> usize {
        self.preamble.len() + 8 + PAYLOAD_BITS
    }
}

/// Serialize a packet to on-air bits, MSB first.
pub fn encode_packet(format: &PacketFormat, packet: &Packet) -> Vec<bool> {
    let mut bits = Vec::with_capacity(format.frame_bits());
    bits.extend_from_slice(&format.preamble);
    push_bits(&mut bits, packet.device_id as u32, 8);
    bits.extend(packet.payload.to_bits());
    bits
}

/// Parse on-air bits back into a packet. The preamble carries no payload
/// information; only the frame length is checked.
pub fn decode_packet(format: &PacketFormat, bits: &[bool]) -> Result<Packet, DownlinkError> {
    let expected = format.frame_bits();
    if bits.len() != expected {
        return Err(DownlinkError::FrameLength {
            expected,
            got: bits.len(),
        });
    }
    let body = &bits[format.preamble.len()..];
    Ok(Packet {
        device_id: take_bits(&body[0..8]) as u8,
        payload: Payload::from_bits(&body[8..]),
    })
}

fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Event-log dump format: `<preamble>|<id:8b>|<payload:19b>`.
pub fn packet_dump(format: &PacketFormat, packet: &Packet) -> String {
    frame_dump(format, &encode_packet(format, packet))
}

/// Dump raw frame bits in the same `<preamble>|<id:8b>|<payload:19b>`
/// grouping, preserving any bit errors.
pub fn frame_dump(format: &PacketFormat, bits: &[bool]) -> String {
    let p = format.preamble.len().min(bits.len());
    let id_end = (p + 8).min(bits.len());
    format!(
        "{}|{}|{}",
        bits_to_string(&bits[..p]),
        bits_to_string(&bits[p..id_end]),
        bits_to_string(&bits[id_end..]),
    )
}

/// One constant-level span of the TX timeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub cycles: u64,
    /// Carrier amplitude as a fraction of full drive (0 = field off).
    pub level: f64,
}

/// TX-side ground truth for one operating cycle, used by the kernel to
/// align receivers and score bit errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleAnnotation {
    /// First carrier cycle of the data segment (after the first notch).
    pub data_start_cycle: u64,
    /// Bits on air during the data segment, all packets back to back.
    pub bits: Vec<bool>,
    pub packet_count: usize,
    /// First carrier cycle of the stimulation window (after the second notch).
    pub stim_start_cycle: u64,
}

/// TX field timeline: amplitude segments plus per-cycle annotations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSchedule {
    segments: Vec<Segment>,
    annotations: Vec<CycleAnnotation>,
    total_cycles: u64,
}

impl FieldSchedule {
    /// Build a bare schedule with no protocol annotations (tests, custom
    /// waveforms).
    pub fn from_segments(segments: Vec<Segment>) -> Self {
        let total_cycles = segments.iter().map(|s| s.cycles).sum();
        Self {
            segments,
            annotations: Vec::new(),
            total_cycles,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn annotations(&self) -> &[CycleAnnotation] {
        &self.annotations
    }

    pub fn total_cycles(&self) -> u64 {
        self.total_cycles
    }

    /// Drive level for one carrier cycle index.
    pub fn level_at(&self, cycle: u64) -> f64 {
        let mut start = 0;
        for segment in &self.segments {
            if cycle < start + segment.cycles {
                return segment.level;
            }
            start += segment.cycles;
        }
        0.0
    }

    /// Expand to one level per carrier cycle.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_cycles as usize);
        for segment in &self.segments {
            out.extend(std::iter::repeat(segment.level).take(segment.cycles as usize));
        }
        out
    }
}

/// Plan for one operating cycle of the TX.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CyclePlan {
    pub packets: Vec<Packet>,
    /// Zero-packet cycle that only fires the two notches, for high-rate
    /// stimulation after programming.
    #[serde(default)]
    pub trigger_only: bool,
    /// Per-cycle drive amplitude factor (source-variation sweeps).
    #[serde(default = "default_drive_scale")]
    pub drive_scale: f64,
}

fn default_drive_scale() -> f64 {
    1.0
}

/// TX schedule parameters shared by all operating cycles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TxPlan {
    /// Low-bit amplitude as a fraction of the high level.
    pub ask_depth: f64,
    /// Carrier-on cycles before the first notch (cold-start charging).
    pub initial_charge_cycles: u64,
    /// Carrier-on cycles opening every subsequent operating cycle.
    pub charge_cycles: u64,
    /// Carrier-on cycles between the data segment and the second notch.
    pub inter_cycles: u64,
    /// Carrier-on cycles after the second notch for stimulation.
    pub stim_window_cycles: u64,
    pub cycles: Vec<CyclePlan>,
}

/// Compose the TX field schedule for a sequence of operating cycles:
/// charge, notch, one 64-cycle segment per bit, charge, notch, stimulation
/// window.
pub fn modulate(plan: &TxPlan, format: &PacketFormat) -> Result<FieldSchedule, DownlinkError> {
    if !(plan.ask_depth > 0.0 && plan.ask_depth < 1.0) {
        return Err(DownlinkError::InvalidAskDepth(plan.ask_depth));
    }
    if plan.cycles.is_empty() {
        return Err(DownlinkError::NoCycles);
    }
    let mut segments = Vec::new();
    let mut annotations = Vec::new();
    let mut cursor = 0u64;
    let push = |segments: &mut Vec<Segment>, cycles: u64, level: f64, cursor: &mut u64| {
        if cycles > 0 {
            segments.push(Segment { cycles, level });
            *cursor += cycles;
        }
    };
    for (i, cycle) in plan.cycles.iter().enumerate() {
        if cycle.trigger_only && !cycle.packets.is_empty() {
            return Err(DownlinkError::TriggerOnlyWithPackets(i));
        }
        if cycle.packets.is_empty() && !cycle.trigger_only {
            return Err(DownlinkError::EmptyCycleNotFlagged(i));
        }
        for packet in &cycle.packets {
            packet.payload.validate()?;
        }
        let high = cycle.drive_scale;
        let low = cycle.drive_scale * plan.ask_depth;
        let charge = if i == 0 {
            plan.initial_charge_cycles
        } else {
            plan.charge_cycles
        };
        push(&mut segments, charge, high, &mut cursor);
        push(&mut segments, NOTCH_CYCLES, 0.0, &mut cursor);
        let data_start_cycle = cursor;
        let mut bits = Vec::new();
        for packet in &cycle.packets {
            bits.extend(encode_packet(format, packet));
        }
        for &bit in &bits {
            push(&mut segments, BIT_CYCLES, if bit { high } else { low }, &mut cursor);
        }
        push(&mut segments, plan.inter_cycles, high, &mut cursor);
        push(&mut segments, NOTCH_CYCLES, 0.0, &mut cursor);
        let stim_start_cycle = cursor;
        push(&mut segments, plan.stim_window_cycles, high, &mut cursor);
        annotations.push(CycleAnnotation {
            data_start_cycle,
            bits,
            packet_count: cycle.packets.len(),
            stim_start_cycle,
        });
    }
    Ok(FieldSchedule {
        segments,
        annotations,
        total_cycles: cursor,
    })
}

/// Recovered global clock of one implant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredClock {
    /// Carrier period, seconds.
    pub period: f64,
    /// Start-up phase offset against the scene reference, seconds. Bounded
    /// by a quarter carrier period (0.75 us).
    pub phase_offset: f64,
    /// Carrier cycle at which the comparator first saw the envelope.
    pub lock_cycle: u64,
}

impl RecoveredClock {
    pub fn data_clock_hz(&self) -> f64 {
        1.0 / (self.period * DATA_CLOCK_DIVIDER as f64)
    }

    pub fn stim_clock_hz(&self) -> f64 {
        1.0 / (self.period * STIM_CLOCK_DIVIDER as f64)
    }
}

/// Incremental clock-recovery comparator state.
#[derive(Clone, Debug)]
pub struct ClockRecovery {
    min_amplitude: f64,
    carrier_freq: f64,
    offset: f64,
    locked: Option<RecoveredClock>,
}

impl ClockRecovery {
    pub fn new(carrier_freq: f64, min_amplitude: f64, implant_seed: u64) -> Self {
        let mut rng = SimRng::derive(implant_seed, 0x434c4b); // "CLK"
        let offset = rng.uniform(0.0, MAX_CLOCK_SKEW);
        Self {
            min_amplitude,
            carrier_freq,
            offset,
            locked: None,
        }
    }

    /// Feed one carrier cycle's envelope; returns the clock on the locking
    /// cycle.
    pub fn on_cycle(&mut self, envelope: f64, cycle: u64) -> Option<RecoveredClock> {
        if self.locked.is_none() && envelope >= self.min_amplitude {
            let clock = RecoveredClock {
                period: 1.0 / self.carrier_freq,
                phase_offset: self.offset,
                lock_cycle: cycle,
            };
            self.locked = Some(clock);
            return Some(clock);
        }
        None
    }

    pub fn clock(&self) -> Option<&RecoveredClock> {
        self.locked.as_ref()
    }
}

/// Scan an envelope trace (one sample per carrier cycle) for clock lock.
/// Returns `None` when the amplitude never reaches `min_amplitude`.
pub fn recover_clock(
    envelope: &[f64],
    carrier_freq: f64,
    min_amplitude: f64,
    implant_seed: u64,
) -> Option<RecoveredClock> {
    let mut state = ClockRecovery::new(carrier_freq, min_amplitude, implant_seed);
    for (cycle, &env) in envelope.iter().enumerate() {
        if let Some(clock) = state.on_cycle(env, cycle as u64) {
            return Some(clock);
        }
    }
    None
}

/// SoC operating phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatingPhase {
    Charging,
    DataTransmission,
    Stimulation,
}

/// Phase-controller output events.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseEvent {
    Entered(OperatingPhase),
    /// A notch arrived while a stimulus was still running.
    ProtocolViolation,
}

/// Notch-driven operating-phase state machine.
///
/// The first notch of an operating cycle arms data transmission, the
/// second arms stimulation; each phase actually begins when the carrier
/// resumes (the dividers restart with it). A data segment ends after its
/// expected length or early on the next notch.
#[derive(Clone, Debug)]
pub struct PhaseController {
    phase: OperatingPhase,
    notch_count: u8,
    armed: Option<OperatingPhase>,
    data_cycles_left: u64,
    stim_running: bool,
}

impl Default for PhaseController {
    fn default() -> Self {
        Self {
            phase: OperatingPhase::Charging,
            notch_count: 0,
            armed: None,
            data_cycles_left: 0,
            stim_running: false,
        }
    }
}

impl PhaseController {
    pub fn phase(&self) -> OperatingPhase {
        self.phase
    }

    /// A notch was detected. `expected_data_bits` is the data-segment
    /// length the implant expects for the current operating cycle.
    pub fn on_notch(&mut self, expected_data_bits: u64) -> Option<PhaseEvent> {
        if self.stim_running {
            // Third notch before the stimulus completed.
            self.phase = OperatingPhase::Charging;
            self.notch_count = 0;
            self.armed = None;
            self.stim_running = false;
            return Some(PhaseEvent::ProtocolViolation);
        }
        self.notch_count += 1;
        if self.notch_count % 2 == 1 {
            self.armed = Some(OperatingPhase::DataTransmission);
            self.data_cycles_left = expected_data_bits * BIT_CYCLES;
        } else {
            self.armed = Some(OperatingPhase::Stimulation);
        }
        None
    }

    /// Carrier resumed after a notch: the armed phase begins and its
    /// divider restarts.
    pub fn on_carrier_resume(&mut self) -> Option<PhaseEvent> {
        let armed = self.armed.take()?;
        match armed {
            OperatingPhase::DataTransmission if self.data_cycles_left == 0 => {
                // Trigger-only cycle: nothing to receive.
                self.phase = OperatingPhase::Charging;
                None
            }
            OperatingPhase::Stimulation => {
                self.phase = OperatingPhase::Stimulation;
                self.stim_running = true;
                Some(PhaseEvent::Entered(OperatingPhase::Stimulation))
            }
            phase => {
                self.phase = phase;
                Some(PhaseEvent::Entered(phase))
            }
        }
    }

    /// Advance one carrier cycle inside the data phase; returns true when
    /// the expected-length data segment just finished.
    pub fn tick_data(&mut self) -> bool {
        if self.phase == OperatingPhase::DataTransmission {
            self.data_cycles_left = self.data_cycles_left.saturating_sub(1);
            if self.data_cycles_left == 0 {
                self.phase = OperatingPhase::Charging;
                return true;
            }
        }
        false
    }

    /// The stimulation engine finished (or skipped) its stimulus.
    pub fn on_stim_complete(&mut self) {
        if self.phase == OperatingPhase::Stimulation {
            self.phase = OperatingPhase::Charging;
        }
        self.stim_running = false;
        self.notch_count = 0;
    }
}

/// Interpret a finished notch list as an operating-phase timeline.
///
/// `notches` are `(detect_cycle, resume_cycle)` pairs ordered in time;
/// `expected_data_bits` gives the data-segment length per operating cycle;
/// stimuli are taken to complete `stim_cycles` after the stimulation phase
/// begins. Returns `(cycle, phase)` transitions, mirroring the incremental
/// [`PhaseController`] semantics: odd notches start data, even notches
/// start stimulation, a notch during a running stimulus resets to charging.
pub fn phase_timeline(
    notches: &[(u64, u64)],
    expected_data_bits: &[u64],
    stim_cycles: u64,
) -> Vec<(u64, OperatingPhase)> {
    let mut timeline = Vec::new();
    let mut op_cycle = 0usize;
    let mut parity = 0u8;
    let mut data_end: Option<u64> = None;
    let mut stim_end: Option<u64> = None;
    for &(detect, resume) in notches {
        if let Some(end) = data_end {
            // Expected-length termination, or early cut by this notch.
            let end = end.min(detect);
            timeline.push((end, OperatingPhase::Charging));
            data_end = None;
        }
        if let Some(end) = stim_end {
            if end <= detect {
                timeline.push((end, OperatingPhase::Charging));
                stim_end = None;
                parity = 0;
                op_cycle += 1;
            } else {
                // Notch while the stimulus is still running: protocol
                // violation, reset to charging and restart the cycle count.
                timeline.push((detect, OperatingPhase::Charging));
                stim_end = None;
                parity = 0;
                continue;
            }
        }
        parity += 1;
        if parity % 2 == 1 {
            let bits = expected_data_bits.get(op_cycle).copied().unwrap_or(0);
            if bits > 0 {
                timeline.push((resume, OperatingPhase::DataTransmission));
                data_end = Some(resume + bits * BIT_CYCLES);
            }
        } else {
            timeline.push((resume, OperatingPhase::Stimulation));
            stim_end = Some(resume + stim_cycles);
        }
    }
    if let Some(end) = data_end {
        timeline.push((end, OperatingPhase::Charging));
    }
    if let Some(end) = stim_end {
        timeline.push((end, OperatingPhase::Charging));
    }
    timeline
}

/// Number of leading cycles of a bit window skipped before averaging, so
/// the plateau estimate sees the settled envelope.
const WINDOW_SETTLE_CYCLES: u64 = 16;
/// Cycles averaged around the window center.
const WINDOW_SAMPLE_CYCLES: u64 = 32;

/// Mean of the settled central part of one bit window.
pub fn window_plateau_mean(window: &[f64]) -> f64 {
    let lo = WINDOW_SETTLE_CYCLES as usize;
    let hi = (WINDOW_SETTLE_CYCLES + WINDOW_SAMPLE_CYCLES) as usize;
    let slice = &window[lo.min(window.len())..hi.min(window.len())];
    slice.iter().sum::<f64>() / slice.len().max(1) as f64
}

/// Demodulation threshold from per-window plateau means of the preamble:
/// midpoint of the high and low plateau averages.
pub fn threshold_from_plateaus(means: &[f64]) -> Result<f64, DownlinkError> {
    if means.len() < 2 {
        return Err(DownlinkError::FlatPreamble);
    }
    let mut sorted = means.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let half = sorted.len() / 2;
    let low = sorted[..half].iter().sum::<f64>() / half as f64;
    let high = sorted[half..].iter().sum::<f64>() / (sorted.len() - half) as f64;
    // No discernible modulation: the tracker cannot place a threshold.
    if high - low < 0.02 * high.max(1e-9) {
        return Err(DownlinkError::FlatPreamble);
    }
    Ok((high + low) / 2.0)
}

/// Per-packet threshold calibration over the raw preamble envelope (one
/// sample per carrier cycle, `preamble_bits * 64` samples).
pub fn calibrate_threshold(
    preamble_env: &[f64],
    preamble_bits: usize,
) -> Result<f64, DownlinkError> {
    if preamble_env.len() < preamble_bits * BIT_CYCLES as usize {
        return Err(DownlinkError::FlatPreamble);
    }
    let means: Vec<f64> = (0..preamble_bits)
        .map(|i| {
            let start = i * BIT_CYCLES as usize;
            window_plateau_mean(&preamble_env[start..start + BIT_CYCLES as usize])
        })
        .collect();
    threshold_from_plateaus(&means)
}

/// Slice an envelope trace into 64-cycle bit windows and decide each bit
/// against the calibrated threshold.
pub fn demodulate(envelope: &[f64], threshold: f64) -> Vec<bool> {
    envelope
        .chunks_exact(BIT_CYCLES as usize)
        .map(|window| window_plateau_mean(window) > threshold)
        .collect()
}
