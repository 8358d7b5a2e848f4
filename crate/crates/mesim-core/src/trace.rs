//! Run artifacts: the totally ordered event log, per-implant waveform
//! traces, stimulus and packet records, and the energy ledger summary.
//! A `TraceBundle` is deterministic for a given (scenario, seed) and can
//! be persisted and replayed into identical metrics.

use serde::{Deserialize, Serialize};

use crate::downlink::OperatingPhase;
use crate::identity::RegisterFile;
use crate::stimengine::StimSettings;

/// Event origin; the TX sorts ahead of implants at equal timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Tx,
    Implant(usize),
}

impl EventSource {
    fn rank(&self) -> usize {
        match self {
            EventSource::Tx => 0,
            EventSource::Implant(i) => i + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PorFired,
    BrownOut,
    ClockLocked {
        phase_offset: f64,
    },
    NotchDetected {
        index: u8,
    },
    PhaseChanged {
        from: OperatingPhase,
        to: OperatingPhase,
    },
    PacketSent {
        dump: String,
    },
    PacketDecoded {
        dump: String,
        bit_errors: u32,
    },
    PacketAccepted {
        dump: String,
    },
    PacketRejected {
        dump: String,
    },
    RegistersUpdated {
        registers: RegisterFile,
    },
    CalibrationFailed,
    ProtocolViolation,
    AmplitudeCodeClamped,
    LateralGainExtrapolated,
    StimStarted {
        amplitude: f64,
    },
    StimCompleted {
        amplitude: f64,
        truncated: bool,
    },
    StimSkippedUndervoltage {
        v_store: f64,
        required: f64,
    },
}

/// One log entry. `t` carries the per-implant clock phase offset so
/// cross-implant skew is visible in the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub cycle: u64,
    pub source: EventSource,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Sort events into the global total order: time, then source, then the
/// per-source emission sequence (the vector is already per-source ordered).
pub fn merge_events(mut events: Vec<Event>) -> Vec<Event> {
    events.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.source.rank().cmp(&b.source.rank()))
    });
    events
}

/// Decimated waveform samples, struct-of-arrays.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Waveform {
    pub t: Vec<f64>,
    pub v_envelope: Vec<f64>,
    pub v_rect: Vec<f64>,
    pub v_store: Vec<f64>,
    pub v_load: Vec<f64>,
    pub i_load: Vec<f64>,
}

impl Waveform {
    pub fn push(&mut self, t: f64, env: f64, v_rect: f64, v_store: f64, v_load: f64, i_load: f64) {
        self.t.push(t);
        self.v_envelope.push(env);
        self.v_rect.push(v_rect);
        self.v_store.push(v_store);
        self.v_load.push(v_load);
        self.i_load.push(i_load);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Energy ledger totals for one implant over the run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub energy_in: f64,
    pub energy_out: f64,
    pub energy_lost: f64,
    pub energy_stored: f64,
    /// in - out - lost - stored; zero up to float accumulation.
    pub residual: f64,
    /// Residual relative to the largest ledger column.
    pub residual_fraction: f64,
}

impl LedgerSummary {
    pub fn new(energy_in: f64, energy_out: f64, energy_lost: f64, energy_stored: f64) -> Self {
        let residual = energy_in - energy_out - energy_lost - energy_stored;
        let scale = energy_in.abs().max(energy_stored.abs()).max(1e-15);
        Self {
            energy_in,
            energy_out,
            energy_lost,
            energy_stored,
            residual,
            residual_fraction: residual / scale,
        }
    }
}

/// One generated stimulus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StimRecord {
    pub op_cycle: usize,
    /// Carrier cycle of the first drive edge.
    pub onset_cycle: u64,
    /// Onset wall time including the implant clock offset, seconds.
    pub onset_t: f64,
    pub settings: StimSettings,
    pub charge_phase1: f64,
    pub charge_phase2: f64,
    pub energy_delivered: f64,
    pub energy_drawn: f64,
    /// delivered / drawn.
    pub efficiency: f64,
    pub v_store_start: f64,
    pub v_store_end: f64,
    pub v_store_min: f64,
    pub truncated: bool,
}

/// One received frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PacketRecord {
    pub op_cycle: usize,
    pub frame_index: usize,
    pub dump: String,
    pub bit_errors: u32,
    pub accepted: bool,
    /// Threshold calibration failed; the frame was dropped.
    pub dropped: bool,
}

/// Everything one implant produced during a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImplantTrace {
    pub name: String,
    pub id_bits: Option<String>,
    pub phase_offset: f64,
    pub waveform: Waveform,
    pub stimuli: Vec<StimRecord>,
    pub packets: Vec<PacketRecord>,
    pub bits_compared: u64,
    pub bit_errors: u64,
    pub ledger: LedgerSummary,
    pub final_registers: RegisterFile,
}

/// TX-side record of what went on air.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TxTrace {
    pub total_cycles: u64,
    pub sent_packets: Vec<PacketSentRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PacketSentRecord {
    pub op_cycle: usize,
    pub frame_index: usize,
    pub start_cycle: u64,
    pub dump: String,
}

/// Complete, replayable artifact of one scenario run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceBundle {
    pub schema_version: u32,
    pub description: String,
    pub global_seed: u64,
    pub carrier_freq: f64,
    pub trace_decimation: u32,
    pub tx: TxTrace,
    pub implants: Vec<ImplantTrace>,
    pub events: Vec<Event>,
}

impl TraceBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Events attributed to one implant, in order.
    pub fn implant_events(&self, idx: usize) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(move |e| e.source == EventSource::Implant(idx))
    }

    /// Write one implant's waveform as CSV.
    pub fn waveform_csv(&self, idx: usize) -> String {
        let w = &self.implants[idx].waveform;
        let mut out = String::from("t,v_envelope,v_rect,v_store,v_load,i_load\n");
        for i in 0..w.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                w.t[i], w.v_envelope[i], w.v_rect[i], w.v_store[i], w.v_load[i], w.i_load[i]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_sort_by_time_then_source() {
        let mk = |t: f64, source: EventSource| Event {
            t,
            cycle: 0,
            source,
            kind: EventKind::PorFired,
        };
        let merged = merge_events(vec![
            mk(2.0, EventSource::Implant(1)),
            mk(1.0, EventSource::Implant(0)),
            mk(1.0, EventSource::Tx),
            mk(2.0, EventSource::Implant(0)),
        ]);
        assert_eq!(merged[0].source, EventSource::Tx);
        assert_eq!(merged[1].source, EventSource::Implant(0));
        assert_eq!(merged[2].t, 2.0);
        assert_eq!(merged[2].source, EventSource::Implant(0));
    }

    #[test]
    fn ledger_summary_residual() {
        let ledger = LedgerSummary::new(10.0, 4.0, 3.0, 3.0);
        assert_eq!(ledger.residual, 0.0);
        let off = LedgerSummary::new(10.0, 4.0, 3.0, 2.9);
        assert!(off.residual_fraction > 0.0);
    }
}
