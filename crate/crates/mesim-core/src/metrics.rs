//! Post-run analysis: per-implant link and power statistics plus
//! scene-level synchronization measures, computed purely from a
//! [`TraceBundle`] so persisted bundles replay to identical reports.

use serde::{Deserialize, Serialize};

use crate::downlink::OperatingPhase;
use crate::powerpath::QUIESCENT_POWER;
use crate::trace::{Event, EventKind, EventSource, LedgerSummary, TraceBundle};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImplantMetrics {
    pub name: String,
    pub id_bits: Option<String>,
    pub phase_offset: f64,
    /// Clock skew against the earliest implant in the scene, seconds.
    pub skew: f64,
    pub packets_decoded: usize,
    pub packets_accepted: usize,
    pub packets_rejected: usize,
    pub packets_dropped: usize,
    pub bits_compared: u64,
    pub bit_errors: u64,
    pub bit_error_rate: f64,
    pub stim_count: usize,
    pub stim_truncated: usize,
    /// Mean per-pulse delivered/drawn ratio.
    pub driver_efficiency: Option<f64>,
    /// Total delivered stimulation energy over everything spent on it:
    /// pulse draw plus the idle consumption across the run.
    pub system_stim_efficiency: Option<f64>,
    /// Lowest storage voltage seen during any pulse.
    pub regulation_droop_min: Option<f64>,
    /// Highest storage voltage over the run.
    pub v_store_max: f64,
    pub ledger: LedgerSummary,
}

/// Cross-implant spread of one repeated event group.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnsetGroup {
    pub op_cycle: usize,
    /// (implant index, onset time) pairs.
    pub onsets: Vec<(usize, f64)>,
    pub spread: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneMetrics {
    /// Worst spread across implants of any broadcast-driven phase
    /// transition, seconds.
    pub phase_transition_spread: f64,
    /// Stimulus onset spread per operating cycle.
    pub stim_onsets: Vec<OnsetGroup>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub implants: Vec<ImplantMetrics>,
    pub scene: SceneMetrics,
}

impl Metrics {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Compute the metrics report from a (possibly persisted) trace bundle.
pub fn metrics(bundle: &TraceBundle) -> Metrics {
    let min_offset = bundle
        .implants
        .iter()
        .map(|i| i.phase_offset)
        .fold(f64::INFINITY, f64::min);
    let run_seconds = bundle.tx.total_cycles as f64 / bundle.carrier_freq;

    let implants = bundle
        .implants
        .iter()
        .map(|implant| {
            let packets_accepted = implant.packets.iter().filter(|p| p.accepted).count();
            let packets_dropped = implant.packets.iter().filter(|p| p.dropped).count();
            let decoded = implant.packets.len() - packets_dropped;
            let stim_truncated = implant.stimuli.iter().filter(|s| s.truncated).count();
            let delivered: f64 = implant.stimuli.iter().map(|s| s.energy_delivered).sum();
            let drawn: f64 = implant.stimuli.iter().map(|s| s.energy_drawn).sum();
            let driver_efficiency = (drawn > 0.0).then(|| delivered / drawn);
            let system_stim_efficiency =
                (drawn > 0.0).then(|| delivered / (drawn + QUIESCENT_POWER * run_seconds));
            let regulation_droop_min = implant
                .stimuli
                .iter()
                .map(|s| s.v_store_min)
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.min(v)))
                });
            let v_store_max = implant
                .waveform
                .v_store
                .iter()
                .fold(0.0f64, |a, &b| a.max(b));
            ImplantMetrics {
                name: implant.name.clone(),
                id_bits: implant.id_bits.clone(),
                phase_offset: implant.phase_offset,
                skew: implant.phase_offset - min_offset,
                packets_decoded: decoded,
                packets_accepted,
                packets_rejected: decoded - packets_accepted,
                packets_dropped,
                bits_compared: implant.bits_compared,
                bit_errors: implant.bit_errors,
                bit_error_rate: if implant.bits_compared > 0 {
                    implant.bit_errors as f64 / implant.bits_compared as f64
                } else {
                    0.0
                },
                stim_count: implant.stimuli.len(),
                stim_truncated,
                driver_efficiency,
                system_stim_efficiency,
                regulation_droop_min,
                v_store_max,
                ledger: implant.ledger,
            }
        })
        .collect();

    Metrics {
        schema_version: bundle.schema_version,
        implants,
        scene: SceneMetrics {
            phase_transition_spread: phase_transition_spread(bundle),
            stim_onsets: stim_onset_groups(bundle),
        },
    }
}

/// Broadcast-driven phase transitions grouped by per-implant order; the
/// worst cross-implant time spread. Stimulus completions depend on each
/// implant's programmed pulse and are excluded.
pub fn phase_transition_spread(bundle: &TraceBundle) -> f64 {
    let n = bundle.implants.len();
    let mut per_implant: Vec<Vec<&Event>> = vec![Vec::new(); n];
    for event in &bundle.events {
        if let (
            EventSource::Implant(i),
            EventKind::PhaseChanged { from, to },
        ) = (&event.source, &event.kind)
        {
            if !(*from == OperatingPhase::Stimulation && *to == OperatingPhase::Charging) {
                per_implant[*i].push(event);
            }
        }
    }
    let groups = per_implant.iter().map(|v| v.len()).min().unwrap_or(0);
    let mut worst = 0.0f64;
    for g in 0..groups {
        let ts: Vec<f64> = per_implant.iter().map(|v| v[g].t).collect();
        let spread = ts.iter().fold(f64::MIN, |a, &b| a.max(b))
            - ts.iter().fold(f64::MAX, |a, &b| a.min(b));
        worst = worst.max(spread);
    }
    worst
}

/// Stimulus onsets grouped by operating cycle across implants.
pub fn stim_onset_groups(bundle: &TraceBundle) -> Vec<OnsetGroup> {
    let max_op = bundle
        .implants
        .iter()
        .flat_map(|i| i.stimuli.iter().map(|s| s.op_cycle))
        .max();
    let Some(max_op) = max_op else {
        return Vec::new();
    };
    (0..=max_op)
        .filter_map(|op_cycle| {
            let onsets: Vec<(usize, f64)> = bundle
                .implants
                .iter()
                .enumerate()
                .flat_map(|(idx, implant)| {
                    implant
                        .stimuli
                        .iter()
                        .filter(move |s| s.op_cycle == op_cycle)
                        .map(move |s| (idx, s.onset_t))
                })
                .collect();
            if onsets.is_empty() {
                return None;
            }
            let spread = onsets.iter().map(|o| o.1).fold(f64::MIN, f64::max)
                - onsets.iter().map(|o| o.1).fold(f64::MAX, f64::min);
            Some(OnsetGroup {
                op_cycle,
                onsets,
                spread,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelConfig, CoilSpec, MEFilmSpec, Pose};
    use crate::downlink::{CyclePlan, Packet, PacketFormat, Payload, StimMode, TxPlan};
    use crate::identity::DEFAULT_NOISE_SIGMA;
    use crate::powerpath::PowerConfig;
    use crate::scenario::{DriveCalibration, ImplantSpec, Scenario, SCHEMA_VERSION};
    use crate::stimengine::LoadModel;

    fn two_implant_scenario() -> Scenario {
        let id = crate::identity::generate_id(21, true, DEFAULT_NOISE_SIGMA)
            .unwrap()
            .bits;
        Scenario {
            schema_version: SCHEMA_VERSION,
            description: "metrics test".into(),
            global_seed: 5,
            coil: CoilSpec::default(),
            drive_calibration: Some(DriveCalibration {
                axial_distance: 0.030,
                target_voltage: 2.2,
            }),
            film: MEFilmSpec::default(),
            channel: ChannelConfig::default(),
            power: PowerConfig::default(),
            implants: vec![
                ImplantSpec {
                    name: "A".into(),
                    pose: Pose::axial(0.020),
                    device_seed: Some(21),
                    fixed_id: None,
                    load: LoadModel::resistive(1000.0),
                    c_store: None,
                },
                ImplantSpec {
                    name: "B".into(),
                    pose: Pose::axial(0.030),
                    device_seed: Some(99),
                    fixed_id: None,
                    load: LoadModel::resistive(1000.0),
                    c_store: None,
                },
            ],
            allow_collisions: false,
            schedule: TxPlan {
                ask_depth: 0.5,
                initial_charge_cycles: 30_000,
                charge_cycles: 12_000,
                inter_cycles: 14_000,
                stim_window_cycles: 1_600,
                cycles: vec![CyclePlan {
                    packets: vec![Packet {
                        device_id: id,
                        payload: Payload {
                            amp_code: 6,
                            pw_code: 4,
                            delay_code: 0,
                            mode: StimMode::Biphasic,
                            ref_trim: 0,
                        },
                    }],
                    trigger_only: false,
                    drive_scale: 1.0,
                }],
            },
            packet_format: PacketFormat::default(),
            substeps_per_cycle: 1,
            trace_decimation: 10,
            puf_noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }

    #[test]
    fn metrics_replay_from_persisted_bundle() {
        let bundle = crate::run(&two_implant_scenario()).unwrap();
        let live = metrics(&bundle);
        let persisted = TraceBundle::from_json(&bundle.to_json()).unwrap();
        let replayed = metrics(&persisted);
        assert_eq!(live.to_json_pretty(), replayed.to_json_pretty());
    }

    #[test]
    fn metrics_counts_and_skew() {
        let bundle = crate::run(&two_implant_scenario()).unwrap();
        let m = metrics(&bundle);
        assert_eq!(m.implants.len(), 2);
        // Exactly one implant accepted the single packet.
        let accepted: usize = m.implants.iter().map(|i| i.packets_accepted).sum();
        assert_eq!(accepted, 1);
        assert_eq!(m.implants[0].bit_errors, 0);
        // One implant is the skew reference.
        let zero_skews = m.implants.iter().filter(|i| i.skew == 0.0).count();
        assert!(zero_skews >= 1);
        assert!(m.scene.phase_transition_spread <= 0.75e-6);
        // The addressed implant fired; its onset group exists.
        assert_eq!(m.scene.stim_onsets.len(), 1);
    }
}
