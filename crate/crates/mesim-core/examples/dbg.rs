use mesim_core::channel::{ChannelConfig, CoilSpec, MEFilmSpec, Pose};
use mesim_core::downlink::{CyclePlan, Packet, PacketFormat, Payload, StimMode, TxPlan};
use mesim_core::identity::{generate_id, DEFAULT_NOISE_SIGMA};
use mesim_core::scenario::{DriveCalibration, ImplantSpec, Scenario, SCHEMA_VERSION};
use mesim_core::stimengine::LoadModel;
use mesim_core::trace::EventKind;

fn main() {
    // criterion 7 scenario
    let seed = 178u64;
    let id = generate_id(seed, true, DEFAULT_NOISE_SIGMA).unwrap().bits;
    let mut cycles = vec![CyclePlan {
        packets: vec![Packet { device_id: id, payload: Payload { amp_code: 14, pw_code: 15, delay_code: 0, mode: StimMode::Biphasic, ref_trim: 0 } }],
        trigger_only: false, drive_scale: 1.0,
    }];
    for _ in 0..20 { cycles.push(CyclePlan { packets: vec![], trigger_only: true, drive_scale: 1.0 }); }
    let scenario = Scenario {
        schema_version: SCHEMA_VERSION, description: "c7".into(), global_seed: 7,
        coil: CoilSpec::default(),
        drive_calibration: Some(DriveCalibration { axial_distance: 0.025, target_voltage: 2.6 }),
        film: MEFilmSpec::default(), channel: ChannelConfig::default(), power: Default::default(),
        implants: vec![ImplantSpec { name: "i".into(), pose: Pose::axial(0.025), device_seed: Some(seed), fixed_id: None, load: LoadModel::resistive(1000.0), c_store: None }],
        allow_collisions: false,
        schedule: TxPlan { ask_depth: 0.5, initial_charge_cycles: 40_000, charge_cycles: 10_000, inter_cycles: 3_934, stim_window_cycles: 2_500, cycles },
        packet_format: PacketFormat::default(), substeps_per_cycle: 1, trace_decimation: 10, puf_noise_sigma: DEFAULT_NOISE_SIGMA,
    };
    let bundle = mesim_core::run(&scenario).unwrap();
    println!("C7 stimuli: {}", bundle.implants[0].stimuli.len());
    for e in bundle.events.iter() {
        if matches!(e.kind, EventKind::StimSkippedUndervoltage { .. } | EventKind::ProtocolViolation | EventKind::CalibrationFailed | EventKind::BrownOut) {
            println!("  cycle {:>9} {:?}", e.cycle, e.kind);
        }
    }
    let st = &bundle.implants[0].stimuli;
    if let Some(s) = st.first() { println!("  first stim: start {:.3} end {:.3} min {:.3}", s.v_store_start, s.v_store_end, s.v_store_min); }

    // criterion 9 probe: first failing pose
    let coil = CoilSpec::default();
    let film = MEFilmSpec::default();
    let drive = 3.2 / (film.voltage_coefficient * coil.field_per_ampere(0.030));
    let mut rng = mesim_core::rng::SimRng::new(777);
    let template = mesim_core::linkbudget::SceneTemplate {
        coil: CoilSpec { drive_current_peak: drive, ..coil },
        film: film.clone(), channel: ChannelConfig::default(),
    };
    let mut tested = 0;
    while tested < 25 {
        let pose = Pose {
            axial_distance: rng.uniform(0.010, 0.045),
            lateral_offset: rng.uniform(0.0, 0.018),
            theta_xz: rng.uniform(0.0, 60.0),
            theta_yz: rng.uniform(0.0, 60.0),
            theta_z: 0.0,
        };
        let amplitude = template.amplitude(&pose).unwrap();
        if amplitude < 1.5 { continue; }
        tested += 1;
        let packet = Packet { device_id: (rng.next_u64() % 256) as u8, payload: Payload { amp_code: 0, pw_code: (rng.next_u64() % 16) as u8, delay_code: (rng.next_u64() % 32) as u8, mode: StimMode::Biphasic, ref_trim: (rng.next_u64() % 32) as u8 } };
        let scenario = Scenario {
            schema_version: SCHEMA_VERSION, description: "ber".into(), global_seed: tested as u64,
            coil: template.coil.clone(), drive_calibration: None, film: film.clone(),
            channel: ChannelConfig::default(), power: Default::default(),
            implants: vec![ImplantSpec { name: "p".into(), pose, device_seed: None, fixed_id: Some(format!("{:08b}", packet.device_id)), load: LoadModel::resistive(1000.0), c_store: None }],
            allow_collisions: false,
            schedule: TxPlan { ask_depth: 0.5, initial_charge_cycles: 3_000, charge_cycles: 1_000, inter_cycles: 300, stim_window_cycles: 300, cycles: vec![CyclePlan { packets: vec![packet], trigger_only: false, drive_scale: 1.0 }] },
            packet_format: PacketFormat::default(), substeps_per_cycle: 1, trace_decimation: 50, puf_noise_sigma: DEFAULT_NOISE_SIGMA,
        };
        let bundle = mesim_core::run(&scenario).unwrap();
        let implant = &bundle.implants[0];
        if implant.packets.is_empty() || !implant.packets[0].accepted {
            println!("C9 probe {} amplitude {:.3}: packets {:?}", tested, amplitude, implant.packets.len());
            for e in bundle.events.iter().take(12) { println!("   {:>7} {:?} {:?}", e.cycle, e.source, e.kind); }
            break;
        }
    }
    println!("C9 done {tested}");
}
