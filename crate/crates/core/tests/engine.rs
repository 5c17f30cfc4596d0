mod support;

use uwtrust::adversary::AttackKind;
use uwtrust::harness::calibration::calibrate;
use uwtrust::harness::{simulate, Mode, RunOptions};
use uwtrust::trust::Tier;
use uwtrust::world::{DropReason, PacketKind};

#[test]
fn same_seed_same_mission() {
    let cfg = support::small_scenario();
    let norms = calibrate(&cfg).unwrap();
    let opts = RunOptions { trace_events: true };
    let a = simulate(&cfg, 9, norms, None, &opts).unwrap();
    let b = simulate(&cfg, 9, norms, None, &opts).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.packets, b.packets);
    assert_eq!(a.rows, b.rows);
    let c = simulate(&cfg, 10, norms, None, &opts).unwrap();
    assert_ne!(a.packets, c.packets);
}

#[test]
fn lossless_benign_network_delivers_everything() {
    let mut cfg = support::small_scenario();
    cfg.adversary.fraction = 0.0;
    cfg.channel.base_loss_prob = 0.0;
    cfg.channel.loss_per_km = 0.0;
    // Everyone hears a gateway: the graph stays connected while AUVs move.
    cfg.channel.comm_range_m = 2000.0;
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 4, norms, None, &RunOptions::default()).unwrap();
    assert!(out.stats.originated > 0);
    assert_eq!(out.stats.pdr, Some(1.0));
}

#[test]
fn static_trust_never_flags() {
    let cfg = support::small_scenario();
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 2, norms, None, &RunOptions::default()).unwrap();
    assert!(out.stats.confusion.tp + out.stats.confusion.fn_ > 0);
    assert_eq!(out.stats.recall, 0.0);
    assert!(out.rows.iter().all(|r| r.flagged_count == 0 && r.excluded_count == 0));
    assert!(out.ledger.is_empty());
}

#[test]
fn saturated_drop_discards_every_relay() {
    let mut cfg = support::small_scenario();
    cfg.adversary.mix = vec![AttackKind::SelectiveDrop];
    cfg.adversary.drop_probability = 1.0;
    cfg.adversary.activation_window = [0.0, 0.0];
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 3, norms, None, &RunOptions::default()).unwrap();
    for id in &out.assignment.assigned {
        let relayed_on = out
            .packets
            .iter()
            .filter(|r| r.src == *id && r.origin != *id && r.on_air() && r.retransmission_of.is_none())
            .count();
        assert_eq!(relayed_on, 0, "agent {id} relayed a packet");
    }
    assert!(out.packets.iter().any(|r| r.dropped_reason == Some(DropReason::MaliciousDrop)));
}

#[test]
fn null_attacks_leave_the_mission_unchanged() {
    let mut cfg = support::small_scenario();
    cfg.adversary.mix = vec![AttackKind::SelectiveDrop, AttackKind::RouteManipulation];
    cfg.adversary.drop_probability = 0.0;
    cfg.adversary.detour_probability = 0.0;
    let norms = calibrate(&cfg).unwrap();
    let attacked = simulate(&cfg, 8, norms, None, &RunOptions::default()).unwrap();
    cfg.adversary.fraction = 0.0;
    let benign = simulate(&cfg, 8, norms, None, &RunOptions::default()).unwrap();
    assert_eq!(attacked.packets, benign.packets);
    assert_eq!(attacked.vectors, benign.vectors);
}

#[test]
fn energy_books_balance() {
    let mut cfg = support::small_scenario();
    cfg.mode = Mode::Bayesian;
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 6, norms, None, &RunOptions::default()).unwrap();
    for a in &out.agents {
        assert!(a.residual_energy >= 0.0);
        assert!((a.initial_energy - a.residual_energy - a.consumed_energy).abs() < 1e-9 * a.initial_energy);
    }
    let last = out.rows.last().unwrap();
    let mean = out.agents.iter().map(|a| a.residual_energy).sum::<f64>() / out.agents.len() as f64;
    assert_eq!(last.mean_residual_energy_j, mean);
}

#[test]
fn metric_rows_are_well_formed() {
    let mut cfg = support::small_scenario();
    cfg.mode = Mode::Bayesian;
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 7, norms, None, &RunOptions::default()).unwrap();
    assert_eq!(out.rows.len() as u64, cfg.intervals());
    for (k, r) in out.rows.iter().enumerate() {
        assert_eq!(r.interval_index, k as u64);
        for v in [r.accuracy, r.precision, r.recall, r.pdr_cumulative].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r.accuracy.is_some(), k as u64 >= cfg.warmup_intervals);
        assert!(r.isolated_count <= r.excluded_count);
    }
}

#[test]
fn bayesian_escalations_exclude_within_an_interval() {
    let mut cfg = support::small_scenario();
    cfg.mode = Mode::Bayesian;
    cfg.mission_duration_s = 3600.0;
    cfg.adversary.mix = vec![AttackKind::SelectiveDrop];
    cfg.adversary.drop_probability = 1.0;
    let norms = calibrate(&cfg).unwrap();
    let mut escalations = 0;
    for seed in 1..6 {
        let out = simulate(&cfg, seed, norms, None, &RunOptions::default()).unwrap();
        escalations += out.escalations.len();
        for e in &out.escalations {
            assert!(e.excluded_at.since(e.triggered_at) <= cfg.monitoring_interval_s);
        }
        // Every committed isolation follows a local constraint.
        for t in out.transitions.iter().filter(|t| t.to == Tier::Isolated) {
            assert_eq!(t.from, Tier::LocallyConstrained);
            assert!(t.ledger_height.is_some());
        }
        assert_eq!(uwtrust::governance::verify_chain(&out.ledger), Ok(()));
    }
    assert!(escalations > 0);
}

#[test]
fn trust_summaries_are_control_traffic() {
    let mut cfg = support::small_scenario();
    cfg.mode = Mode::Bayesian;
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 1, norms, None, &RunOptions::default()).unwrap();
    let data = out.packets.iter().filter(|r| r.kind == PacketKind::SensorData).count();
    assert!(data > 0);
    assert!(out.stats.originated as usize <= data);
}
