mod support;

use uwtrust::harness::calibration::calibrate;
use uwtrust::harness::{simulate, Mode, RunOptions};

#[test]
fn streamed_vectors_match_log_recomputation() {
    let mut cfg = support::small_scenario();
    let norms = calibrate(&cfg).unwrap();
    for (mode, seed) in [(Mode::Static, 11), (Mode::Bayesian, 12)] {
        cfg.mode = mode;
        let out = simulate(&cfg, seed, norms, None, &RunOptions::default()).unwrap();
        let oracle = support::brute_force_features(&out.packets, &support::gateways(&out.agents), cfg.n_agents, &norms, cfg.intervals());
        assert_eq!(out.vectors.len(), oracle.len());
        for (k, (got, want)) in out.vectors.iter().zip(&oracle).enumerate() {
            assert_eq!(got, want, "{mode} seed {seed} interval {k}");
        }
    }
}

#[test]
fn replayed_ids_show_up_as_deviation() {
    let mut cfg = support::small_scenario();
    cfg.adversary.mix = vec![uwtrust::adversary::AttackKind::Replay];
    cfg.adversary.activation_window = [0.0, 0.0];
    cfg.adversary.replay_rate = 3.0;
    let norms = calibrate(&cfg).unwrap();
    let out = simulate(&cfg, 5, norms, None, &RunOptions::default()).unwrap();
    let deviant: f64 = out
        .assignment
        .assigned
        .iter()
        .map(|a| out.vectors.iter().map(|row| row[a.index()].protocol_deviation_rate()).sum::<f64>())
        .sum();
    assert!(deviant > 0.0);
    let benign: f64 = (0..cfg.n_agents)
        .filter(|i| !out.assignment.assigned.contains(&uwtrust::world::AgentId(*i as u32)))
        .map(|i| out.vectors.iter().map(|row| row[i].protocol_deviation_rate()).sum::<f64>())
        .sum();
    assert_eq!(benign, 0.0);
}
