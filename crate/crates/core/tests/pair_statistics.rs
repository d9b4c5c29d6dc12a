use smtjsim::analog::{delta_current, BoardDefaults, PipelineConfig, Polarity};
use smtjsim::markov::{
    build_generator, joint_dwell_times, pair_model_from_devices, predict_correlation, steady_state, swap_devices,
};
use smtjsim::presets;
use smtjsim::simnet::{rate_matrix, simulate, NetworkSpec};
use smtjsim::stats::{joint_occupancy, sampled_interior_dwell_stats, sampled_pearson};

fn pair(a: &str, b: &str, gain: f64, polarity: Polarity) -> NetworkSpec {
    let devices = vec![presets::device(a).unwrap(), presets::device(b).unwrap()];
    let mut net = NetworkSpec::new(devices, 0.0);
    let board = BoardDefaults::default();
    for (s, t) in [(0, 1), (1, 0)] {
        let cfg = PipelineConfig::between(&board, &net.devices[s], &net.devices[t], gain, polarity);
        net.set_coupling(t, s, Some(cfg)).unwrap();
    }
    net
}

fn generator_in_network_order(net: &NetworkSpec) -> [[f64; 4]; 4] {
    let di = [0, 1].map(|t| delta_current(net.coupling(t, 1 - t).unwrap()).unwrap());
    let pol = net.coupling(1, 0).unwrap().polarity();
    let fit = pair_model_from_devices([&net.devices[0], &net.devices[1]], di, pol).unwrap();
    let q = build_generator(&fit.model).unwrap().q;
    if !fit.swapped {
        return q;
    }
    let rows = swap_devices(q);
    rows.map(swap_devices)
}

#[test]
fn network_rate_matrix_matches_markov_generator() {
    for (a, b, pol) in [
        ("smtj1", "smtj1", Polarity::Positive),
        ("smtj2", "smtj3", Polarity::Positive),
        ("smtj3", "smtj2", Polarity::Negative),
    ] {
        let net = pair(a, b, 0.04, pol);
        let q = rate_matrix(&net).unwrap();
        let want = generator_in_network_order(&net);
        for i in 0..4 {
            for j in 0..4 {
                let scale = want[i][i].abs();
                assert!((q[(i, j)] - want[i][j]).abs() <= 1e-9 * scale, "{a}/{b} {pol:?} q[{i}][{j}]");
            }
        }
    }
}

#[test]
fn sampled_dwells_match_markov_at_fine_sampling() {
    let net = pair("smtj1", "smtj1", 0.0, Polarity::Positive);
    let g: f64 = 2.0;
    let b = net.devices[0].slope_b().0;
    let unit = delta_current(&net.coupling(1, 0).unwrap().with_gain(1.0)).unwrap();
    let mut net = net;
    for t in 0..2 {
        let cfg = net.coupling(t, 1 - t).unwrap().with_gain(g.ln() / (b * unit));
        net.set_coupling(t, 1 - t, Some(cfg)).unwrap();
    }
    let gen = {
        let q = generator_in_network_order(&net);
        smtjsim::markov::Generator4 { q }
    };
    let want = joint_dwell_times(&gen).unwrap();
    let min_dwell = want.iter().cloned().fold(f64::INFINITY, f64::min);
    let traces = simulate(&net, 3.0, 11).unwrap();
    let got = sampled_interior_dwell_stats(&traces[0], &traces[1], 0.01 * min_dwell).unwrap();
    for s in 0..4 {
        let rel = (got.mean_dwell[s] / want[s] - 1.0).abs();
        assert!(rel < 0.05, "state {s}: {} vs {} ({rel})", got.mean_dwell[s], want[s]);
    }

    let occ = joint_occupancy(&[&traces[0], &traces[1]]).unwrap();
    let pi = steady_state(&gen).unwrap();
    for s in 0..4 {
        assert!((occ[s] - pi[s]).abs() < 0.02, "occupancy {s}");
    }
    let rho = sampled_pearson(&traces[0], &traces[1], 1e-5).unwrap().rho;
    let predicted = predict_correlation(&gen).unwrap();
    assert!((rho - predicted).abs() < 0.03, "{rho} vs {predicted}");
}

#[test]
fn negative_polarity_anticorrelates() {
    let net = pair("smtj1", "smtj1", 0.05, Polarity::Negative);
    let traces = simulate(&net, 1.0, 3).unwrap();
    let rho = sampled_pearson(&traces[0], &traces[1], 1e-5).unwrap().rho;
    assert!(rho < -0.8, "{rho}");
}
