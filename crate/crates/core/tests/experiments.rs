use std::f64::consts::FRAC_PI_2;

use qcausal::experiments::invariants::Check;
use qcausal::experiments::{
    run_emergence_experiment, run_invariant_suite, run_profile, run_propagation_time_experiment,
    run_resolution_sweep, Cell, ExperimentConfig, ModelConfig, ResultTable, Setup, SuiteScope,
};
use qcausal::hilbert::C64;

fn ring() -> ExperimentConfig {
    ExperimentConfig::new(ModelConfig::Ring {
        sites: 256,
        circumference: 256.0,
        mass: 1.0,
        flight_time: 10.0,
    })
}

fn values(t: &ResultTable, column: &str) -> Vec<f64> {
    t.column(column)
        .unwrap()
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect()
}

fn ring_propagation(delay: f64, width_spacings: f64) -> ResultTable {
    let (resolved, _) = ring().resolve().unwrap();
    let mut propagation = resolved.propagation.unwrap();
    propagation.delay = delay;
    propagation.width_spacings = width_spacings;
    let mut cfg = ring();
    cfg.propagation = Some(propagation);
    run_propagation_time_experiment(&Setup::new(cfg).unwrap()).unwrap()
}

#[test]
fn ring_packet_peaks_at_the_added_delay() {
    let delay = 5.0;
    for width in [4.0, 8.0] {
        let t = ring_propagation(delay, width);
        let gradient = values(&t, "gradient");
        // The middle centre sits on the stationary energy.
        let mid = t.len() / 2;
        assert!((gradient[mid] - delay).abs() < 0.01, "{}", gradient[mid]);
        let peak = values(&t, "t_peak")[mid];
        assert!((peak / delay - 1.0).abs() < 0.05, "width {width}: {peak}");
    }
}

#[test]
fn ring_packet_without_delay_peaks_near_zero() {
    let t = ring_propagation(0.0, 4.0);
    let peak = values(&t, "t_peak")[t.len() / 2];
    assert!(peak.abs() < 0.1, "{peak}");
}

#[test]
fn ring_peaks_follow_the_gradient_across_centres() {
    let t = ring_propagation(0.0, 4.0);
    let peaks = values(&t, "t_peak");
    let gradient = values(&t, "gradient");
    assert!(peaks.windows(2).all(|w| w[1] < w[0]));
    for (p, g) in peaks.iter().zip(&gradient) {
        assert!((p - g).abs() < 0.15, "{p} vs {g}");
    }
}

#[test]
fn spin_packets_peak_at_the_rotation_and_resolve_the_gradient() {
    let t = run_propagation_time_experiment(
        &Setup::new(ExperimentConfig::new(ModelConfig::Spin { j: 20.0 })).unwrap(),
    )
    .unwrap();
    for p in values(&t, "t_peak") {
        assert!((p - FRAC_PI_2).abs() < 1e-9, "{p}");
    }
    let relative = values(&t, "relative_difference");
    let resolved: Vec<f64> = relative.into_iter().filter(|v| v.is_finite()).collect();
    assert!(!resolved.is_empty());
    assert!(resolved.iter().all(|r| *r < 0.05), "{resolved:?}");
}

#[test]
fn weak_regime_peak_sits_at_the_real_weak_value() {
    let setup = Setup::new(ExperimentConfig::new(ModelConfig::Spin { j: 20.0 })).unwrap();
    let z = setup.intermediate().unwrap();
    let am = z.amplitudes_of(&setup.a).unwrap();
    let bm = z.amplitudes_of(&setup.b).unwrap();
    let overlap: C64 = am.iter().zip(&bm).map(|(a, b)| b.conj() * a).sum();
    let weak: C64 = am
        .iter()
        .zip(&bm)
        .zip(z.eigenvalues())
        .map(|((a, b), &x)| b.conj() * a * x)
        .sum::<C64>()
        / overlap;
    let nearest = z.eigenvalues()[z.nearest_index(weak.re)];
    let t = run_resolution_sweep(&setup).unwrap();
    let argmax = values(&t, "argmax_x_r");
    assert_eq!(*argmax.last().unwrap(), nearest);
}

#[test]
fn sweep_disturbance_falls_with_resolution() {
    let t = run_resolution_sweep(
        &Setup::new(ExperimentConfig::new(ModelConfig::Spin { j: 20.0 })).unwrap(),
    )
    .unwrap();
    let tv = values(&t, "total_variation");
    assert!(tv.windows(2).all(|w| w[1] < w[0]), "{tv:?}");
    let regime = t
        .columns
        .iter()
        .position(|c| c == "regime_at_stationary")
        .unwrap();
    assert_eq!(t.rows[0][regime], Cell::from("quantum"));
}

#[test]
fn ring_emergence_matches_classical_momentum() {
    let t = run_emergence_experiment(&Setup::new(ring()).unwrap()).unwrap();
    assert!(!t.is_empty());
    for d in values(&t, "deviation_spacings") {
        assert!(d < 1.0, "{d}");
    }
}

#[test]
fn spin_forbidden_pair_has_no_stationary_point() {
    let t = run_emergence_experiment(
        &Setup::new(ExperimentConfig::new(ModelConfig::Spin { j: 50.0 })).unwrap(),
    )
    .unwrap();
    let status = t.columns.iter().position(|c| c == "status").unwrap();
    let pass = t.columns.iter().position(|c| c == "pass").unwrap();
    assert!(t.rows.iter().any(|r| r[status] == Cell::from("absent")));
    assert!(t.rows.iter().all(|r| r[pass] == Cell::Flag(true)));
}

#[test]
fn qubit_emergence_is_not_applicable() {
    let setup = Setup::new(ExperimentConfig::new(ModelConfig::Qubit)).unwrap();
    assert!(run_emergence_experiment(&setup).is_err());
}

#[test]
fn qubit_profile_has_quarter_turn_actions_and_no_stationary_point() {
    let tables =
        run_profile(&Setup::new(ExperimentConfig::new(ModelConfig::Qubit)).unwrap()).unwrap();
    let s = values(&tables[0], "S_raw");
    assert!((s[0] + FRAC_PI_2 / 2.0).abs() < 1e-12);
    assert!((s[1] - FRAC_PI_2 / 2.0).abs() < 1e-12);
    assert!(tables[1].is_empty());
}

#[test]
fn invariant_suite_passes() {
    let t = run_invariant_suite(&SuiteScope::All, 0);
    let pass = t.columns.iter().position(|c| c == "pass").unwrap();
    let asserted = t.columns.iter().position(|c| c == "asserted").unwrap();
    let name = t.columns.iter().position(|c| c == "name").unwrap();
    for row in &t.rows {
        if row[asserted] == Cell::Flag(true) {
            assert_eq!(row[pass], Cell::Flag(true), "{:?}", row[name]);
        }
    }
}

#[test]
fn failed_check_is_reported() {
    let c = Check::at_most("hilbert", "planted", 1.0, 1e-12);
    assert!(!c.ok());
}
