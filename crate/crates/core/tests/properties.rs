use proptest::prelude::*;

use qcausal::action::{action_phase, principal};
use qcausal::experiments::invariants::{random_state, seeded_rng};
use qcausal::experiments::{Cell, ExperimentConfig, ModelConfig, ResultTable};
use qcausal::hilbert::{frame_shift, inner, PhysicalConstants, C64};
use qcausal::measurement::{build_measurement, gaussian_kernel};
use qcausal::models::spin_system_shared;

const TOLERANCE: f64 = 1e-12;

fn spin() -> impl Strategy<Value = f64> {
    (1u32..=40).prop_map(|twice| twice as f64 / 2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expansion_reconstructs_state(j in spin(), seed in any::<u64>()) {
        let sys = spin_system_shared(j).unwrap();
        let psi = random_state(&mut seeded_rng(seed, 0), sys.dimension);
        for basis in sys.bases.values() {
            let back = basis.synthesize(&basis.amplitudes_of(&psi).unwrap());
            let err = back
                .iter()
                .zip(psi.amplitudes())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            prop_assert!(err < TOLERANCE, "{err}");
        }
    }

    #[test]
    fn action_is_gauge_invariant_and_antisymmetric(
        j in spin(),
        seed in any::<u64>(),
        phases in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let c = PhysicalConstants::default();
        let sys = spin_system_shared(j).unwrap();
        let mut rng = seeded_rng(seed, 1);
        let a = random_state(&mut rng, sys.dimension);
        let b = random_state(&mut rng, sys.dimension);
        for m in sys.basis("z").unwrap().vectors() {
            let s = action_phase(&a, m, &b, c).unwrap();
            let shifted = action_phase(
                &a.with_global_phase(phases[0]),
                &m.with_global_phase(phases[1]),
                &b.with_global_phase(phases[2]),
                c,
            )
            .unwrap();
            prop_assert!(principal(shifted - s).abs() < TOLERANCE);
            let reversed = action_phase(&b, m, &a, c).unwrap();
            prop_assert!(principal(s + reversed).abs() < TOLERANCE);
        }
    }

    #[test]
    fn frame_shift_preserves_overlap(j in spin(), seed in any::<u64>(), t in -50.0f64..50.0) {
        let c = PhysicalConstants::default();
        let sys = spin_system_shared(j).unwrap();
        let mut rng = seeded_rng(seed, 2);
        let a = random_state(&mut rng, sys.dimension);
        let b = random_state(&mut rng, sys.dimension);
        let (at, bt) = frame_shift(&a, &b, sys.basis("x").unwrap(), t, c).unwrap();
        let before = inner(&b, &a).unwrap().norm();
        let after = inner(&bt, &at).unwrap().norm();
        prop_assert!((before - after).abs() < TOLERANCE);
    }

    #[test]
    fn gaussian_measurements_are_complete(j in spin(), resolution in 0.05f64..60.0) {
        let sys = spin_system_shared(j).unwrap();
        let z = sys.basis("z").unwrap();
        let ops = build_measurement(gaussian_kernel(z, resolution).unwrap(), z).unwrap();
        prop_assert!(ops.povm_deviation() < 1e-10);
        prop_assert!(ops.kernel.completeness_deviation() < 1e-10);
    }

    #[test]
    fn csv_doubles_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let mut t = ResultTable::new("values", &["x"]);
        for &v in &values {
            t.push_row(vec![Cell::Num(v)]).unwrap();
        }
        let csv = t.to_csv();
        let parsed: Vec<f64> = csv.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        prop_assert_eq!(parsed.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn resolved_config_round_trips(j in spin(), hbar in 0.1f64..5.0, seed in any::<u64>()) {
        let mut cfg = ExperimentConfig::new(ModelConfig::Spin { j: j.max(1.0) });
        cfg.hbar = Some(hbar);
        cfg.seed = Some(seed);
        let (resolved, _) = cfg.resolve().unwrap();
        let text = resolved.canonical();
        let again = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&again, &resolved);
        let (twice, applied) = again.resolve().unwrap();
        prop_assert!(applied.is_empty(), "{applied:?}");
        prop_assert_eq!(twice.canonical(), text);
    }
}

#[test]
fn random_states_are_normalized() {
    let psi = random_state(&mut seeded_rng(3, 0), 17);
    assert!((psi.norm() - 1.0).abs() < TOLERANCE);
    let sum: f64 = psi.amplitudes().iter().map(C64::norm_sqr).sum();
    assert!((sum - 1.0).abs() < TOLERANCE);
}
