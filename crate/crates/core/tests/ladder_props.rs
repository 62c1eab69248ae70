use gravsim_core::ladder::{
    evolve_pulse, populations, run_sequence, run_with_env, Couplings, LadderState, SimEnv, SimError, Tolerances,
};
use gravsim_core::physics::{derive_params, special_mu, AtomSpecies};
use gravsim_core::sequence::canonical_gravimeter_sequence;
use gravsim_core::SequenceSpec;
use proptest::prelude::*;

fn canonical(t_wait: f64, mu: f64, v0: f64) -> SequenceSpec {
    let sp = AtomSpecies::rb87();
    let params = derive_params(&sp).unwrap();
    canonical_gravimeter_sequence(t_wait, params.omega_r / mu, sp, v0, 9.81, 9.81)
}

fn hbar_k() -> f64 {
    derive_params(&AtomSpecies::rb87()).unwrap().hbar_k()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn each_pulse_preserves_norm(v0 in 0.5f64..20.0, p_frac in -0.5f64..0.5, mu in 0.6f64..3.0) {
        let seq = canonical(1e-3, mu, v0);
        let env = SimEnv::from_sequence(&seq, Tolerances::default()).unwrap();
        let mut state = LadderState::initial(p_frac * hbar_k(), 7);
        for seg in env.chirp.segments.iter().take(2) {
            state = evolve_pulse(&state, seg, &env).unwrap();
            prop_assert!((state.norm_sqr() - 1.0).abs() < 1e-8, "norm {}", state.norm_sqr());
        }
    }

    #[test]
    fn populations_sum_to_one(v0 in 1.0f64..20.0, p_frac in -0.3f64..0.3) {
        let seq = canonical(1e-3, special_mu(1).unwrap(), v0).first_pulses(2);
        let pops = populations(&run_sequence(&seq, p_frac * hbar_k(), 7, Tolerances::default()).unwrap());
        prop_assert!((pops.p_a + pops.p_b - 1.0).abs() < 1e-8);
        let rungs: f64 = pops.per_rung.iter().map(|r| r.a + r.b).sum();
        prop_assert!((rungs - 1.0).abs() < 1e-8);
    }

    #[test]
    fn widening_the_ladder_changes_nothing(v0 in 2.0f64..20.0) {
        let seq = canonical(1e-3, special_mu(1).unwrap(), v0).first_pulses(2);
        let narrow = populations(&run_sequence(&seq, 0.0, 7, Tolerances::default()).unwrap());
        let wide = populations(&run_sequence(&seq, 0.0, 11, Tolerances::default()).unwrap());
        prop_assert!((narrow.p_a - wide.p_a).abs() < 1e-8);
    }
}

#[test]
fn full_sequence_is_deterministic() {
    let seq = canonical(0.01, special_mu(1).unwrap(), 10.0);
    let a = run_sequence(&seq, 0.01 * hbar_k(), 7, Tolerances::default()).unwrap();
    let b = run_sequence(&seq, 0.01 * hbar_k(), 7, Tolerances::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn common_shift_of_g_and_chirp_is_a_gauge_with_target_only_couplings() {
    let base = canonical(0.01, special_mu(1).unwrap(), 10.0);
    let run = |shift: f64| {
        let mut seq = base.clone();
        seq.g += shift;
        seq.g_r += shift;
        let mut env = SimEnv::from_sequence(&seq, Tolerances::default()).unwrap();
        env.couplings = Couplings::TargetOnly;
        populations(&run_with_env(&seq, &env, 0.0, 7).unwrap()).p_a
    };
    let reference = run(0.0);
    for shift in [0.05, -0.2] {
        let shifted = run(shift);
        assert!((shifted - reference).abs() < 1e-6, "shift {shift}: {shifted} vs {reference}");
    }
}

#[test]
fn narrow_ladder_reports_leak() {
    // At low velocity the opposite pair is nearly resonant too, so a
    // three-rung ladder cannot hold the population.
    let seq = canonical(1e-3, special_mu(1).unwrap(), 0.2);
    match run_sequence(&seq, 0.0, 1, Tolerances::default()) {
        Err(SimError::TruncationLeak { .. }) | Err(SimError::Settings(_)) => {}
        other => panic!("expected a truncation complaint, got {other:?}"),
    }
}

#[test]
fn bad_tolerances_are_rejected() {
    let seq = canonical(1e-3, 1.0, 10.0);
    let tol = Tolerances { rel_tol: 0.0, ..Tolerances::default() };
    assert!(matches!(run_sequence(&seq, 0.0, 7, tol), Err(SimError::Settings(_))));
}
