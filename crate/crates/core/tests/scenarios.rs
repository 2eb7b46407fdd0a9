use proptest::prelude::*;
use rescon_core::mitigation::{
    confidence_imp_step, confidence_nonimp_step, filter_step, link_score, trust, TrustConfig, TrustState,
};
use rescon_core::sim::metrics::{consensus_metrics, mean_norm, Series};
use rescon_core::sim::scenario::{imp_sine_attack, offset_sine_attack};
use rescon_core::sim::{run_scenario, Scenario, Thresholds, Trace};

fn scenario(t_end: f64) -> Scenario {
    let mut s = Scenario::canonical();
    s.detector.thresholds = Some(Thresholds::never(5));
    s.t_end = t_end;
    s.seed = 42;
    s.divergence_cap = 100.0;
    s
}

fn norm_at(trace: &Trace, t: f64, i: usize) -> f64 {
    trace.x(trace.row_at(t), i).iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn same_seed_gives_identical_traces() {
    let mut s = scenario(3.0);
    s.attacks.push(imp_sine_attack(4, 20.0, 1.0));
    let (a, b) = (run_scenario(&s).unwrap(), run_scenario(&s).unwrap());
    assert_eq!(a, b);
    let mut bytes = (Vec::new(), Vec::new());
    a.write_csv(&mut bytes.0).unwrap();
    b.write_csv(&mut bytes.1).unwrap();
    assert_eq!(bytes.0, bytes.1);
    s.seed = 43;
    assert_ne!(run_scenario(&s).unwrap().eta, a.eta);
}

#[test]
fn resonant_attack_on_the_root_grows_everywhere() {
    let mut s = scenario(30.0);
    s.attacks.push(imp_sine_attack(0, 20.0, 5.0));
    let trace = run_scenario(&s).unwrap();
    // The forced response of a resonant oscillator grows like amplitude t / 2.
    for i in 0..5 {
        assert!(norm_at(&trace, 30.0, i) > 1.5 * norm_at(&trace, 17.5, i), "agent {i}");
    }
    assert!(norm_at(&trace, 30.0, 0) > 100.0);
    assert!(trace.outcome.agent_divergence[0].is_some());
}

#[test]
fn resonant_attack_off_the_root_stays_local() {
    let mut s = scenario(40.0);
    s.attacks.push(imp_sine_attack(4, 20.0, 5.0));
    let trace = run_scenario(&s).unwrap();
    assert!(!trace.outcome.diverged);
    let upstream = consensus_metrics(&trace, &[0, 1, 2]).unwrap();
    assert!(upstream.tail_average < 1e-2, "{}", upstream.tail_average);
    let downstream = consensus_metrics(&trace, &[0, 1, 2, 3]).unwrap();
    assert!(downstream.tail_average > 0.1);
}

#[test]
fn non_resonant_attack_keeps_the_input_busy() {
    let mut s = scenario(30.0);
    s.attacks.push(offset_sine_attack(4, 10.0, 5.0, 2.0, 5.0));
    let attacked = run_scenario(&s).unwrap();
    let quiet = run_scenario(&s.attack_free()).unwrap();
    let busy = mean_norm(&attacked, Series::Input, 4, 20.0, 30.0).unwrap();
    let idle = mean_norm(&quiet, Series::Input, 4, 20.0, 30.0).unwrap();
    assert!(busy > 10.0 * idle, "{busy} vs {idle}");
}

fn divergence() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(f64::INFINITY), 0.0f64..1e-3, 0.0f64..1e6]
}

proptest! {
    #[test]
    fn trust_weights_stay_in_the_unit_interval(
        delta in 1e-6f64..10.0,
        kappa in 0.1f64..2000.0,
        dt in 1e-4f64..1e-2,
        ds in prop::collection::vec((divergence(), divergence(), divergence()), 1..200),
    ) {
        let cfg = TrustConfig { kappa1: kappa, kappa2: kappa, kappa3: kappa, ..TrustConfig::with_delta(delta) };
        let mut st = TrustState::new(1);
        for (d1, d2, d3) in ds {
            confidence_imp_step(&mut st, &cfg, d1, dt);
            confidence_nonimp_step(&mut st, &cfg, d2, dt);
            st.eta_raw[0] = filter_step(st.eta_raw[0], kappa, link_score(cfg.lambda1, cfg.lambda2, d3), dt);
            let omega = trust(st.xi, st.eta_raw[0]);
            for v in [st.c1, st.c2, st.xi, st.eta_raw[0], st.omega[0], omega] {
                prop_assert!((0.0..=1.0).contains(&v), "{:?}", st);
            }
            prop_assert!(st.xi <= st.c1 && st.xi <= st.c2);
            prop_assert!(omega >= st.xi);
        }
    }
}
