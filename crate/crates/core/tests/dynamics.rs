use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rescon_core::dynamics::{
    design_gains, integrate_step, local_tracking_error, AgentDynamics, EdgeSamples, NoiseModel, Rk4Propagator,
};
use rescon_core::graph::canonical_graph;
use rescon_core::sim::{run_with, Scenario, StepRecord, Thresholds};

/// Steady state of the backward Riccati flow P' = A^T P + P A + Q - P B R^-1 B^T P
/// from P = 0, integrated with plain RK4 on 2x2 arrays.
fn riccati_flow_gain(r: f64) -> [f64; 2] {
    type M = [[f64; 2]; 2];
    let a: M = [[0.0, -1.0], [1.0, 0.0]];
    let mul = |x: &M, y: &M| {
        let mut z = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                z[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        z
    };
    let at = [[a[0][0], a[1][0]], [a[0][1], a[1][1]]];
    let rhs = |p: &M| {
        let (atp, pa) = (mul(&at, p), mul(p, &a));
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                // B = e1, so P B R^-1 B^T P = p[i][0] p[0][j] / r.
                out[i][j] = atp[i][j] + pa[i][j] + if i == j { 1.0 } else { 0.0 } - p[i][0] * p[0][j] / r;
            }
        }
        out
    };
    let axpy = |p: &M, k: &M, h: f64| {
        let mut out = *p;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += h * k[i][j];
            }
        }
        out
    };
    let mut p: M = [[0.0; 2]; 2];
    let h = 1e-3;
    for _ in 0..60_000 {
        let k1 = rhs(&p);
        let k2 = rhs(&axpy(&p, &k1, h / 2.0));
        let k3 = rhs(&axpy(&p, &k2, h / 2.0));
        let k4 = rhs(&axpy(&p, &k3, h));
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
    }
    [p[0][0] / r, p[0][1] / r]
}

#[test]
fn riccati_gain_matches_flow_oracle() {
    let dynamics = AgentDynamics::oscillator();
    for (r, frozen) in [(1.0, [1.352_193_45, 0.414_213_56]), (0.2, [2.810_512_32, 1.449_489_74])] {
        let oracle = riccati_flow_gain(r);
        let design =
            design_gains(&dynamics, &canonical_graph(), &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, r))
                .unwrap();
        for c in 0..2 {
            assert!((design.k[(0, c)] - oracle[c]).abs() < 1e-8, "R = {r}: {} vs {}", design.k, oracle[c]);
            assert!((design.k[(0, c)] - frozen[c]).abs() < 1e-8);
        }
        let closed = dynamics.a() - dynamics.b() * &design.k;
        assert!(closed.complex_eigenvalues().iter().all(|z| z.re < 0.0));
    }
}

#[test]
fn rk4_tracks_the_matrix_exponential_over_one_second() {
    let dynamics = AgentDynamics::oscillator();
    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let u = DVector::zeros(1);
    let mut x = x0.clone();
    for _ in 0..1000 {
        x = integrate_step(&dynamics, &x, &u, 1e-3).unwrap();
    }
    let exact = dynamics.a().exp() * &x0;
    assert!((x - exact).norm() < 1e-8);
}

#[test]
fn rk4_tracks_a_resonant_lti_attack() {
    // x' = A x + B f with f = 20 sin(t) from the exosystem w' = A w, as one
    // homogeneous 4-state system with an exact matrix-exponential solution.
    let mut aug = DMatrix::zeros(4, 4);
    aug.view_mut((0, 0), (2, 2)).copy_from(AgentDynamics::oscillator().a());
    aug.view_mut((2, 2), (2, 2)).copy_from(AgentDynamics::oscillator().a());
    aug[(0, 3)] = 1.0;
    let sys = AgentDynamics::new(aug.clone(), DMatrix::zeros(4, 1)).unwrap();
    let z0 = DVector::from_vec(vec![0.5, -0.5, 0.0, 20.0]);
    let prop = Rk4Propagator::new(&sys, 1e-3).unwrap();
    let mut z = z0.clone();
    let u = DVector::zeros(1);
    for _ in 0..10_000 {
        z = prop.step(&z, &u);
    }
    let exact = (aug * 10.0).exp() * z0;
    assert!((&z - &exact).norm() < 1e-6 * exact.norm(), "{z} vs {exact}");
}

fn noise_free_canonical(t_end: f64) -> Scenario {
    let mut s = Scenario::canonical();
    s.noise = NoiseModel::isotropic(&s.graph, 2, 0.0).unwrap();
    s.detector.thresholds = Some(Thresholds::never(5));
    s.t_end = t_end;
    s
}

#[test]
fn noise_free_agents_agree_and_inputs_vanish_by_20_s() {
    let s = noise_free_canonical(20.0);
    let (mut spread, mut input) = (0.0f64, 0.0f64);
    run_with(&s, &mut |r: &StepRecord| {
        if r.t >= 20.0 - 1e-9 {
            for a in r.x {
                for b in r.x {
                    spread = spread.max((a - b).norm());
                }
            }
            input = r.u.iter().map(|u| u.norm()).fold(0.0, f64::max);
        }
    })
    .unwrap();
    assert!(spread < 1e-4, "spread {spread}");
    assert!(input < 1e-4, "input {input}");
}

#[test]
fn tracking_error_covariance_at_consensus() {
    let g = canonical_graph();
    let noise = NoiseModel::isotropic(&g, 2, 0.01).unwrap();
    let x = vec![DVector::from_vec(vec![0.3, -0.7]); 5];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = EdgeSamples::zeros(5, 2);
    let draws = 10_000;
    // Agent 3 has two in-neighbors, so its aggregate covariance is 2e-4 I.
    let mut acc = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        noise.sample(&mut rng, &mut samples);
        let eta = local_tracking_error(&g, &x, 3, Some(&samples));
        acc += &eta * eta.transpose();
    }
    let empirical = acc / draws as f64;
    let expected = noise.aggregate_cov(&g, 3);
    assert_eq!(expected, DMatrix::identity(2, 2) * 2e-4);
    for k in 0..2 {
        assert!((empirical[(k, k)] / expected[(k, k)] - 1.0).abs() < 0.05, "{empirical}");
    }
    assert!(empirical[(0, 1)].abs() < 0.05 * expected[(0, 0)]);
}

fn states(n: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), n)
        .prop_map(|v| v.into_iter().map(DVector::from_vec).collect())
}

proptest! {
    #[test]
    fn tracking_error_is_linear(x in states(5), y in states(5), s in -3.0f64..3.0, i in 0usize..5) {
        let g = canonical_graph();
        let sum: Vec<DVector<f64>> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let scaled: Vec<DVector<f64>> = x.iter().map(|a| a * s).collect();
        let (ex, ey) = (local_tracking_error(&g, &x, i, None), local_tracking_error(&g, &y, i, None));
        prop_assert!((local_tracking_error(&g, &sum, i, None) - (&ex + ey)).norm() < 1e-9);
        prop_assert!((local_tracking_error(&g, &scaled, i, None) - ex * s).norm() < 1e-9);
    }
}
