use num_complex::Complex64 as C64;
use proptest::prelude::*;

use spinmqc::analytic::{j_end_nn, j_thermal_nn};
use spinmqc::bathlab::magnetization_commutator;
use spinmqc::hamiltonian::{
    Axis, OperatorSpec, apply, build_dipolar, build_dq, dense_matrix, norm_sqr,
};
use spinmqc::lattice::{CouplingMatrix, Truncation, dipolar_coupling};
use spinmqc::mqc::{
    Backend, Evolution, ExperimentProtocol, coherence_transform, run_mqc, run_mqc_raw,
};
use spinmqc::propagator::chebyshev::evolve_chebyshev;
use spinmqc::propagator::pulse::{PulseMode, dense_propagator, dq16};
use spinmqc::states::{Amplitudes, end_polarized_spec, random_state, thermal_state_spec};

fn couplings(n: usize, values: &[f64]) -> CouplingMatrix {
    let mut c = CouplingMatrix::zeros(n, Truncation::Full);
    let mut it = values.iter().cycle();
    for j in 0..n {
        for l in j + 1..n {
            c.set(j, l, *it.next().unwrap());
        }
    }
    c
}

fn coupling_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 15)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_sum_rule(n in 2usize..40, t in 0.0f64..20.0) {
        let (a, b) = j_thermal_nn(n, t);
        prop_assert!((a + 2.0 * b - 1.0).abs() < 1e-12);
        let (a, b) = j_end_nn(n, t).unwrap();
        prop_assert!((a + 2.0 * b - 1.0).abs() < 1e-12);
        prop_assert!(a >= 0.0 && b >= 0.0);
    }

    #[test]
    fn exact_spectrum_sums_to_one_with_no_odd_orders(n in 2usize..6, v in coupling_values(), t in 0.0f64..4.0, end in any::<bool>()) {
        let c = couplings(n, &v);
        let init = if end { end_polarized_spec(n).unwrap() } else { thermal_state_spec(n) };
        let s = run_mqc(&ExperimentProtocol::new(Evolution::ideal_dq(&c), init, vec![t], Backend::ExactDensity)).unwrap();
        prop_assert!((s.total(0) - 1.0).abs() < 1e-10);
        for (o, val) in s.orders.iter().zip(&s.j[0]) {
            if o % 2 == 1 {
                prop_assert!(val.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn raw_total_is_conserved(n in 2usize..6, v in coupling_values(), t in 0.1f64..4.0) {
        let c = couplings(n, &v);
        let p = ExperimentProtocol::new(Evolution::ideal_dq(&c), thermal_state_spec(n), vec![0.0, t], Backend::ExactDensity);
        let s = run_mqc_raw(&p).unwrap();
        prop_assert!((s.total(0) - s.total(1)).abs() < 1e-10 * s.total(0).abs().max(1.0));
    }

    #[test]
    fn coupling_and_time_rescaling(n in 2usize..5, v in coupling_values(), t in 0.0f64..3.0, lambda in 0.25f64..4.0) {
        let c = couplings(n, &v);
        let init = thermal_state_spec(n);
        let a = run_mqc(&ExperimentProtocol::new(Evolution::ideal_dq(&c), init.clone(), vec![t], Backend::ExactDensity)).unwrap();
        let b = run_mqc(&ExperimentProtocol::new(Evolution::ideal_dq(&c.scaled(lambda)), init, vec![t / lambda], Backend::ExactDensity)).unwrap();
        for (x, y) in a.j[0].iter().zip(&b.j[0]) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dipolar_forms_are_hermitian_and_conserve_magnetization(n in 2usize..7, v in coupling_values(), seed in any::<u64>()) {
        let c = couplings(n, &v);
        let h = build_dipolar(&c);
        prop_assert!(h.is_hermitian());
        prop_assert!(build_dq(&c).is_hermitian());
        prop_assert!(magnetization_commutator(&h, seed).unwrap() < 1e-10);
    }

    #[test]
    fn chebyshev_matches_dense_and_preserves_norm(n in 2usize..6, v in coupling_values(), t in -3.0f64..3.0, seed in any::<u64>()) {
        let op = build_dq(&couplings(n, &v));
        let s = random_state(n, seed, Amplitudes::Gaussian);
        let out = evolve_chebyshev(&op, &s, t, 1e-13).unwrap();
        prop_assert!((norm_sqr(&out.amps) - 1.0).abs() < 1e-11);
        let u = dense_propagator(&op.compile(), t).unwrap();
        for i in 0..s.dim() {
            let z: C64 = (0..s.dim()).map(|k| u[(i, k)] * s.amps[k]).sum();
            prop_assert!((z - out.amps[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn coherence_transform_inverts_phase_sums(k in 2usize..8, v in prop::collection::vec(-1.0f64..1.0, 8)) {
        let mut j: Vec<f64> = v.iter().take(k + 1).copied().collect();
        j.resize(k + 1, 0.0);
        j[k] = 0.0;
        let dphi = std::f64::consts::PI / k as f64;
        let signals: Vec<C64> = (1..=2 * k)
            .map(|i| {
                let phi = i as f64 * dphi;
                let s = j[0] + (1..k).map(|q| 2.0 * j[q] * (q as f64 * phi).cos()).sum::<f64>();
                C64::new(s, 0.0)
            })
            .collect();
        let (out, imag) = coherence_transform(&signals, k).unwrap();
        prop_assert!(imag < 1e-12);
        for (a, b) in out.iter().zip(&j) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dipolar_coupling_scales_as_inverse_cube(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0, s in 0.2f64..5.0) {
        prop_assume!(x * x + y * y + z * z > 1e-2);
        let a = dipolar_coupling([x, y, z]).unwrap();
        let b = dipolar_coupling([s * x, s * y, s * z]).unwrap();
        prop_assert!((b * s.powi(3) - a).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn pulse_sequence_algebra(delta in 0.01f64..0.5, m in 1usize..6) {
        let seq = dq16(delta, 0.0, spinmqc::propagator::pulse::Phase::X);
        prop_assert_eq!(seq.reversed().reversed(), seq.clone());
        let d = seq.duration(PulseMode::Ideal);
        prop_assert!((seq.repeated(m).duration(PulseMode::Ideal) - m as f64 * d).abs() < 1e-12);
    }
}

fn axis_of(k: u8) -> Axis {
    match k % 5 {
        0 => Axis::X,
        1 => Axis::Y,
        2 => Axis::Z,
        3 => Axis::Plus,
        _ => Axis::Minus,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matrix_free_apply_matches_dense(
        n in 1usize..10,
        terms in prop::collection::vec((-2.0f64..2.0, prop::collection::vec((0usize..10, any::<u8>()), 0..10)), 1..12),
        seed in any::<u64>(),
    ) {
        let mut op = OperatorSpec::new(n);
        for (c, factors) in &terms {
            let mut f: Vec<(usize, Axis)> = Vec::new();
            for &(s, a) in factors {
                if s < n && f.iter().all(|(t, _)| *t != s) {
                    f.push((s, axis_of(a)));
                }
            }
            op.push(*c, &f).unwrap();
        }
        let m = dense_matrix(&op).unwrap();
        let s = random_state(n, seed, Amplitudes::Gaussian);
        let got = apply(&op, &s).unwrap();
        for i in 0..s.dim() {
            let z: C64 = (0..s.dim()).map(|k| m[(i, k)] * s.amps[k]).sum();
            prop_assert!((z - got.amps[i]).norm() < 1e-10);
        }
    }
}
