use nalgebra::{DMatrix, DVector};
use nlspectral::flows::{gradient_flow_exact, FlowTrajectory};
use nlspectral::io::{parse_signal_csv, signal_to_csv, to_json};
use nlspectral::prox::{extinction_time_vm, is_subgradient, prox};
use nlspectral::regularizer::Ddl1Status;
use nlspectral::spectral::{
    decompose, filter, reconstruct, spectrum_s3, FilterSpec, SpectralDecomposition,
};
use nlspectral::{Regularizer, Shape, Signal, SolverConfig};
use proptest::prelude::*;

fn signal(max_len: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2..=max_len).prop_map(DVector::from_vec)
}

fn regularizer(kind: u8, n: usize) -> Regularizer {
    match kind % 3 {
        0 => Regularizer::tv1d(n).unwrap(),
        1 => Regularizer::l1(n).unwrap(),
        // differences with concave weights keep K K^T diagonally dominant
        _ => {
            let mut k = DMatrix::zeros(n - 1, n);
            for i in 0..n - 1 {
                let w = 1.0 + (std::f64::consts::PI * i as f64 / n as f64).sin();
                k[(i, i)] = w;
                k[(i, i + 1)] = -w;
            }
            let reg = Regularizer::from_matrix(k).unwrap();
            assert_eq!(reg.ddl1_status(), Ddl1Status::Holds);
            reg
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prox_output_satisfies_optimality(f in signal(12), t in 0.01f64..3.0, kind in 0u8..3) {
        let reg = regularizer(kind, f.len());
        let cfg = SolverConfig::default();
        let out = prox(&reg, &f, t, &cfg).unwrap();
        let p = (&f - &out.u) / t;
        let check = is_subgradient(&reg, &out.u, &p, &cfg).unwrap();
        prop_assert!(check.holds, "{check:?}");
    }

    #[test]
    fn exact_decomposition_reconstructs(f in signal(16), kind in 0u8..3) {
        let reg = regularizer(kind, f.len());
        let dec = decompose(&gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap()).unwrap();
        prop_assert!((reconstruct(&dec) - &f).norm() <= 1e-8 * f.norm().max(1e-300));
        prop_assert!(dec.atoms.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert!(spectrum_s3(&dec).atoms.iter().all(|a| a.1 >= -1e-12));
    }

    #[test]
    fn flow_extinction_matches_variational(f in signal(16), kind in 0u8..3) {
        let reg = regularizer(kind, f.len());
        let cfg = SolverConfig::default();
        let gf = gradient_flow_exact(&reg, &f, &cfg).unwrap();
        let t = extinction_time_vm(&reg, &f, &cfg).unwrap();
        prop_assert!((gf.extinction_time - t).abs() <= 1e-8 * t.max(1e-12));
    }

    #[test]
    fn regularizer_decreases_along_the_flow(f in signal(16)) {
        let reg = Regularizer::tv1d(f.len()).unwrap();
        let gf = gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap();
        let mut last = reg.eval(&f).unwrap();
        for e in &gf.events {
            let j = reg.eval(&e.u).unwrap();
            prop_assert!(j <= last + 1e-12);
            last = j;
        }
    }

    #[test]
    fn filters_are_linear_and_complementary(
        f in signal(16),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        frac in 0.05f64..0.95,
    ) {
        let reg = Regularizer::tv1d(f.len()).unwrap();
        let dec = decompose(&gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap()).unwrap();
        let end = dec.atoms.last().map_or(1.0, |x| x.t);
        let times = [0.0, frac * end, end];
        let w1 = FilterSpec::custom(1.0, times.iter().zip([0.0, 1.0, 0.5]).map(|(&t, w)| (t, w)).collect());
        let w2 = FilterSpec::custom(0.0, times.iter().zip([1.0, -1.0, 2.0]).map(|(&t, w)| (t, w)).collect());
        let mix = FilterSpec::custom(
            a,
            times.iter().zip([b, a - b, 0.5 * a + 2.0 * b]).map(|(&t, w)| (t, w)).collect(),
        );
        let lhs = filter(&dec, &mix).unwrap().signal;
        let rhs = filter(&dec, &w1).unwrap().signal * a + filter(&dec, &w2).unwrap().signal * b;
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + f.norm()));

        let t_c = frac * end;
        prop_assume!(dec.atoms.iter().all(|x| (x.t - t_c).abs() > 1e-9));
        let low = filter(&dec, &FilterSpec::lowpass(t_c)).unwrap().signal;
        let high = filter(&dec, &FilterSpec::highpass(t_c)).unwrap().signal;
        prop_assert!((low + high - &f).norm() <= 1e-8 * f.norm().max(1e-300));
    }

    #[test]
    fn trajectories_round_trip_through_json(f in signal(10)) {
        let reg = Regularizer::tv1d(f.len()).unwrap();
        let gf = gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap();
        let text = serde_json::to_string(&gf).unwrap();
        let back: FlowTrajectory = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, gf);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signals_round_trip_through_csv(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let n = v.len();
        let s = Signal::new(DVector::from_vec(v), Shape::D1(n)).unwrap();
        let back = parse_signal_csv(&signal_to_csv(&s)).unwrap();
        prop_assert_eq!(back.values(), s.values());
    }

    #[test]
    fn decompositions_round_trip_through_json(f in signal(10)) {
        let reg = Regularizer::tv1d(f.len()).unwrap();
        let dec = decompose(&gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap()).unwrap();
        let back: SpectralDecomposition = serde_json::from_str(&to_json(&dec).unwrap()).unwrap();
        prop_assert_eq!(back, dec);
    }
}
