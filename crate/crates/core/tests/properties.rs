use cqed_core::constants::mhz_to_angular;
use cqed_core::device::{
    collapse_operators, dressed_levels, ej_of_flux, jc_hamiltonian, DeviceConfig, DeviceParams,
};
use cqed_core::dynamics::{evolve, steady_state, thermal_liouvillian, EvolveOptions, Integrator};
use cqed_core::qspace::{annihilation, excitation_number, tensor_embed};
use cqed_core::response::{normalized_model_spectrum, ResponseOptions};
use cqed_core::thermo::{nth_from_temperature, temperature_from_nth};
use cqed_core::{CscMatrix, DensityMatrix, Operator, SpaceDims, C64};
use proptest::prelude::*;

fn sample() -> DeviceParams {
    DeviceConfig::reference_sample().resolve().unwrap()
}

fn sparse_matrix(n: usize) -> impl Strategy<Value = CscMatrix> {
    prop::collection::vec((0..n, 0..n, -3i32..=3, -3i32..=3), 0..2 * n).prop_map(move |t| {
        CscMatrix::from_triplets(
            n,
            n,
            t.into_iter()
                .map(|(i, j, re, im)| (i, j, C64::new(re as f64, im as f64))),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn number_operator_is_fock_index(nc in 2usize..30, nt in 2usize..6) {
        let dims = SpaceDims::new(nc, nt).unwrap();
        let a = annihilation(dims).unwrap();
        let n = a.adjoint().matmul(&a).unwrap();
        prop_assert!(n.matrix().is_diagonal());
        for (k, v) in n.matrix().diagonal().iter().enumerate() {
            let fock = dims.split_index(k).0 as f64;
            prop_assert!((v.re - fock).abs() <= 4.0 * f64::EPSILON * fock && v.im == 0.0);
        }
    }

    #[test]
    fn commutator_deviates_only_in_top_block(nc in 2usize..20, nt in 2usize..5) {
        let dims = SpaceDims::new(nc, nt).unwrap();
        let a = annihilation(dims).unwrap();
        let c = a.commutator(&a.adjoint()).unwrap();
        prop_assert!(c.matrix().is_diagonal());
        for (k, v) in c.matrix().diagonal().iter().enumerate() {
            let expect = if dims.split_index(k).0 == nc - 1 { -((nc - 1) as f64) } else { 1.0 };
            prop_assert!((v.re - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_multiplies_nnz(
        (a, b, dims) in (2usize..6, 2usize..4).prop_flat_map(|(nc, nt)| {
            (sparse_matrix(nc), sparse_matrix(nt), Just(SpaceDims::new(nc, nt).unwrap()))
        })
    ) {
        let op = tensor_embed(&a, &b, dims).unwrap();
        prop_assert_eq!(op.nnz(), a.nnz() * b.nnz());
    }

    #[test]
    fn operators_round_trip_bit_exactly(nc in 2usize..6, nt in 2usize..4, scale in -1e12f64..1e12) {
        let dims = SpaceDims::new(nc, nt).unwrap();
        let op = annihilation(dims).unwrap().scale(scale / 3.0);
        let text = serde_json::to_string(&op).unwrap();
        let back: Operator = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, op);
    }

    #[test]
    fn hamiltonian_conserves_excitations(nc in 2usize..12, nt in 2usize..6, g_mhz in 0.0f64..200.0, det_mhz in -800.0f64..600.0) {
        let mut cfg = DeviceConfig::reference_sample();
        cfg.g_ge_mhz = g_mhz;
        cfg.detuning_mhz = Some(det_mhz);
        let p = cfg.resolve().unwrap();
        let dims = SpaceDims::new(nc, nt).unwrap();
        let h = jc_hamiltonian(&p, dims).unwrap();
        let n = excitation_number(dims).unwrap();
        let comm = h.commutator(&n).unwrap();
        prop_assert!(comm.matrix().max_abs() <= 1e-15 * h.matrix().max_abs());
    }

    #[test]
    fn splitting_follows_sqrt_n(g_mhz in 1.0f64..200.0) {
        let mut cfg = DeviceConfig::reference_sample();
        cfg.g_ge_mhz = g_mhz;
        let p = cfg.resolve().unwrap();
        let lv = dressed_levels(&p, 10, 2).unwrap();
        for n in 1..=10 {
            let ratio = lv.splitting(n).unwrap() / (2.0 * g_mhz * 1e-3);
            prop_assert!((ratio / (n as f64).sqrt() - 1.0).abs() < 1e-9, "n = {}: {}", n, ratio);
        }
    }

    #[test]
    fn josephson_energy_is_periodic_and_even(k in -(1i64 << 40)..(1i64 << 40)) {
        // dyadic flux values, for which x + 1 is exact
        let x = k as f64 / (1u64 << 30) as f64;
        let f = ej_of_flux(14.4, x);
        prop_assert_eq!(f, ej_of_flux(14.4, x + 1.0));
        prop_assert_eq!(f, ej_of_flux(14.4, -x));
    }

    #[test]
    fn collapse_rates_are_linear_in_nth(n_th in 0.0f64..500.0) {
        let p = sample();
        let dims = SpaceDims::new(2, 2).unwrap();
        let r = collapse_operators(&p, n_th, dims, false).unwrap();
        let r0 = collapse_operators(&p, 0.0, dims, false).unwrap();
        let lhs = r.channels[0].rate - r0.channels[0].rate;
        prop_assert!((lhs - r.channels[1].rate).abs() <= 1e-14 * r.channels[0].rate);
        prop_assert_eq!(r0.channels[1].rate, 0.0);
    }

    #[test]
    fn temperature_bijection(log_t in (0.01f64).ln()..(1000.0f64).ln(), nu in 1.0f64..20.0) {
        let t = log_t.exp();
        let back = temperature_from_nth(nth_from_temperature(t, nu).unwrap(), nu).unwrap();
        prop_assert!((back / t - 1.0).abs() < 1e-12, "{} -> {}", t, back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trajectories_stay_physical(
        nc in 2usize..6,
        nt in 2usize..4,
        n_th in 0.0f64..1.5,
        start in 0usize..6,
        krylov in any::<bool>(),
    ) {
        let mut cfg = DeviceConfig::reference_sample();
        cfg.gamma_phi_mhz = Some(0.3);
        let p = cfg.resolve().unwrap();
        let dims = SpaceDims::new(nc, nt).unwrap();
        let l = thermal_liouvillian(&p, n_th, dims, true, p.cavity_frequency).unwrap().liouvillian;
        let rho0 = DensityMatrix::pure_basis(dims, start % nc, 1).unwrap();
        let times: Vec<f64> = (1..=10).map(|k| k as f64 * 40e-9).collect();
        let opts = EvolveOptions {
            integrator: if krylov { Integrator::Krylov } else { Integrator::Rk45 },
            ..Default::default()
        };
        let tr = evolve(&l, &rho0, &times, &opts).unwrap();
        prop_assert!(tr.diagnostics.max_trace_drift < 1e-9);
        prop_assert!(tr.diagnostics.max_hermiticity_error < 1e-10);
        prop_assert!(tr.diagnostics.min_eigenvalue.unwrap() >= -1e-8);
    }

    #[test]
    fn thermal_cavity_obeys_detailed_balance(n_th in 0.01f64..3.0, kappa_mhz in 0.5f64..20.0) {
        let mut p = sample();
        p.coupling = 0.0;
        p.kappa = mhz_to_angular(kappa_mhz);
        let nc = cqed_core::qspace::min_cavity_levels(n_th) + 5;
        let dims = SpaceDims::new(nc, 2).unwrap();
        let l = thermal_liouvillian(&p, n_th, dims, false, p.cavity_frequency).unwrap().liouvillian;
        let pn = steady_state(&l).unwrap().photon_distribution();
        let ratio = n_th / (n_th + 1.0);
        for n in 0..nc - 1 {
            if pn[n] > 1e-10 {
                prop_assert!((pn[n + 1] / pn[n] - ratio).abs() < 1e-6, "n = {}", n);
            }
        }
    }

    #[test]
    fn resonant_two_level_spectrum_is_symmetric_and_finite(n_th in 0.0f64..1.0, g_mhz in 2.0f64..60.0) {
        let mut cfg = DeviceConfig::reference_sample();
        cfg.g_ge_mhz = g_mhz;
        let p = cfg.resolve().unwrap();
        let dims = SpaceDims::new(cqed_core::qspace::min_cavity_levels(n_th), 2).unwrap();
        let nu = 6.44;
        let freqs: Vec<f64> = (-60..=60).map(|k| nu + k as f64 * 2e-3).collect();
        let s = normalized_model_spectrum(&p, n_th, dims, &freqs, &ResponseOptions::default()).unwrap();
        prop_assert!(s.power_normalized.iter().all(|v| v.is_finite() && *v >= 0.0));
        let peak = s.power_normalized.iter().copied().fold(0.0, f64::max);
        let m = freqs.len();
        for k in 0..m / 2 {
            let (a, b) = (s.power_normalized[k], s.power_normalized[m - 1 - k]);
            prop_assert!((a - b).abs() <= 1e-6 * peak, "{} vs {}", a, b);
        }
    }
}
