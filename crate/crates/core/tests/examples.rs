use cqed_core::constants::mhz_to_angular;
use cqed_core::device::{
    dressed_levels, ej_of_flux, transmon_frequencies, DeviceConfig, DeviceParams,
};
use cqed_core::dynamics::{
    fit_damped_oscillation, lindblad_dissipator, rabi_sequence, steady_state, thermal_liouvillian,
    InitialQubit, RabiOptions,
};
use cqed_core::qspace::{min_cavity_levels, tail_cavity_levels, transmon_projector};
use cqed_core::response::{
    default_probe_amplitude, fit_spectrum_lorentzian, local_maxima, model_spectrum, normalize,
    normalized_model_spectrum, reference_spectrum, transmission_weak_drive, FrequencyGrid,
    ResponseOptions,
};
use cqed_core::synthetic::multiplicative_gaussian;
use cqed_core::thermo::{
    calibration_line, fit_nth_rabi, fit_nth_spectrum, nth_from_noise, CalibrationPoint, FitConfig,
    MeasuredRabi, MeasuredSpectrum, RabiFitConfig, ThermalSource,
};
use cqed_core::{CscMatrix, DensityMatrix, Error, Operator, SpaceDims, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample() -> DeviceParams {
    DeviceConfig::reference_sample().resolve().unwrap()
}

fn sample_with_dephasing() -> DeviceParams {
    let mut c = DeviceConfig::reference_sample();
    c.gamma_phi_mhz = Some(0.3);
    c.resolve().unwrap()
}

fn grid(center: f64, half_mhz: f64, points: usize) -> Vec<f64> {
    FrequencyGrid {
        center_ghz: Some(center),
        half_span_mhz: half_mhz,
        points,
    }
    .frequencies(center)
    .unwrap()
}

#[test]
fn flux_for_six_point_four_four_ghz() {
    // scalar bisection on ν_ge(Φ) = sqrt(8 E_C E_J(Φ)) − E_C
    let nu = |x: f64| (8.0 * 0.502 * ej_of_flux(14.4, x)).sqrt() - 0.502;
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if nu(mid) > 6.44 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((lo - 0.1864).abs() < 5e-4);
    assert!((ej_of_flux(14.4, 0.1864) - 12.0).abs() < 0.05);
    let p = sample();
    assert!((p.flux - lo).abs() < 1e-6);
}

#[test]
fn transmon_levels_scale_with_josephson_energy() {
    let a = transmon_frequencies(0.502, 14.4, 3).unwrap();
    assert!(((a.levels[2] - a.levels[1]) - (a.levels[1] - a.levels[0] - 0.502)).abs() < 1e-12);
    let b = transmon_frequencies(0.502, 4.0 * 14.4, 2).unwrap();
    let lead = |s: &[f64]| s[1] + 0.502;
    assert!((lead(&b.levels) / lead(&a.levels) - 2.0).abs() < 1e-12);
}

#[test]
fn dressed_ladder_limits() {
    let p = sample();
    let lv = dressed_levels(&p, 60, 2).unwrap();
    let g = 0.054;
    for n in [10usize, 30, 59] {
        let t = lv.doublet_transitions(n).unwrap();
        let same: Vec<f64> = t
            .iter()
            .filter(|((a, b), _)| a == b)
            .map(|(_, f)| *f)
            .collect();
        let gap = g * (((n + 1) as f64).sqrt() - (n as f64).sqrt());
        for f in same {
            assert!(((f - 6.44).abs() - gap).abs() < 1e-9, "n = {n}");
        }
    }
    // dispersive limit at 0.5 GHz detuning
    let mut c = DeviceConfig::reference_sample();
    c.detuning_mhz = Some(500.0);
    let d = c.resolve().unwrap();
    let lv = dressed_levels(&d, 1, 2).unwrap();
    let e = &lv.blocks[1].energies_ghz;
    let shift = g * g / 0.5;
    assert!((e[0] - (6.44 - shift)).abs() < shift * 0.1);
    assert!((e[1] - (6.94 + shift)).abs() < shift * 0.1);
    assert!((e[0] - 6.44).abs() < shift * 1.01);
}

#[test]
fn dissipators_are_traceless() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = SpaceDims::new(3, 2).unwrap();
    let d = dims.total();
    for _ in 0..100 {
        let trips: Vec<_> = (0..8)
            .map(|_| {
                (
                    rng.random_range(0..d),
                    rng.random_range(0..d),
                    C64::new(rng.random(), rng.random()),
                )
            })
            .collect();
        let c = Operator::new(
            dims,
            CscMatrix::from_triplets(d, d, trips).unwrap(),
            cqed_core::qspace::OperatorUnit::Dimensionless,
        )
        .unwrap();
        let sup = lindblad_dissipator(&c).unwrap();
        let psi: Vec<C64> = (0..d)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let norm: f64 = psi.iter().map(|v| v.norm_sqr()).sum();
        let rho: Vec<C64> = (0..d * d)
            .map(|k| psi[k % d] * psi[k / d].conj() / norm)
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        sup.matvec(&rho, &mut out);
        let tr: C64 = (0..d).map(|i| out[i * (d + 1)]).sum();
        assert!(tr.norm() < 1e-13 * sup.max_abs());
    }
}

#[test]
fn full_channel_set_preserves_trace() {
    let p = sample();
    let l = thermal_liouvillian(
        &p,
        0.05,
        SpaceDims::new(12, 3).unwrap(),
        false,
        p.cavity_frequency,
    )
    .unwrap()
    .liouvillian;
    assert!(l.trace_preservation_error() < 1e-12);
    assert!(
        l.has_channel("cavity_loss")
            && l.has_channel("thermal_gain")
            && l.has_channel("transmon_relaxation")
    );
}

#[test]
fn steady_state_examples() {
    let mut c = DeviceConfig::reference_sample();
    c.detuning_mhz = Some(-500.0);
    let d = c.resolve().unwrap();
    let dims = SpaceDims::new(6, 3).unwrap();
    let l = thermal_liouvillian(&d, 0.0, dims, false, d.cavity_frequency)
        .unwrap()
        .liouvillian;
    let rho = steady_state(&l).unwrap();
    let ground = DensityMatrix::pure_basis(dims, 0, 0).unwrap();
    let worst = rho
        .as_vec()
        .iter()
        .zip(ground.as_vec())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8);

    let p = sample();
    let dims = SpaceDims::new(15, 3).unwrap();
    let l = thermal_liouvillian(&p, 1.0, dims, false, p.cavity_frequency)
        .unwrap()
        .liouvillian;
    let rho = steady_state(&l).unwrap();
    let pe = rho
        .expectation(&transmon_projector(dims, 1).unwrap())
        .unwrap()
        .re;
    assert!(pe > 0.0 && pe < 0.5, "P_e = {pe}");
}

#[test]
fn rabi_examples() {
    let p = sample_with_dephasing();
    let tau: Vec<f64> = (0..=240).map(|k| k as f64 * 1e-9).collect();
    let flat = rabi_sequence(
        &p,
        0.0,
        SpaceDims::new(4, 3).unwrap(),
        &tau,
        InitialQubit::Ground,
        &RabiOptions::default(),
    )
    .unwrap();
    assert!(flat.p_e().iter().all(|v| v.abs() < 1e-9));

    let dims = SpaceDims::new(min_cavity_levels(0.04), 3).unwrap();
    let tr = rabi_sequence(
        &p,
        0.04,
        dims,
        &tau,
        InitialQubit::PiPulse,
        &RabiOptions::default(),
    )
    .unwrap();
    let fit = fit_damped_oscillation(&tau, tr.p_e(), 2.0 * p.coupling).unwrap();
    assert!(fit.amplitude > 0.4, "contrast {}", fit.amplitude);
    assert!(fit.offset > 0.0 && fit.offset < 0.1);
    // the oscillation frequency: a ±2% detuned model fits clearly worse
    for factor in [0.98, 1.02] {
        let off = fit_damped_oscillation(&tau, tr.p_e(), factor * 2.0 * p.coupling).unwrap();
        assert!(off.rss > 3.0 * fit.rss);
    }
}

#[test]
fn vacuum_rabi_peaks_and_widths() {
    let p = sample();
    let freqs = grid(6.44, 70.0, 1401);
    let expect_width = (3.2 + 0.6) / 2.0;
    let mut widths = Vec::new();
    for n_th in [0.0, 0.05] {
        let s = normalized_model_spectrum(
            &p,
            n_th,
            SpaceDims::new(12, 3).unwrap(),
            &freqs,
            &ResponseOptions::default(),
        )
        .unwrap();
        let peaks = local_maxima(&freqs, &s.power_normalized, 0.1);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        for (f0, height) in &peaks {
            assert!(*height < 1.0);
            assert!(((f0 - 6.44).abs() - 0.054).abs() < 2e-4);
            let window: Vec<usize> = (0..freqs.len())
                .filter(|&k| (freqs[k] - f0).abs() < 0.012)
                .collect();
            let xs: Vec<f64> = window.iter().map(|&k| freqs[k]).collect();
            let ys: Vec<f64> = window.iter().map(|&k| s.power_normalized[k]).collect();
            widths.push(
                cqed_core::response::fit_lorentzian(&xs, &ys)
                    .unwrap()
                    .fwhm_mhz,
            );
        }
    }
    // (κ + γ)/2 without thermal photons; thermal pumping out of |g,0⟩ and
    // |1,±⟩ adds about 0.48 MHz at n_th = 0.05
    assert!((widths[0] / expect_width - 1.0).abs() < 1e-3, "{widths:?}");
    assert!(
        (widths[1] / expect_width - 1.0).abs() < 0.3 && widths[2] > widths[0],
        "{widths:?}"
    );
}

#[test]
fn weak_drive_is_linear_and_detuned_limit_is_bare() {
    let p = sample();
    let dims = SpaceDims::new(8, 3).unwrap();
    let freqs = grid(6.44, 70.0, 141);
    let opts = ResponseOptions::default();
    let eps = 0.02 * default_probe_amplitude(&p);
    let reference = reference_spectrum(&p, dims, &freqs, &opts).unwrap();
    let a = normalize(
        &transmission_weak_drive(&p, 0.05, dims, &freqs, eps, &opts).unwrap(),
        &reference,
    )
    .unwrap();
    let b = normalize(
        &transmission_weak_drive(&p, 0.05, dims, &freqs, 0.5 * eps, &opts).unwrap(),
        &reference,
    )
    .unwrap();
    let worst = a
        .power_normalized
        .iter()
        .zip(&b.power_normalized)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst:e}");

    let mut c = DeviceConfig::reference_sample();
    c.detuning_mhz = Some(-500.0);
    let d = c.resolve().unwrap();
    let freqs = grid(6.44, 20.0, 401);
    let s = model_spectrum(&d, 0.05, dims, &freqs, &opts).unwrap();
    let r = reference_spectrum(&d, dims, &freqs, &opts).unwrap();
    let s = normalize(&s, &r).unwrap();
    let fit = fit_spectrum_lorentzian(&s).unwrap();
    assert!(
        (fit.fwhm_mhz / 3.2 - 1.0).abs() < 0.02,
        "width {}",
        fit.fwhm_mhz
    );
    assert!((fit.amplitude + fit.baseline - 1.0).abs() < 0.02);
    // same line shape once the dispersive pull is removed
    let half = 1.6e-3;
    let rms = (freqs
        .iter()
        .zip(&s.power_normalized)
        .map(|(f, y)| (y - half * half / ((f - fit.center_ghz).powi(2) + half * half)).powi(2))
        .sum::<f64>()
        / freqs.len() as f64)
        .sqrt();
    assert!(rms < 0.02, "rms {rms}");
}

#[test]
fn normalized_peak_recovers_towards_one() {
    let mut c = DeviceConfig::reference_sample();
    c.g_ge_mhz = 6.4;
    let p = c.resolve().unwrap();
    let freqs = grid(6.44, 20.0, 401);
    let opts = ResponseOptions::default();
    let mut last = 0.0;
    for n_th in [2.0, 8.0, 16.0] {
        let dims = SpaceDims::new(tail_cavity_levels(n_th, 1e-6), 2).unwrap();
        let s = normalized_model_spectrum(&p, n_th, dims, &freqs, &opts).unwrap();
        let peak = s.power_normalized.iter().copied().fold(0.0, f64::max);
        assert!(peak > last, "n_th = {n_th}: {peak}");
        last = peak;
        if n_th == 16.0 {
            let fit = fit_spectrum_lorentzian(&s).unwrap();
            assert!(fit.r_squared > 0.99);
            assert!(fit.is_lorentzian);
            // still about 25% wider than the bare line at this point
            assert!(
                fit.fwhm_mhz > 3.2 && fit.fwhm_mhz < 1.3 * 3.2,
                "width {}",
                fit.fwhm_mhz
            );
        }
    }
    assert!(last > 0.7, "{last}");
}

#[test]
fn hard_truncation_distorts_the_thermal_line() {
    let mut c = DeviceConfig::reference_sample();
    c.g_ge_mhz = 6.4;
    let p = c.resolve().unwrap();
    let freqs = grid(6.44, 20.0, 201);
    let opts = ResponseOptions::default();
    let width = |nc| {
        let s = normalized_model_spectrum(&p, 16.0, SpaceDims::new(nc, 2).unwrap(), &freqs, &opts)
            .unwrap();
        fit_spectrum_lorentzian(&s).unwrap().fwhm_mhz
    };
    let loose = width(min_cavity_levels(16.0));
    let tight = width(tail_cavity_levels(16.0, 1e-6));
    assert!(loose > 1.05 * tight, "{loose} vs {tight}");
}

fn measured(p: &DeviceParams, n_th: f64, dims: SpaceDims, freqs: &[f64]) -> MeasuredSpectrum {
    let s = normalized_model_spectrum(p, n_th, dims, freqs, &ResponseOptions::default()).unwrap();
    MeasuredSpectrum {
        freqs_ghz: s.freqs_ghz,
        power_normalized: s.power_normalized,
    }
}

#[test]
fn spectral_fit_is_unbiased_and_monotone() {
    let p = sample();
    let freqs = grid(6.44, 150.0, 301);
    let cfg = FitConfig {
        n_max: 4.0,
        ..Default::default()
    };
    let dims = SpaceDims::new(min_cavity_levels(cfg.n_max), 3).unwrap();
    let mut last = -1.0;
    for truth in [0.05, 0.1, 0.3, 1.0, 3.0] {
        let data = measured(&p, truth, dims, &freqs);
        let fit = fit_nth_spectrum(&data, &p, dims, &cfg, &ResponseOptions::default()).unwrap();
        assert!(
            (fit.n_th - truth).abs() < 0.02 * truth,
            "{truth}: {}",
            fit.n_th
        );
        assert!(fit.n_th > last);
        assert_eq!(fit.method, ThermalSource::FittedSpectrum);
        last = fit.n_th;
    }
}

#[test]
fn spectral_fit_at_zero_is_one_sided() {
    let p = sample();
    let freqs = grid(6.44, 150.0, 201);
    let dims = SpaceDims::new(12, 3).unwrap();
    let data = measured(&p, 0.0, dims, &freqs);
    let cfg = FitConfig {
        n_max: 1.0,
        ..Default::default()
    };
    let fit = fit_nth_spectrum(&data, &p, dims, &cfg, &ResponseOptions::default()).unwrap();
    assert!(fit.n_th < 1e-6, "{}", fit.n_th);
    assert!(fit.one_sided);
    assert_eq!(fit.interval[0], 0.0);
}

#[test]
fn rabi_fit_recovers_and_tags() {
    let p = sample_with_dephasing();
    let dims = SpaceDims::new(min_cavity_levels(1.0), 3).unwrap();
    let tau: Vec<f64> = (0..=200).map(|k| k as f64 * 2.0e-9).collect();
    let tr = rabi_sequence(
        &p,
        0.2,
        dims,
        &tau,
        InitialQubit::Ground,
        &RabiOptions::default(),
    )
    .unwrap();
    let data = MeasuredRabi {
        tau_ns: tau.iter().map(|t| t * 1e9).collect(),
        p_e: tr.p_e().to_vec(),
    };
    let cfg = RabiFitConfig {
        fit: FitConfig {
            n_max: 1.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let fit = fit_nth_rabi(&data, &p, dims, &cfg).unwrap();
    assert!((fit.n_th - 0.2).abs() < 0.004, "{}", fit.n_th);
    assert_eq!(fit.method, ThermalSource::FittedRabi);

    let mut no_phi = p.clone();
    no_phi.gamma_phi = None;
    assert!(matches!(
        fit_nth_rabi(&data, &no_phi, dims, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn pi_pulse_tail_carries_the_information() {
    let p = sample_with_dephasing();
    let n_th = 0.04;
    let dims = SpaceDims::new(min_cavity_levels(0.5), 3).unwrap();
    let tau: Vec<f64> = (0..=400).map(|k| k as f64 * 1.5e-9).collect();
    let tr = rabi_sequence(
        &p,
        n_th,
        dims,
        &tau,
        InitialQubit::PiPulse,
        &RabiOptions::default(),
    )
    .unwrap();
    let decay = fit_damped_oscillation(&tau, tr.p_e(), 2.0 * p.coupling)
        .unwrap()
        .decay_time;
    let noisy = cqed_core::synthetic::additive_gaussian(tr.p_e(), 0.01, 11).unwrap();
    let cfg = RabiFitConfig {
        initial: InitialQubit::PiPulse,
        fit: FitConfig {
            n_max: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let full = MeasuredRabi {
        tau_ns: tau.iter().map(|t| t * 1e9).collect(),
        p_e: noisy.clone(),
    };
    let keep = tau.iter().filter(|t| **t <= 3.0 * decay).count();
    let head = MeasuredRabi {
        tau_ns: full.tau_ns[..keep].to_vec(),
        p_e: noisy[..keep].to_vec(),
    };
    let a = fit_nth_rabi(&full, &p, dims, &cfg).unwrap();
    let b = fit_nth_rabi(&head, &p, dims, &cfg).unwrap();
    assert!(b.sigma > 1.5 * a.sigma, "{} vs {}", b.sigma, a.sigma);
}

#[test]
fn calibration_with_scatter() {
    let nu = 6.44;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let powers: Vec<f64> = (0..8).map(|k| -222.0 + 4.0 * k as f64).collect();
    for seed in 0..50u64 {
        let points: Vec<CalibrationPoint> = powers
            .iter()
            .map(|&s| {
                let n = nth_from_noise(s, nu, 0.04).unwrap();
                let scatter =
                    multiplicative_gaussian(&[n], 0.05, seed * 100 + rng.random_range(0..100))
                        .unwrap()[0];
                let mut fit = synthetic_fit(scatter);
                fit.sigma = 0.05 * n;
                CalibrationPoint {
                    s_n_dbm_per_hz: s,
                    fit,
                }
            })
            .collect();
        let line = calibration_line(&points, nu).unwrap();
        assert!(
            line.intercept > 0.02 && line.intercept < 0.06,
            "seed {seed}: {}",
            line.intercept
        );
        assert!(line.weighted);
    }
}

fn synthetic_fit(n: f64) -> cqed_core::ThermalFit {
    cqed_core::ThermalFit {
        n_th: n,
        t_c_kelvin: None,
        nu_ghz: 6.44,
        residual_norm: 0.0,
        rss: 0.0,
        sigma: 0.0,
        interval: [n, n],
        one_sided: false,
        insensitive: false,
        method: ThermalSource::FittedSpectrum,
        iterations: 0,
        evaluations: 0,
        points_used: 0,
        warnings: vec![],
    }
}

#[test]
fn detuning_changes_the_qubit_only() {
    let mut c = DeviceConfig::reference_sample();
    c.detuning_mhz = Some(-500.0);
    let d = c.resolve().unwrap();
    assert!((d.qubit_frequency() - mhz_to_angular(6440.0 - 500.0)).abs() < 1e3);
    assert_eq!(d.cavity_frequency, sample().cavity_frequency);
}

#[test]
fn spectral_intervals_cover_under_additive_noise() {
    let p = sample();
    let freqs = grid(6.44, 90.0, 121);
    let dims = SpaceDims::new(12, 3).unwrap();
    let cfg = FitConfig {
        n_max: 1.0,
        ..Default::default()
    };
    let clean = measured(&p, 0.1, dims, &freqs);
    let seeds = 60;
    let covered = (0..seeds)
        .filter(|&seed| {
            let data = MeasuredSpectrum {
                power_normalized: cqed_core::synthetic::additive_gaussian(
                    &clean.power_normalized,
                    0.005,
                    seed,
                )
                .unwrap(),
                ..clean.clone()
            };
            let fit = fit_nth_spectrum(&data, &p, dims, &cfg, &ResponseOptions::default()).unwrap();
            fit.covers(0.1, 1.645)
        })
        .count();
    assert!(covered as f64 >= 0.85 * seeds as f64, "{covered}/{seeds}");
}
