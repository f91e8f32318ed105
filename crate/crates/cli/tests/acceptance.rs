//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured runtime (`--nocapture` to see them all).
//!
//! Criteria 1–2 pin the published loss-budget arithmetic; 3–9 verify the
//! simulation and fitting stack against analytic oracles; 10 checks the
//! end-to-end determinism contract of the pipeline.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use qmem_core::dynamics::{
    apply_gate, evolve_with_stats, protocols, run_sequence, snap_prepare_fock1,
    snap_prepare_superposition01, DeviceModel, GateStep,
};
use qmem_core::fitting::{
    calibrate_snap_recipe, fit, model_eval, model_jacobian_row, FitModelKind, PrepTarget,
};
use qmem_core::hilbert::{
    coherent_state, fock_ket, fock_state, lift_cavity_ket, HilbertDims, QuantumState,
};
use qmem_core::lossbudget::{
    compute_budget, parse_budget, round_sig_figs, seam_relevance_q, Bound,
};
use qmem_core::measurement::{
    sample_dataset, wigner, wigner_at, Dataset, ReadoutModel, WignerGridSpec,
};
use qmem_core::rng::SplitMix64;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn pass(criterion: &str, started: Instant, detail: &str) {
    println!(
        "[acceptance] {criterion}: PASS ({:.2}s) {detail}",
        started.elapsed().as_secs_f64()
    );
}

fn base_model() -> DeviceModel {
    DeviceModel {
        chi_hz: 500e3,
        cavity_t1: 1.4e-3,
        cavity_tphi: f64::INFINITY,
        nbar_th: 0.0,
        transmon_t1: 30e-6,
        transmon_tphi: f64::INFINITY,
        transmon_pe_th: 0.0,
        f_storage_hz: 5.4e9,
        f_transmon_hz: 6.3e9,
        f_readout_hz: 8.9e9,
    }
}

fn readout() -> ReadoutModel {
    ReadoutModel {
        contrast: 0.9,
        baseline: 0.05,
        selective_photon: 0,
        shots: None,
        rng_seed: 0,
    }
}

#[test]
fn criterion_01_loss_budget_regression() {
    let started = Instant::now();
    let expectations = [
        (
            "budgets/table_storage_6061.toml",
            vec![3e11, 2e12, 2e10, 8e9, 9e8, 1e8, 7e8, 8e10],
            8e7,
        ),
        (
            "budgets/table_storage_5n.toml",
            vec![3e11, 2e12, 2e10, 8e9, 9e8, 9e8, 1e9, 8e10],
            3e8,
        ),
    ];
    for (path, limits, total) in &expectations {
        let text = std::fs::read_to_string(fixture(path)).unwrap();
        let parsed = parse_budget(&text).unwrap();
        let report = compute_budget(&parsed.title, &parsed.channels, &parsed.unbudgeted).unwrap();
        let printed: Vec<f64> = report.channels.iter().map(|c| c.q_limit_printed).collect();
        assert_eq!(&printed, limits, "{path}: per-channel printed limits");
        assert_eq!(report.total_q_printed, *total, "{path}: printed total");
        assert_eq!(report.total_bound, Bound::LowerBound);
    }
    assert!(started.elapsed().as_secs_f64() < 1.0, "runtime budget");
    pass(
        "C1 loss-budget regression",
        started,
        "9 channel limits + totals 8e7 (6061) / 3e8 (5N)",
    );
}

#[test]
fn criterion_02_seam_arithmetic() {
    let started = Instant::now();
    let storage = seam_relevance_q(1.1e-4, 1e4);
    assert!((storage - 9.0909090909e7).abs() < 1.0);
    assert_eq!(round_sig_figs(storage, 1), 9e7);
    // "Hundreds of millions" relevance scale.
    assert!((5e7..5e8).contains(&storage));
    let readout_mode = seam_relevance_q(1.4e-3, 1e4);
    assert!((readout_mode - 7.142857142857e6).abs() < 1.0);
    let thin_film = seam_relevance_q(1.1e-4, 1e7);
    assert!((thin_film - 9.0909090909e10).abs() < 1e3);
    assert!(thin_film > 5e10, "thin-film seam pushes toward 1e11");
    // The bundled seam-package fixture carries the same storage-mode seam.
    let text = std::fs::read_to_string(fixture("budgets/seam_package_storage.toml")).unwrap();
    let parsed = parse_budget(&text).unwrap();
    let seam = parsed
        .channels
        .iter()
        .find(|c| c.name == "Package seam")
        .unwrap();
    assert_eq!(seam_relevance_q(seam.loss, seam.quality), storage);
    assert!(started.elapsed().as_secs_f64() < 1.0, "runtime budget");
    pass(
        "C2 seam arithmetic",
        started,
        "storage 9.1e7, readout 7.1e6, thin-film 9.1e10",
    );
}

#[test]
fn criterion_03_lindblad_oracle() {
    let started = Instant::now();
    let dims = HilbertDims::new(16, 2).unwrap();
    let mut rng = SplitMix64::stream(0xacce97, 3);
    for trial in 0..20 {
        let model = DeviceModel {
            chi_hz: 0.0,
            cavity_t1: 0.5e-3 + 1.0e-3 * rng.next_f64(),
            cavity_tphi: if rng.next_f64() < 0.5 {
                f64::INFINITY
            } else {
                1e-3 + 4e-3 * rng.next_f64()
            },
            nbar_th: 0.11 * rng.next_f64(),
            transmon_t1: 15e-6 + 35e-6 * rng.next_f64(),
            transmon_tphi: if rng.next_f64() < 0.5 {
                f64::INFINITY
            } else {
                5e-6 + 35e-6 * rng.next_f64()
            },
            transmon_pe_th: 0.05 * rng.next_f64(),
            ..base_model()
        };
        let state0 = if rng.next_f64() < 0.5 {
            fock_state(1 + (rng.next_f64() * 3.0) as usize, dims).unwrap()
        } else {
            coherent_state(
                Complex64::from_polar(
                    0.4 + 0.9 * rng.next_f64(),
                    2.0 * std::f64::consts::PI * rng.next_f64(),
                ),
                dims,
            )
            .unwrap()
        };
        let n0 = state0.mean_photon_number();
        let kappa = model.kappa();
        let mut state = state0;
        let mut t = 0.0;
        let mut worst_drift = 0.0f64;
        for _ in 0..5 {
            let (next, stats) = evolve_with_stats(&state, &model, model.cavity_t1).unwrap();
            state = next;
            t += model.cavity_t1;
            worst_drift = worst_drift.max(stats.trace_drift);
            let expected = model.nbar_th + (n0 - model.nbar_th) * (-kappa * t).exp();
            let got = state.mean_photon_number();
            assert!(
                (got - expected).abs() <= 1e-6 * expected.abs().max(1e-3),
                "trial {trial}, t = {t:.2e}: {got:.9e} vs {expected:.9e}"
            );
        }
        assert!(worst_drift < 1e-8, "trial {trial}: drift {worst_drift:.2e}");
        let min_eig = state.min_eigenvalue();
        assert!(min_eig > -1e-9, "trial {trial}: min eigenvalue {min_eig:.2e}");
    }
    assert!(started.elapsed().as_secs_f64() < 60.0, "runtime budget");
    pass(
        "C3 Lindblad oracle",
        started,
        "20 randomized models over [0, 5·T1]",
    );
}

#[test]
fn criterion_04_t1_round_trip_with_shots() {
    let started = Instant::now();
    let dims = HilbertDims::default_dims();
    let model = base_model(); // T1 = 1.4 ms, χ/2π = 500 kHz
    let ro = readout();
    let seq = protocols::t1_fock_sequence(dims, protocols::linspace(7e-3, 41));
    let ideal = run_sequence(&seq, &model, dims, &ro).unwrap();

    let mut errors: Vec<f64> = (0..100u64)
        .map(|seed| {
            let ro_sampled = ReadoutModel {
                shots: Some(10_000),
                rng_seed: seed,
                ..readout()
            };
            let noisy = sample_dataset(&ideal, &ro_sampled).unwrap();
            let result = fit(FitModelKind::SingleExp, &noisy, None).unwrap();
            assert!(result.converged, "seed {seed} did not converge");
            (result.time_constant() - model.cavity_t1).abs() / model.cavity_t1
        })
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = errors[94];
    assert!(p95 <= 0.02, "95th-percentile T1 error {p95:.4}");
    assert!(started.elapsed().as_secs_f64() < 300.0, "runtime budget");
    pass(
        "C4 T1 round trip",
        started,
        &format!("95th-percentile relative error {p95:.4} over 100 seeds"),
    );
}

#[test]
fn criterion_05_protocol_consistency() {
    let started = Instant::now();
    let dims = HilbertDims::default_dims();
    let model = base_model();
    let ro = readout();
    let delays = protocols::linspace(7e-3, 41);

    let fock = run_sequence(
        &protocols::t1_fock_sequence(dims, delays.clone()),
        &model,
        dims,
        &ro,
    )
    .unwrap();
    let coherent = run_sequence(
        &protocols::t1_coherent_sequence(dims, Complex64::new(2.0f64.sqrt(), 0.0), delays),
        &model,
        dims,
        &ro,
    )
    .unwrap();
    let t1_fock = fit(FitModelKind::SingleExp, &fock, None)
        .unwrap()
        .time_constant();
    let t1_coherent = fit(FitModelKind::CoherentVacuum, &coherent, None)
        .unwrap()
        .time_constant();
    let rel = (t1_fock - t1_coherent).abs() / t1_fock;
    assert!(
        rel <= 0.05,
        "protocols disagree by {rel:.4}: fock {t1_fock:.5e} vs coherent {t1_coherent:.5e}"
    );
    assert!(started.elapsed().as_secs_f64() < 300.0, "runtime budget");
    pass(
        "C5 protocol consistency",
        started,
        &format!("relative T1 disagreement {rel:.2e}"),
    );
}

#[test]
fn criterion_06_dephasing_free_limit_and_target() {
    let started = Instant::now();
    let dims = HilbertDims::default_dims();
    let ro = readout();

    // Dephasing-free: T2 = 2·T1.
    let model = base_model();
    let t2_expected = 2.0 * model.cavity_t1;
    let span = 3.0 * t2_expected;
    let seq = protocols::t2_ramsey_sequence(dims, 5.0 / span, protocols::linspace(span, 41));
    let data = run_sequence(&seq, &model, dims, &ro).unwrap();
    let t2 = fit(FitModelKind::RamseyFringe, &data, None)
        .unwrap()
        .time_constant();
    let rel_free = (t2 - t2_expected).abs() / t2_expected;
    assert!(rel_free <= 0.05, "T2 {t2:.5e} vs 2·T1 {t2_expected:.5e}");

    // Finite dephasing targeting T2 = 0.2 ms at T1 = 1.2 ms.
    let t1 = 1.2e-3;
    let t2_target = 0.2e-3;
    let tphi = 1.0 / (1.0 / t2_target - 1.0 / (2.0 * t1));
    let model = DeviceModel {
        cavity_t1: t1,
        cavity_tphi: tphi,
        ..base_model()
    };
    let span = 3.0 * t2_target;
    let seq = protocols::t2_ramsey_sequence(dims, 5.0 / span, protocols::linspace(span, 41));
    let data = run_sequence(&seq, &model, dims, &ro).unwrap();
    let t2 = fit(FitModelKind::RamseyFringe, &data, None)
        .unwrap()
        .time_constant();
    let rel_target = (t2 - t2_target).abs() / t2_target;
    assert!(rel_target <= 0.05, "T2 {t2:.5e} vs target {t2_target:.5e}");

    assert!(started.elapsed().as_secs_f64() < 300.0, "runtime budget");
    pass(
        "C6 dephasing-free limit",
        started,
        &format!("T2 = 2·T1 within {rel_free:.2e}; 0.2 ms target within {rel_target:.2e}"),
    );
}

#[test]
fn criterion_07_wigner_correctness() {
    let started = Instant::now();
    let dims = HilbertDims::new(36, 2).unwrap();
    let two_over_pi = std::f64::consts::FRAC_2_PI;

    let vacuum = fock_state(0, dims).unwrap();
    let one = fock_state(1, dims).unwrap();
    let w0 = wigner_at(&vacuum, Complex64::default()).unwrap();
    assert!((w0 - two_over_pi).abs() < 1e-6, "vacuum W(0) = {w0}");
    let w1 = wigner_at(&one, Complex64::default()).unwrap();
    assert!((w1 + two_over_pi).abs() < 1e-6, "fock-1 W(0) = {w1}");

    let spec = WignerGridSpec::default_grid();
    for (name, state) in [("vacuum", &vacuum), ("fock1", &one)] {
        let grid = wigner(state, &spec).unwrap();
        let integral = grid.integral();
        assert!(
            (integral - 1.0).abs() <= 2e-3,
            "{name}: grid integral {integral:.5}"
        );
    }

    // Displacement covariance: W of the displaced vacuum equals the vacuum
    // Wigner on the translated grid.
    let gamma = Complex64::new(0.8, 0.5);
    let displaced = coherent_state(gamma, dims).unwrap();
    let window = 1.2;
    let spec_displaced = WignerGridSpec {
        re_min: gamma.re - window,
        re_max: gamma.re + window,
        im_min: gamma.im - window,
        im_max: gamma.im + window,
        n_points: 21,
    };
    let spec_centered = WignerGridSpec::square(window, 21);
    let w_disp = wigner(&displaced, &spec_displaced).unwrap();
    let w_vac = wigner(&vacuum, &spec_centered).unwrap();
    let mut worst = 0.0f64;
    for i in 0..21 {
        for j in 0..21 {
            worst = worst.max((w_disp.values[(i, j)] - w_vac.values[(i, j)]).abs());
        }
    }
    assert!(worst <= 1e-6, "covariance deviation {worst:.2e}");

    assert!(started.elapsed().as_secs_f64() < 30.0, "runtime budget");
    pass(
        "C7 Wigner correctness",
        started,
        &format!("peaks ±2/π, normalization, covariance {worst:.1e}"),
    );
}

#[test]
fn criterion_08_fitter_verification() {
    let started = Instant::now();
    // Analytic Jacobians against central finite differences.
    let cases: Vec<(FitModelKind, Vec<f64>)> = vec![
        (FitModelKind::SingleExp, vec![0.8, 1.4e-3, 0.1]),
        (FitModelKind::CoherentVacuum, vec![0.9, 2.0, 0.7e-3, 0.05]),
        (
            FitModelKind::RamseyFringe,
            vec![0.4, 2.8e-3, 1.8e3, 0.3, 0.5],
        ),
    ];
    let mut rng = SplitMix64::stream(88, 1);
    for (kind, base) in &cases {
        for _ in 0..100 {
            let params: Vec<f64> = base.iter().map(|p| p * (0.5 + rng.next_f64())).collect();
            let t = 4e-3 * rng.next_f64();
            let mut analytic = vec![0.0; kind.param_count()];
            model_jacobian_row(*kind, &params, t, &mut analytic);
            for j in 0..kind.param_count() {
                let h = 1e-6 * params[j].abs().max(1e-12);
                let mut plus = params.clone();
                plus[j] += h;
                let mut minus = params.clone();
                minus[j] -= h;
                let fd = (model_eval(*kind, &plus, t).unwrap()
                    - model_eval(*kind, &minus, t).unwrap())
                    / (2.0 * h);
                let scale = analytic[j].abs().max(fd.abs()).max(1e-9);
                assert!(
                    (analytic[j] - fd).abs() <= 1e-5 * scale,
                    "{kind:?} param {j}: {} vs {fd}",
                    analytic[j]
                );
            }
        }
    }

    // Noiseless round trips to 1e-6 relative.
    let truths: Vec<(FitModelKind, Vec<f64>, f64)> = vec![
        (FitModelKind::SingleExp, vec![-0.9, 1.4e-3, 0.95], 7e-3),
        (
            FitModelKind::CoherentVacuum,
            vec![0.9, 2.0, 0.7e-3, 0.05],
            3.5e-3,
        ),
        (
            FitModelKind::RamseyFringe,
            vec![0.35, 2.8e-3, 1.2e3, 0.4, 0.5],
            8.4e-3,
        ),
    ];
    for (kind, truth, span) in &truths {
        let t: Vec<f64> = (0..61).map(|i| span * i as f64 / 60.0).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&ti| model_eval(*kind, truth, ti).unwrap())
            .collect();
        let data = Dataset {
            sweep_name: "delay_s".into(),
            sweep_values: t,
            trace: y,
            shots_per_point: None,
        };
        let result = fit(*kind, &data, None).unwrap();
        assert!(result.converged, "{kind:?} did not converge");
        for (got, want) in result.params.iter().zip(truth.iter()) {
            assert!(
                (got - want).abs() <= 1e-6 * want.abs(),
                "{kind:?}: {got} vs {want}"
            );
        }
    }
    assert!(started.elapsed().as_secs_f64() < 60.0, "runtime budget");
    pass(
        "C8 fitter verification",
        started,
        "300 Jacobian checks + 3 noiseless round trips",
    );
}

fn recipe_state(steps: &[GateStep], dims: HilbertDims) -> QuantumState {
    let mut state = fock_state(0, dims).unwrap();
    for step in steps {
        state = apply_gate(&state, step).unwrap();
    }
    state
}

#[test]
fn criterion_09_snap_preparation() {
    let started = Instant::now();
    let dims = HilbertDims::default_dims();

    // Frozen recipes reach the threshold at the default truncation...
    let fock1 = recipe_state(&snap_prepare_fock1(dims), dims);
    let fid_fock1 = fock1
        .fidelity_to_ket(&lift_cavity_ket(&fock_ket(1, dims.n_cav()), dims))
        .unwrap();
    assert!(fid_fock1 >= 0.99, "fock1 recipe fidelity {fid_fock1:.5}");

    let superpos = recipe_state(&snap_prepare_superposition01(dims), dims);
    let mut target = qmem_core::linalg::CVector::zeros(dims.n_cav());
    target[0] = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
    target[1] = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
    let fid_superpos = superpos
        .fidelity_to_ket(&lift_cavity_ket(&target, dims))
        .unwrap();
    assert!(fid_superpos >= 0.99, "superposition fidelity {fid_superpos:.5}");

    // ...and are stable under doubling the truncation.
    let dims2 = HilbertDims::new(2 * dims.n_cav(), 2).unwrap();
    let fock1_doubled = recipe_state(&snap_prepare_fock1(dims2), dims2);
    let fid_doubled = fock1_doubled
        .fidelity_to_ket(&lift_cavity_ket(&fock_ket(1, dims2.n_cav()), dims2))
        .unwrap();
    assert!(
        (fid_fock1 - fid_doubled).abs() < 1e-4,
        "truncation instability: {fid_fock1:.6} vs {fid_doubled:.6}"
    );
    let superpos_doubled = recipe_state(&snap_prepare_superposition01(dims2), dims2);
    let mut target2 = qmem_core::linalg::CVector::zeros(dims2.n_cav());
    target2[0] = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
    target2[1] = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
    let fid_superpos_doubled = superpos_doubled
        .fidelity_to_ket(&lift_cavity_ket(&target2, dims2))
        .unwrap();
    assert!((fid_superpos - fid_superpos_doubled).abs() < 1e-4);

    // The calibration search reproduces threshold-grade recipes on demand.
    let calibrated = calibrate_snap_recipe(dims, PrepTarget::Fock1).unwrap();
    assert!(calibrated.fidelity >= 0.99);
    assert!(calibrated.evaluations <= 2000);
    let calibrated = calibrate_snap_recipe(dims, PrepTarget::Superposition01).unwrap();
    assert!(calibrated.fidelity >= 0.99);

    assert!(started.elapsed().as_secs_f64() < 120.0, "runtime budget");
    pass(
        "C9 SNAP preparation",
        started,
        &format!("fidelities {fid_fock1:.4} (|1⟩), {fid_superpos:.4} (|0⟩+|1⟩)"),
    );
}

fn run_pipeline_into(dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_qmem"))
        .args(["pipeline", "--config"])
        .arg(fixture("configs/pipeline.toml"))
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "pipeline failed: {status:?}");
}

#[test]
fn criterion_10_pipeline_determinism() {
    let started = Instant::now();
    let base = std::env::temp_dir().join(format!("qmem-accept-{}", std::process::id()));
    let dir_a = base.join("a");
    let dir_b = base.join("b");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();

    run_pipeline_into(&dir_a);
    run_pipeline_into(&dir_b);

    let mut names: Vec<String> = std::fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(
        names.contains(&"pipeline_summary.txt".to_string()),
        "summary written: {names:?}"
    );
    assert!(names.len() >= 8, "expected per-device datasets: {names:?}");
    for name in &names {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "file {name} differs between identical runs");
    }

    // The summary row for the quiet device sits at the expected scale:
    // T1 ≈ 1.4 ms both ways, T2 ≈ 2·T1, n̄ ≈ ln(1.05).
    let summary: toml::Value =
        toml::from_str(&std::fs::read_to_string(dir_a.join("pipeline_summary.toml")).unwrap())
            .unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let quiet = &rows[0];
    let t1f = quiet["t1_fock_ms"].as_float().unwrap();
    let t1c = quiet["t1_coherent_ms"].as_float().unwrap();
    let t2 = quiet["t2_ms"].as_float().unwrap();
    let nbar = quiet["nbar"].as_float().unwrap();
    assert!((t1f - 1.4).abs() < 0.14, "T1_F {t1f}");
    assert!((t1c - 1.4).abs() < 0.07, "T1_C {t1c}");
    assert!((t2 - 2.8).abs() < 0.2, "T2 {t2}");
    assert!((nbar - 0.05).abs() < 0.005, "nbar {nbar}");
    let short = &rows[1];
    let t2_short = short["t2_ms"].as_float().unwrap();
    assert!((t2_short - 0.2).abs() < 0.01, "short-T2 row {t2_short}");

    let _ = std::fs::remove_dir_all(&base);
    pass(
        "C10 pipeline determinism",
        started,
        &format!("byte-identical outputs; quiet row ({t1f:.2}, {t1c:.2}, {t2:.2}, {nbar:.3})"),
    );
}
