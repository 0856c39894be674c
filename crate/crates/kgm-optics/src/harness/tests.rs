use proptest::prelude::*;

use super::*;
use crate::Error;

fn incoherent() -> ExperimentConfig {
    let mut c = scenario("separated-pair-2d").unwrap();
    c.grid.n = 32;
    c.phases = vec![
        PhaseDecl::plane([1.0, 0.0, 0.0]),
        PhaseDecl { k: [1.0, 0.0, 0.0], bend: Some(Bend { amplitude: 0.3, axis: 1, mode: 2.0 }) },
    ];
    c.t_final = 0.5;
    c
}

#[test]
fn exact_power_laws_are_fitted_exactly() {
    for p in [0.5, 2.0, -1.0, 0.0] {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&l: &f64| (l, 3.0 * l.powf(p))).collect();
        let f = fit_slope(&pts).unwrap();
        assert!((f.slope - p).abs() < 1e-12, "p = {p}: {f:?}");
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unusable_fit_input_is_rejected() {
    assert!(matches!(fit_slope(&[(0.1, 1.0), (0.05, 0.5)]), Err(Error::Fit(_))));
    assert!(matches!(fit_slope(&[(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)]), Err(Error::Fit(_))));
    assert!(matches!(fit_slope(&[(0.1, 1.0), (0.1, 0.5), (0.1, 0.1)]), Err(Error::Fit(_))));
    assert!(matches!(fit_slope(&[(0.1, f64::NAN), (0.05, 0.5), (0.02, 0.1)]), Err(Error::Fit(_))));
}

proptest! {
    #[test]
    fn noisy_power_law_slope_stays_close(p in -1.0f64..3.0, c in 0.01f64..100.0, noise in prop::collection::vec(-0.01f64..0.01, 5)) {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| {
            let l = 0.1 / 2f64.powi(i);
            (l, c * l.powf(p) * noise[i as usize].exp())
        }).collect();
        let f = fit_slope(&pts).unwrap();
        // Log-noise ≤ 0.01 over a log-span of 4 ln 2 moves the slope by < 0.02.
        prop_assert!((f.slope - p).abs() < 0.02);
    }
}

#[test]
fn configurations_round_trip_through_toml() {
    for c in scenario_library() {
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c, "{}", c.scenario);
        c.validate().unwrap();
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let mut text = scenario("single-phase-1d").unwrap().to_toml().unwrap();
    text = text.replace("[grid]\n", "[grid]\nresolution = 3\n");
    assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
}

#[test]
fn invalid_settings_are_rejected() {
    let base = scenario("single-phase-1d").unwrap();
    let mut c = base.clone();
    c.lambdas = vec![0.05, 0.1, 0.025];
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = base.clone();
    c.kappa = 1.0;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.error.intervals = 3;
    assert!(c.validate().is_err());
    let mut c = base;
    c.workers = 0;
    assert!(c.validate().is_err());
    assert!(matches!(scenario("nonexistent"), Err(Error::Config(_))));
}

#[test]
fn lambda_scaled_grid_respects_the_cap() {
    let g = GridSpec { points_per_wavelength: Some(3.2), ..GridSpec::default() };
    assert_eq!(g.for_lambda(0.1, 2.0).unwrap().n, 512);
    assert_eq!(g.for_lambda(0.025, 2.0).unwrap().n, 512);
    assert_eq!(g.for_lambda(0.0125, 2.0).unwrap().n, 1024);
    assert_eq!(g.for_lambda(0.001, 2.0).unwrap().n, 2048);
    assert_eq!(GridSpec::default().for_lambda(0.001, 2.0).unwrap().n, 512);
}

#[test]
fn incoherent_phase_set_is_rejected_before_solving() {
    let err = run(&incoherent()).unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "phases");
            assert!(matches!(*source, Error::PhaseSet(_)));
        }
        e => panic!("unexpected error {e}"),
    }
    assert!(check_constraints(&incoherent()).is_err());
}

#[test]
fn all_zero_scenario_measures_nothing() {
    let c = scenario("all-zero").unwrap();
    let r = run(&c).unwrap();
    for l in &r.lambdas {
        assert_eq!(l.decomposition.remainder, 0.0);
        assert_eq!(l.decomposition.gauge, 0.0);
        let e = l.error.as_ref().unwrap();
        assert_eq!(e.norms, [0.0; 3]);
        assert_eq!(e.gauge_initial, 0.0);
    }
    assert!(r.cascade.iter().all(|s| s.relative() == 0.0));
    // Nothing to fit: every metric vanishes identically.
    assert!(r.sweep.as_ref().map_or(true, |s| s.fits.is_empty()));
}

#[test]
fn runs_are_deterministic_and_written_once() {
    let mut c = scenario("single-phase-1d").unwrap();
    c.grid.n = 128;
    c.grid.points_per_wavelength = None;
    c.lambdas = vec![0.2, 0.1, 0.05];
    c.t_final = 0.5;
    c.error.intervals = 2;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut ledgers = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let mut c = c.clone();
        c.workers = i + 1;
        c.output = Some(d.path().to_path_buf());
        let r = run(&c).unwrap();
        assert!(r.gate("coherence").unwrap().pass);
        assert!(r.sweep.is_some());
        ledgers.push(std::fs::read(d.path().join("ledger.csv")).unwrap());
        assert!(d.path().join("summary.json").exists());
    }
    assert!(!ledgers[0].is_empty());
    assert_eq!(ledgers[0], ledgers[1]);
}

#[test]
fn sweeps_need_three_lambdas() {
    let mut c = scenario("all-zero").unwrap();
    c.lambdas = vec![0.1, 0.05];
    assert!(matches!(sweep(&c), Err(Error::Config(_))));
}
