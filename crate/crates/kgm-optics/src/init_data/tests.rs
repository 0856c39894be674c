use super::*;
use crate::background::BackgroundPreset;
use crate::phases::{build_interaction_table, Phase};
use std::f64::consts::PI;

fn grid(n: usize) -> Grid {
    Grid::new(1, n, 4.0 * PI, 0.25).unwrap()
}

fn setup(n: usize, ks: &[[f64; 3]], preset: BackgroundPreset) -> (BackgroundInitialData, InteractionTable) {
    let g = grid(n);
    let bg = preset.build(g, ks).unwrap();
    let phases: Vec<Phase> = ks.iter().map(|k| Phase::plane(g, *k, 1.0)).collect();
    (bg, build_interaction_table(&phases, 1e-10).unwrap())
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn unit_potential_divides_single_mode() {
    let g = grid(64);
    let xi = 3.0 * 2.0 * PI / g.l;
    let h: Vec<C64> = g.coords().iter().map(|x| C64::from_polar(1.0, xi * x[0])).collect();
    let f = solve_perturbed_laplacian(&g, &vec![1.0; g.npts()], &h, 1e-13).unwrap();
    for (a, b) in f.iter().zip(&h) {
        assert!((a - b / (1.0 + xi * xi)).norm() < 1e-12);
    }
}

#[test]
fn pure_laplacian_inverts_mean_free_mode() {
    let g = grid(64);
    let xi = 2.0 * 2.0 * PI / g.l;
    let h: Vec<C64> = g.coords().iter().map(|x| C64::new((xi * x[0]).cos(), 0.0)).collect();
    let f = solve_perturbed_laplacian(&g, &vec![0.0; g.npts()], &h, 1e-12).unwrap();
    for (a, b) in f.iter().zip(&h) {
        assert!((a - b / (xi * xi)).norm() < 1e-12);
    }
}

#[test]
fn pure_laplacian_rejects_net_charge() {
    let g = grid(64);
    let h = vec![C64::new(1.0, 0.0); g.npts()];
    assert!(matches!(solve_perturbed_laplacian(&g, &vec![0.0; g.npts()], &h, 1e-10), Err(Error::Neutrality { .. })));
}

#[test]
fn negative_potential_is_rejected() {
    let g = grid(32);
    let mut pot = vec![1.0; g.npts()];
    pot[3] = -0.1;
    assert!(solve_perturbed_laplacian(&g, &pot, &vec![C64::new(1.0, 0.0); g.npts()], 1e-10).is_err());
}

#[test]
fn manufactured_solution_is_recovered() {
    let g = grid(256);
    let fstar: Vec<C64> = g.coords().iter().map(|x| C64::new((-x[0] * x[0]).exp() * (1.0 + x[0]), 0.3 * (-(x[0] - 1.0).powi(2)).exp())).collect();
    let pot: Vec<f64> = gaussian(&g, [0.5, 0.0, 0.0], 0.7).iter().map(|v| 3.0 * v).collect();
    let h = apply_operator(&g, &pot, &fstar);
    let sol = solve_perturbed_laplacian_projected(&g, &pot, &h, 1e-12).unwrap();
    let err: Vec<C64> = sol.f.iter().zip(&fstar).map(|(a, b)| a - b).collect();
    assert!(l2_norm(&g, &err) <= 1e-8 * l2_norm(&g, &fstar), "{}", l2_norm(&g, &err));
    assert!(sol.iterations > 0);
}

#[test]
fn zero_data_give_zero_constrained_data() {
    let (bg, table) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..BackgroundPreset::zero() });
    let free = FreeDataPreset::zero().build(bg.grid, 0.05).unwrap();
    let (c, _) = assemble_error_initial(&free, &bg, &table, 1e-12).unwrap();
    for comp in c.z.iter().chain(&c.zdot) {
        assert_eq!(max_abs(comp), 0.0);
    }
    let sys = CoupledSystem::new(bg.grid, &bg.ks, &table, 0.05, 0.1).unwrap();
    let init = split_parameters(&c, &bg, &sys).unwrap();
    assert!(init.state.max_abs() == 0.0);
}

#[test]
fn gauge_time_derivative_cancels_spatial_divergence() {
    let (bg, _) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..BackgroundPreset::zero() });
    let free = FreeDataPreset::default().build(bg.grid, 0.05).unwrap();
    let zd = gauge_time_derivative(&free, &bg).unwrap();
    let div = spectral::deriv(&bg.grid, &free.z[0], 0);
    for (a, b) in zd.comp(0).iter().zip(&div) {
        assert!((a + b).norm() < 1e-12);
    }
}

#[test]
fn z0bis_is_linear_in_the_divergence_and_charge_terms() {
    let (bg1, table) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let mut bg2 = bg1.clone();
    for (w, psi) in bg2.w.iter_mut().zip(bg2.psi.iter_mut()) {
        *w = FieldArray::new(bg1.grid, w.comps().iter().map(|c| c.iter().map(|v| 2.0 * v).collect()).collect()).unwrap();
        *psi = FieldArray::scalar(bg1.grid, psi.comp(0).iter().map(|v| 2.0 * v).collect()).unwrap();
    }
    // With a single phase there are no pair terms, so z⁰ᴮᴵˢ is linear in
    // (w, ψ) at fixed free data and background fields.
    let free = FreeDataPreset::default().build(bg1.grid, 0.05).unwrap();
    let b1 = build_z0bis(&free, &bg1, &table).unwrap();
    let b2 = build_z0bis(&free, &bg2, &table).unwrap();
    assert!(max_abs(b1.comp(0)) > 0.0);
    let scale = max_abs(b1.comp(0));
    for (a, b) in b1.comp(0).iter().zip(b2.comp(0)) {
        assert!((2.0 * a - b).norm() < 1e-6 * scale, "{a} {b}");
    }
}

#[test]
fn assembled_data_satisfy_constraints() {
    let ks = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let (bg, table) = setup(512, &ks, BackgroundPreset::default());
    for lam in [0.1, 0.05] {
        let free = FreeDataPreset::default().build(bg.grid, lam).unwrap();
        let (_, rep) = assemble_error_initial(&free, &bg, &table, 1e-12).unwrap();
        assert!(rep.maxwell <= 1e-8, "{rep:?}");
        assert!(rep.lorenz <= 1e-8, "{rep:?}");
    }
}

#[test]
fn different_free_data_both_satisfy_constraints() {
    let (bg, table) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    for preset in [FreeDataPreset::default(), FreeDataPreset { zeta_amp: [0.1, 0.4], z_amp: -0.3, zeta_speed: -1.0, ..Default::default() }] {
        let free = preset.build(bg.grid, 0.05).unwrap();
        let (_, rep) = assemble_error_initial(&free, &bg, &table, 1e-12).unwrap();
        assert!(rep.maxwell <= 1e-8 && rep.lorenz <= 1e-8, "{rep:?}");
    }
}

#[test]
fn neutralized_data_carry_no_net_charge() {
    let (bg, _) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let free = FreeDataPreset::default().build(bg.grid, 0.05).unwrap();
    let (fixed, alpha) = neutralize_charge(&free, &bg).unwrap();
    assert!(alpha != 0.0);
    let before: f64 = constraint_source(&free, &bg).unwrap().iter().map(|v| v.re).sum();
    let after: f64 = constraint_source(&fixed, &bg).unwrap().iter().map(|v| v.re).sum();
    assert!(after.abs() < 1e-10 * before.abs(), "{before} {after}");
}

#[test]
fn divergence_cleaning_removes_the_divergence() {
    let g = Grid::new(2, 32, 4.0 * PI, 0.25).unwrap();
    let free = FreeDataPreset::default().build(g, 0.1).unwrap();
    let div = divergence(&g, &free.zdot);
    assert!(l2_norm(&g, &div) < 1e-12);
    assert!(free.zdot.iter().any(|c| max_abs(c) > 0.0));
}

#[test]
fn split_parameters_reassemble_the_data() {
    let ks = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let (bg, table) = setup(256, &ks, BackgroundPreset::default());
    let lam = 0.1;
    let free = FreeDataPreset::default().build(bg.grid, lam).unwrap();
    let (c, _) = assemble_error_initial(&free, &bg, &table, 1e-12).unwrap();
    let sys = CoupledSystem::new(bg.grid, &ks, &table, lam, 0.1).unwrap();
    let init = split_parameters(&c, &bg, &sys).unwrap();
    assert!(reassembly_error(&c, &init, &bg, &sys).unwrap() <= 1e-12);
    for s in &init.state.plus {
        assert!(max_abs(&s.psi) == 0.0 && s.w.iter().all(|c| max_abs(c) == 0.0));
        assert!(max_abs(&s.gpsi) > 0.0);
    }
}

#[test]
fn auxiliary_data_solve_the_differentiated_transport_equation() {
    let (bg, table) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let lam = 0.05;
    let free = FreeDataPreset::default().build(bg.grid, lam).unwrap();
    let (c, _) = assemble_error_initial(&free, &bg, &table, 1e-12).unwrap();
    let sys = CoupledSystem::new(bg.grid, &bg.ks, &table, lam, 0.1).unwrap();
    let init = split_parameters(&c, &bg, &sys).unwrap();
    // With F⁺ = 0 at t = 0: ∂_tF⁺ = −f/(2ℓ₀) and g⁺ = −∂²_tF⁺.
    let cov = sys.cov(0);
    let rate = sys.evaluate(&BgState::from_initial(&bg), &init.state, 0.0).unwrap();
    let ev = &rate.err.plus[0];
    for (a, b) in ev.psi.iter().zip(&init.psi_plus_t[0]) {
        assert!((a - b).norm() < 1e-12);
    }
    assert!(cov[0] < 0.0);
    assert!(l2_norm(&bg.grid, &init.state.plus[0].gpsi) > 0.0);
}
