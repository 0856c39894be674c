use super::*;
use crate::background::BackgroundPreset;
use crate::init_data::{assemble_error_initial, split_parameters, FreeDataPreset};
use crate::phases::{build_interaction_table, Phase};
use std::f64::consts::PI;

fn setup(n: usize, ks: &[[f64; 3]], preset: BackgroundPreset, lambda: f64) -> (BackgroundInitialData, CoupledSystem) {
    let g = Grid::new(1, n, 4.0 * PI, 0.25).unwrap();
    let bg = preset.build(g, ks).unwrap();
    let phases: Vec<Phase> = ks.iter().map(|k| Phase::plane(g, *k, 1.0)).collect();
    let table = build_interaction_table(&phases, 1e-10).unwrap();
    let sys = CoupledSystem::new(g, ks, &table, lambda, 0.1).unwrap();
    (bg, sys)
}

fn init(bg: &BackgroundInitialData, sys: &CoupledSystem, free: FreeDataPreset) -> ErrorParameterInit {
    let f = free.build(sys.grid, sys.lambda).unwrap();
    let (c, _) = assemble_error_initial(&f, bg, &sys.table, 1e-12).unwrap();
    split_parameters(&c, bg, sys).unwrap()
}

fn bump(grid: &Grid, c: f64) -> Vec<C64> {
    crate::background::gaussian(grid, [c, 0.0, 0.0], 0.7).iter().map(|v| C64::new(*v, 0.3 * v)).collect()
}

#[test]
fn transport_rate_moves_data_along_the_ray() {
    let (_, sys) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::zero(), 0.1);
    let g = sys.grid;
    let c = bump(&g, 0.0);
    let rate = transport_dt(&g, &sys.cov(0), &c, &vec![C64::new(0.0, 0.0); g.npts()]);
    let dx = spectral::deriv(&g, &c, 0);
    for (r, d) in rate.iter().zip(&dx) {
        assert!((r + d).norm() < 1e-12);
    }
}

#[test]
fn quadratic_forms_are_differentiated_exactly() {
    let (bg, sys) = setup(128, &[[1.0, 0.0, 0.0]], BackgroundPreset::default(), 0.05);
    let g = sys.grid;
    let jets = crate::background::initial_jets(&bg);
    let b = bump(&g, 0.3);
    let x = sys.plus_inputs(&jets, 0, 0, &b, &vec![b.clone(), bump(&g, -0.2)], &bump(&g, 0.5));
    let y = x.map(|f| f.iter().rev().map(|v| v * C64::new(0.5, -0.2)).collect());
    let exact = sys.plus_rhs_dt(0, &x, &y);
    let h = 1e-4;
    let p = sys.plus_rhs(0, &x.lin(h, &y));
    let m = sys.plus_rhs(0, &x.lin(-h, &y));
    let fd = p.lin(-1.0, &m).scale(0.5 / h);
    for (a, b) in exact.psi.iter().zip(&fd.psi) {
        assert!((a - b).norm() < 1e-8, "{a} {b}");
    }
    for (ca, cb) in exact.w.iter().zip(&fd.w) {
        for (a, b) in ca.iter().zip(cb) {
            assert!((a - b).norm() < 1e-8);
        }
    }
}

#[test]
fn projector_split_is_exact() {
    let (_, sys) = setup(256, &[[1.0, 0.0, 0.0]], BackgroundPreset::zero(), 0.0125);
    let f = bump(&sys.grid, 0.2);
    assert!(projector_split_defect(&sys, &f) < 1e-14);
}

#[test]
fn zero_data_stay_zero() {
    let (bg, sys) = setup(128, &[[1.0, 0.0, 0.0]], BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..BackgroundPreset::zero() }, 0.1);
    let ini = init(&bg, &sys, FreeDataPreset::zero());
    let traj = evolve_coupled(&bg, &ini, &sys, &CoupledOptions { t_final: 0.2, checkpoints: vec![0.1], blowup: 1e6 }).unwrap();
    assert_eq!(traj.checkpoints[0].state.max_abs(), 0.0);
}

#[test]
fn incoherent_or_non_null_resonances_are_rejected() {
    let g = Grid::new(1, 64, 4.0 * PI, 0.25).unwrap();
    let ks = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let phases: Vec<Phase> = ks.iter().map(|k| Phase::plane(g, *k, 1.0)).collect();
    let mut table = build_interaction_table(&phases, 1e-10).unwrap();
    table.pairs[0].class = PairClass::Incoherent;
    assert!(CoupledSystem::new(g, &ks, &table, 0.1, 0.1).is_err());
    let g2 = Grid::new(2, 16, 4.0 * PI, 0.25).unwrap();
    let ks2 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let phases: Vec<Phase> = ks2.iter().map(|k| Phase::plane(g2, *k, 1.0)).collect();
    let mut table2 = build_interaction_table(&phases, 1e-10).unwrap();
    table2.pairs[0].class = PairClass::Resonant;
    assert!(matches!(CoupledSystem::new(g2, &ks2, &table2, 0.1, 0.1), Err(Error::PhaseSet(_))));
}

#[test]
fn resonant_amplitudes_ignore_the_error_data_and_stay_polarised() {
    let ks = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let (bg, sys) = setup(256, &ks, BackgroundPreset::default(), 0.1);
    let opts = CoupledOptions { t_final: 0.3, checkpoints: vec![0.15], blowup: 1e6 };
    let a = evolve_coupled(&bg, &init(&bg, &sys, FreeDataPreset::default()), &sys, &opts).unwrap();
    let b = evolve_coupled(&bg, &init(&bg, &sys, FreeDataPreset::zero()), &sys, &opts).unwrap();
    let fab = evolve_fab(&bg, &sys, 0.3, &[0.15]).unwrap();
    let (sa, sb) = (&a.checkpoints[0].state.fab, &b.checkpoints[0].state.fab);
    let (t, sf) = &fab.samples[0];
    assert!((t - a.checkpoints[0].t).abs() < 1e-12);
    let mut size = 0.0f64;
    for ((x, y), z) in sa.iter().zip(sb).zip(sf) {
        assert_eq!(x.w, y.w);
        assert_eq!(x.w, z.w);
        assert_eq!(x.psi, z.psi);
        size = size.max(x.w.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max));
    }
    assert!(size > 1e-3);
    for p in fab.polarization.iter().flatten() {
        assert!(*p < 1e-12 * size.max(1.0), "{p}");
    }
}

#[test]
fn assembled_solution_keeps_the_gauge_and_the_charge() {
    let ks = [[1.0, 0.0, 0.0]];
    let (bg, sys) = setup(256, &ks, BackgroundPreset::default(), 0.1);
    let ini = init(&bg, &sys, FreeDataPreset::default());
    let traj = evolve_coupled(&bg, &ini, &sys, &CoupledOptions { t_final: 0.5, checkpoints: vec![0.1, 0.4], blowup: 1e6 }).unwrap();
    for row in gauge_divergence_monitor(&traj) {
        assert!(row.divergence < 1e-4 * row.first_order.max(1e-3), "{row:?}");
    }
    // The torus forces zero net charge, so compare drift against the total
    // variation of the charge density.
    let mut scale = 0.0f64;
    let q: Vec<f64> = traj
        .checkpoints
        .iter()
        .map(|cp| {
            let f = &cp.fields;
            let a0: Vec<C64> = f.a1[0].iter().zip(&f.z[0]).map(|(a, b)| a + b).collect();
            let phi: Vec<C64> = f.phi1.iter().zip(&f.zeta).map(|(a, b)| a + b).collect();
            let phit: Vec<C64> = f.phi1_t.iter().zip(&f.zeta_t).map(|(a, b)| a + b).collect();
            let abs: f64 = (0..phi.len())
                .map(|p| ((phi[p] * phit[p].conj()).im + a0[p].re * phi[p].norm_sqr()).abs())
                .sum::<f64>()
                * sys.grid.cell_volume();
            scale = scale.max(abs);
            total_charge(&sys.grid, &a0, &phi, &phit)
        })
        .collect();
    assert!(scale > 0.1);
    assert!((q[0] - q[1]).abs() < 1e-6 * scale, "{q:?} {scale}");
}

#[test]
fn auxiliary_field_tracks_the_dalembertian() {
    let ks = [[1.0, 0.0, 0.0]];
    let (bg, sys) = setup(256, &ks, BackgroundPreset::default(), 0.1);
    let ini = init(&bg, &sys, FreeDataPreset::default());
    let traj = evolve_coupled(&bg, &ini, &sys, &CoupledOptions { t_final: 0.3, checkpoints: vec![0.2], blowup: 1e6 }).unwrap();
    let rep = verify_auxiliary(&traj.checkpoints[0], &sys.grid);
    assert!(rep.relative < 1e-3, "{rep:?}");
    assert!(rep.size[0] > 0.0);
}

#[test]
fn trivial_trajectory_is_flagged_without_a_fit() {
    let ks = [[1.0, 0.0, 0.0]];
    let (bg, sys) = setup(128, &ks, BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..BackgroundPreset::zero() }, 0.1);
    let ini = init(&bg, &sys, FreeDataPreset::zero());
    let traj = evolve_coupled(&bg, &ini, &sys, &CoupledOptions { t_final: 0.2, checkpoints: vec![0.1], blowup: 1e6 }).unwrap();
    let m = monitor_bootstrap(&traj);
    assert!(m.trivial && m.c1.is_none());
}
