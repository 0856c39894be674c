use super::*;
use crate::background::{evolve_background, BackgroundPreset};
use crate::phases::{build_interaction_table, Phase};

const T: f64 = 1.0;

fn setup(dim: usize, n: usize, ks: &[[f64; 3]], preset: BackgroundPreset) -> (BackgroundState, InteractionTable) {
    let g = Grid::new(dim, n, 16.0, 0.1).unwrap();
    let d = preset.build(g, ks).unwrap();
    let bg = evolve_background(&d, T, &[0.5]).unwrap();
    let phases: Vec<Phase> = ks.iter().map(|k| Phase::plane(g, *k, T)).collect();
    let table = build_interaction_table(&phases, 1e-10).unwrap();
    (bg, table)
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

const RESONANT: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
const SEPARATED: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];

#[test]
fn zero_amplitudes_reproduce_background() {
    let preset = BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..Default::default() };
    let (bg, _) = setup(1, 128, &[[1.0, 0.0, 0.0]], preset);
    let fo = assemble_first_order(&bg, 0.5, 1.0).unwrap();
    let c = bg.window_at(0.5).unwrap().center();
    for i in 0..2 {
        assert_eq!(fo.a.curr.comp(i), &c.a[i][..]);
    }
    assert_eq!(fo.phi.curr.comp(0), &c.phi[..]);
}

#[test]
fn oscillatory_part_scales_with_square_root_of_lambda() {
    let (bg, _) = setup(1, 512, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let c = bg.window_at(0.5).unwrap().center().clone();
    let osc = |lambda: f64| {
        let fo = assemble_first_order(&bg, 0.5, lambda).unwrap();
        let d: Vec<Vec<C64>> = (0..2).map(|i| fo.a.curr.comp(i).to_vec().sub(&c.a[i])).collect();
        l2_norm_comps(&bg.grid, &d)
    };
    let ratio = osc(0.1) / osc(0.05);
    assert!((ratio - 2f64.sqrt()).abs() < 0.01 * 2f64.sqrt(), "ratio {ratio}");
}

#[test]
fn real_potential_stays_real() {
    let (bg, _) = setup(1, 128, &SEPARATED, BackgroundPreset::default());
    let fo = assemble_first_order(&bg, 0.5, 0.05).unwrap();
    for h in [&fo.a.prev, &fo.a.curr, &fo.a.next] {
        assert!(h.max_imag() <= 1e-14, "{}", h.max_imag());
    }
}

#[test]
fn closed_form_interactions_match_symbolic_cross_products() {
    for (dim, ks) in [(1, SEPARATED.to_vec()), (1, RESONANT.to_vec()), (2, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])] {
        let n = if dim == 1 { 256 } else { 128 };
        let (bg, table) = setup(dim, n, &ks, BackgroundPreset::default());
        let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
        let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
        let (ma, kg) = (res.maxwell(), res.kg());
        let mut scale = 0.0f64;
        let mut err = 0.0f64;
        for term in &terms.terms {
            for (c, j) in term.maxwell.iter().enumerate() {
                let sym = ma[c].coeff(&term.key());
                scale = scale.max(max_abs(&sym));
                err = err.max(max_abs(&sym.sub(&j.v)));
            }
            let sym = kg.coeff(&term.key());
            scale = scale.max(max_abs(&sym));
            err = err.max(max_abs(&sym.sub(&term.kg.v)));
        }
        // Every O(1) cross harmonic of the residual is accounted for.
        let covered: Vec<Key> = terms.terms.iter().map(InteractionTerm::key).collect();
        for f in ma.iter().chain(std::iter::once(&kg)) {
            for (k, v) in &f.terms {
                if slot_of(k) == Slot::Interaction && !covered.contains(k) {
                    assert!(max_abs(v) < 1e-12, "uncovered key {k:?}");
                }
            }
        }
        assert!(scale > 1e-3 && err <= 1e-12 * scale, "dim {dim} ks {ks:?}: err {err:e} scale {scale:e}");
    }
}

#[test]
fn resonant_pair_obeys_k_class_identities() {
    let (bg, table) = setup(1, 256, &RESONANT, BackgroundPreset::default());
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let frame = bg.frame();
    let mut checked = 0;
    for term in terms.resonant() {
        let sum = term.harmonic.iter().sum::<i8>() == 2;
        let k = term.real_form();
        if sum {
            assert!(k.iter().flatten().all(|z| z.norm() <= 1e-14));
            assert!(term.kg.v.iter().all(|z| z.norm() <= 1e-14));
        } else {
            let low = frame.covector(&term.harmonic);
            let dot: Vec<C64> = (0..bg.grid.npts()).map(|p| (0..2).map(|b| low[b] * k[b][p]).sum()).collect();
            assert!(max_abs(&dot) <= 1e-14 * max_abs(&k[0]).max(1.0));
            // KG terms vanish by polarisation for collinear phases.
            assert!(max_abs(&term.kg.v) <= 1e-14);
        }
        checked += 1;
    }
    assert_eq!(checked, 3);
}

#[test]
fn missing_klein_gordon_amplitude_gives_no_maxwell_interaction() {
    let preset = BackgroundPreset { psi_amp: 0.0, ..Default::default() };
    let (bg, table) = setup(1, 128, &SEPARATED, preset);
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    assert!(terms.terms.iter().flat_map(|t| &t.maxwell).all(|j| j.v.iter().all(|z| z.norm() == 0.0)));
}

#[test]
fn cascade_slots_cancel() {
    for ks in [RESONANT, SEPARATED] {
        let (bg, _) = setup(1, 256, &ks, BackgroundPreset::default());
        let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
        for row in cascade_ledger(&res) {
            assert!(row.relative() <= 1e-6, "{row:?}");
        }
    }
}

#[test]
fn elliptic_piece_is_absent_without_separated_pairs() {
    let (bg, table) = setup(1, 128, &RESONANT, BackgroundPreset::default());
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let e = build_e_ell(&terms, &table, &bg.frame()).unwrap();
    assert!(e.values().iter().all(|f| f.terms.is_empty()));
}

#[test]
fn elliptic_piece_inverts_separated_interactions() {
    let (bg, table) = setup(1, 256, &SEPARATED, BackgroundPreset::default());
    let frame = bg.frame();
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let e = build_e_ell(&terms, &table, &frame).unwrap();
    // The defect has no O(1) part left.
    for f in e.defect(&terms, &frame) {
        for (k, v) in &f.terms {
            assert!(k.p > 0 || max_abs(v) < 1e-12, "{k:?}");
        }
    }
    let norm = |l: f64| osc_sobolev_norm(&e.values(), &frame, l, 0.5, 0.0);
    let defect = |l: f64| osc_sobolev_norm(&e.defect(&terms, &frame), &frame, l, 0.5, 0.0);
    let s_norm = (norm(0.1) / norm(0.05)).log2();
    let s_def = (defect(0.1) / defect(0.05)).log2();
    assert!((s_norm - 2.0).abs() < 0.2, "{s_norm}");
    assert!((s_def - 1.0).abs() < 0.2, "{s_def}");
}

#[test]
fn residual_decomposition_is_linear_in_the_subtraction() {
    let (bg, table) = setup(1, 128, &SEPARATED, BackgroundPreset::default());
    let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let once = subtract_interactions(&res, &terms, 1.0);
    let twice = subtract_interactions(&res, &terms, 2.0);
    let (xa, xp) = terms.to_osc(|_| true);
    let xi: Vec<Osc> = xa.into_iter().chain(std::iter::once(xp)).collect();
    for ((o, t), x) in once.iter().zip(&twice).zip(&xi) {
        for term in &terms.terms {
            let k = term.key();
            let flipped = t.coeff(&k).sub(&o.coeff(&k).sub(&x.coeff(&k)));
            assert!(max_abs(&flipped) <= 1e-12);
        }
    }
}

#[test]
fn single_phase_has_no_interaction_part() {
    let (bg, table) = setup(1, 128, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let d = residual_decompose(&res, &terms, 0.05);
    assert_eq!(d.interaction, 0.0);
    assert!(d.remainder > 0.0 && d.gauge > 0.0);
}

#[test]
fn zero_amplitudes_leave_no_remainder() {
    let preset = BackgroundPreset { psi_amp: 0.0, w_amp: [0.0, 0.0], ..Default::default() };
    let (bg, table) = setup(1, 256, &[[1.0, 0.0, 0.0]], preset);
    let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
    let terms = interaction_terms_at(&bg, &table, 0.5).unwrap();
    let d = residual_decompose(&res, &terms, 0.05);
    assert!(d.remainder <= 1e-6 && d.gauge <= 1e-6, "{d:?}");
}

#[test]
fn symbolic_residual_matches_resolved_grid() {
    let (bg, table) = setup(1, 1024, &SEPARATED, BackgroundPreset::default());
    let lambda = 0.5;
    let fo = assemble_first_order(&bg, 0.5, lambda).unwrap();
    let rep = residual_kgml(&fo.a, &fo.phi).unwrap();
    let res = symbolic_residual(&first_order_at(&bg, 0.5).unwrap());
    let frame = bg.frame();
    let t = fo.t;
    let ma: Vec<Vec<C64>> = res.maxwell().iter().map(|f| f.eval(&frame, lambda, t)).collect();
    let kg = res.kg().eval(&frame, lambda, t);
    let ga = res.gauge().eval(&frame, lambda, t);
    let g = bg.grid;
    let rel = |a: f64, b: f64| a / b.max(1e-300);
    let em = l2_norm_comps(&g, &rep.maxwell.comps().iter().zip(&ma).map(|(x, y)| x.sub(y)).collect::<Vec<_>>());
    assert!(rel(em, rep.maxwell_norm) < 1e-3, "maxwell {em:e} / {:e}", rep.maxwell_norm);
    let ek = l2_norm(&g, &rep.kg.comp(0).to_vec().sub(&kg));
    assert!(rel(ek, rep.kg_norm) < 1e-3, "kg {ek:e} / {:e}", rep.kg_norm);
    let eg = l2_norm(&g, &rep.gauge.comp(0).to_vec().sub(&ga));
    assert!(rel(eg, rep.gauge_norm) < 1e-3, "gauge {eg:e} / {:e}", rep.gauge_norm);
    let _ = table;
}

#[test]
fn vanishing_fields_have_zero_residual() {
    let g = Grid::new(1, 64, 16.0, 0.1).unwrap();
    let a = FieldHistory::from_fn(g, 2, 0.0, |_, _| vec![C64::new(0.0, 0.0); 2]).unwrap();
    let p = FieldHistory::from_fn(g, 1, 0.0, |_, _| vec![C64::new(0.0, 0.0)]).unwrap();
    let r = residual_kgml(&a, &p).unwrap();
    assert_eq!((r.maxwell_norm, r.kg_norm, r.gauge_norm), (0.0, 0.0, 0.0));
}

#[test]
fn electromagnetic_plane_wave_solves_kgml() {
    let g = Grid::new(2, 64, 2.0 * std::f64::consts::PI, 0.05).unwrap();
    // k = (1, 0), polarisation P = (0, 0, 1) with k·P = 0.
    let a = FieldHistory::from_fn(g, 3, 0.3, |t, x| {
        vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new((x[0] - t).cos(), 0.0)]
    })
    .unwrap();
    let p = FieldHistory::from_fn(g, 1, 0.3, |_, _| vec![C64::new(0.0, 0.0)]).unwrap();
    let r = residual_kgml(&a, &p).unwrap();
    assert!(r.maxwell_norm < 1e-4 && r.gauge_norm < 1e-12 && r.kg_norm == 0.0, "{} {}", r.maxwell_norm, r.gauge_norm);
}

#[test]
fn background_residual_is_the_backreaction() {
    let (bg, _) = setup(1, 512, &[[1.0, 0.0, 0.0]], BackgroundPreset::default());
    let win = bg.window_at(0.5).unwrap();
    let g = bg.grid;
    let hist = |f: &dyn Fn(&BgLevel) -> Vec<Vec<C64>>| {
        let s = |l: &BgLevel| FieldArray::new(g, f(l)).unwrap();
        FieldHistory::new(s(&win.levels[1]), s(&win.levels[2]), s(&win.levels[3]), win.t).unwrap()
    };
    let a = hist(&|l| l.a.clone());
    let p = hist(&|l| vec![l.phi.clone()]);
    let rep = residual_kgml(&a, &p).unwrap();
    let up = upper_gradient(&[1.0, 0.0, 0.0], 1);
    let psi = &win.center().psi[0];
    let want: Vec<Vec<C64>> = up.iter().map(|u| psi.iter().map(|z| C64::new(u * z.norm_sqr(), 0.0)).collect()).collect();
    let diff: Vec<Vec<C64>> = rep.maxwell.comps().iter().zip(&want).map(|(x, y)| x.sub(y)).collect();
    let rel = l2_norm_comps(&g, &diff) / l2_norm_comps(&g, &want);
    assert!(rel < 1e-3, "{rel:e}");
}
