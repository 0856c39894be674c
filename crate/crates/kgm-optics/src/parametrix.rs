//! First-order WKB expansion, cross-phase interaction terms, the elliptic
//! inversion of non-resonant interactions, and KGML residuals.
//!
//! The expansion is
//!
//! ```text
//! A₁^α = A₀^α + λ^{1/2} Σ_A Re(e^{iu_A/λ} conj(W_A^α))
//! Φ₁   = Φ₀   + λ^{1/2} Σ_A e^{iu_A/λ} Ψ_A.
//! ```
//!
//! Residuals are written `R = □F − 𝒩(F)` and computed symbolically in the
//! oscillation (see [`crate::fields::osc`]), so that the coefficient of every
//! power of λ and every harmonic can be inspected separately. Interaction
//! terms are stored in the same convention: `Ξ̃ = Σ_n c_n e^{iθ_n/λ}` is the
//! `O(1)` cross-harmonic part of `R`.

use serde::{Deserialize, Serialize};

use crate::background::{lower_gradient, upper_gradient, BackgroundState, BgJets, BgLevel};
use crate::fields::algebra::{kgml_rhs, Algebra};
use crate::fields::osc::{osc_sobolev_norm, Jet, Key, Osc, OscJet, PlaneFrame, MAX_PHASES};
use crate::fields::{dalembert, l2_norm, l2_norm_comps, mdot, same_grid, spectral, FieldArray, FieldHistory, Grid};
use crate::phases::{InteractionTable, PairClass};
use crate::{Error, Result, C64};

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const HALF: C64 = C64 { re: 0.5, im: 0.0 };

/// First-order expansion with time jets on every coefficient.
#[derive(Clone, Debug)]
pub struct FirstOrderJets {
    /// Harmonic frame of the phases.
    pub frame: PlaneFrame,
    /// Time.
    pub t: f64,
    /// `A₁^α`, α = 0..=dim.
    pub a: Vec<OscJet>,
    /// `Φ₁`.
    pub phi: OscJet,
}

fn expand(jets: &BgJets, grid: Grid) -> (Vec<OscJet>, OscJet) {
    let mut a = Vec::with_capacity(grid.dim + 1);
    for c in 0..=grid.dim {
        let mut f = OscJet::zero(grid);
        f.add_term(Key::smooth(0), &jets.a[c], ONE);
        for (idx, w) in jets.w.iter().enumerate() {
            f.add_term(Key::single(idx, 1, 1), &w[c].conj(), HALF);
            f.add_term(Key::single(idx, -1, 1), &w[c], HALF);
        }
        a.push(f);
    }
    let mut phi = OscJet::zero(grid);
    phi.add_term(Key::smooth(0), &jets.phi, ONE);
    for (idx, psi) in jets.psi.iter().enumerate() {
        phi.add_term(Key::single(idx, 1, 1), psi, ONE);
    }
    (a, phi)
}

/// Build the symbolic expansion from background jets.
pub fn first_order_jets(jets: &BgJets, frame: &PlaneFrame, grid: Grid) -> FirstOrderJets {
    let (a, phi) = expand(jets, grid);
    FirstOrderJets { frame: frame.clone(), t: jets.t, a, phi }
}

/// Symbolic (value-only) expansion of one background level.
pub fn first_order_values(level: &BgLevel, grid: Grid) -> (Vec<Osc>, Osc) {
    let jets = BgJets {
        t: level.t,
        a: level.a.iter().map(|v| Jet::constant(v.clone())).collect(),
        phi: Jet::constant(level.phi.clone()),
        psi: level.psi.iter().map(|v| Jet::constant(v.clone())).collect(),
        w: level.w.iter().map(|c| c.iter().map(|v| Jet::constant(v.clone())).collect()).collect(),
    };
    let (a, phi) = expand(&jets, grid);
    (a.iter().map(OscJet::value).collect(), phi.value())
}

/// `A₁`, `Φ₁` sampled on the grid at `t − dt, t, t + dt`.
#[derive(Clone, Debug)]
pub struct FirstOrderExpansion {
    /// Wavelength parameter.
    pub lambda: f64,
    /// Middle time.
    pub t: f64,
    /// `A₁^α` history.
    pub a: FieldHistory,
    /// `Φ₁` history.
    pub phi: FieldHistory,
}

/// Assemble `A₁`, `Φ₁` pointwise at three time levels around a checkpoint.
pub fn assemble_first_order(bg: &BackgroundState, t: f64, lambda: f64) -> Result<FirstOrderExpansion> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("λ must be positive, got {lambda}")));
    }
    let win = bg.window_at(t)?;
    let frame = bg.frame();
    let grid = bg.grid;
    let sample = |level: &BgLevel| -> Result<(FieldArray, FieldArray)> {
        let (a, phi) = first_order_values(level, grid);
        let a = FieldArray::new(grid, a.iter().map(|f| f.eval(&frame, lambda, level.t)).collect())?;
        let phi = FieldArray::scalar(grid, phi.eval(&frame, lambda, level.t))?;
        Ok((a, phi))
    };
    let (a0, p0) = sample(&win.levels[1])?;
    let (a1, p1) = sample(&win.levels[2])?;
    let (a2, p2) = sample(&win.levels[3])?;
    Ok(FirstOrderExpansion {
        lambda,
        t: win.t,
        a: FieldHistory::new(a0, a1, a2, win.t)?,
        phi: FieldHistory::new(p0, p1, p2, win.t)?,
    })
}

/// Symbolic KGML residual of the first-order expansion, with the two sides
/// of each equation kept apart for relative sizing.
#[derive(Clone, Debug)]
pub struct SymbolicResidual {
    /// Harmonic frame.
    pub frame: PlaneFrame,
    /// Time.
    pub t: f64,
    /// `□A₁^β`.
    pub box_a: Vec<Osc>,
    /// `𝒩_A^β(A₁, Φ₁)`.
    pub n_a: Vec<Osc>,
    /// `□Φ₁`.
    pub box_phi: Osc,
    /// `𝒩_Φ(A₁, Φ₁)`.
    pub n_phi: Osc,
    /// `∂_αA₁^α` split per α (summed in [`SymbolicResidual::gauge`]).
    pub div_terms: Vec<Osc>,
}

impl SymbolicResidual {
    /// `R_A^β = □A₁^β − 𝒩_A^β`.
    pub fn maxwell(&self) -> Vec<Osc> {
        self.box_a.iter().zip(&self.n_a).map(|(b, n)| b.sub(n)).collect()
    }

    /// `R_Φ = □Φ₁ − 𝒩_Φ`.
    pub fn kg(&self) -> Osc {
        self.box_phi.sub(&self.n_phi)
    }

    /// `R_L = ∂_αA₁^α`.
    pub fn gauge(&self) -> Osc {
        let mut g = self.div_terms[0].clone();
        for d in &self.div_terms[1..] {
            g = g.add(d);
        }
        g
    }
}

/// Evaluate the KGML residual of a first-order expansion symbolically.
pub fn symbolic_residual(fo: &FirstOrderJets) -> SymbolicResidual {
    let frame = &fo.frame;
    let a: Vec<Osc> = fo.a.iter().map(OscJet::value).collect();
    let phi = fo.phi.value();
    let dphi = fo.phi.grad(frame);
    let (n_a, n_phi) = kgml_rhs(&a, &phi, &dphi);
    SymbolicResidual {
        frame: frame.clone(),
        t: fo.t,
        box_a: fo.a.iter().map(|f| f.dalembert(frame)).collect(),
        n_a,
        box_phi: fo.phi.dalembert(frame),
        n_phi,
        div_terms: fo.a.iter().enumerate().map(|(al, f)| f.deriv(frame, al)).collect(),
    }
}

/// Coefficient slot of the plug-in cascade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    /// `λ^{-3/2}` terms (eikonal equation).
    Eikonal,
    /// `λ^{-1/2}` terms (transport equations, polarization in the gauge).
    Transport,
    /// `O(1)` non-oscillating terms (background equations with backreaction).
    Smooth,
    /// `O(1)` harmonics of a single phase (cancelled by polarization).
    SelfHarmonic,
    /// `O(1)` cross-phase harmonics (`Ξ̃`).
    Interaction,
    /// `O(λ^{1/2})` and smaller.
    Remainder,
}

/// Slot of a key.
pub fn slot_of(key: &Key) -> Slot {
    match key.p {
        p if p <= -3 => Slot::Eikonal,
        -2 | -1 => Slot::Transport,
        0 if key.is_smooth() => Slot::Smooth,
        0 if key.phase_count() == 1 => Slot::SelfHarmonic,
        0 => Slot::Interaction,
        _ => Slot::Remainder,
    }
}

fn slot_norm(fields: &[Osc], slot: Slot) -> f64 {
    fields
        .iter()
        .flat_map(|f| f.terms.iter().filter(|(k, _)| slot_of(k) == slot).map(move |(_, v)| l2_norm(&f.grid, v).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// One row of the cascade ledger.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlotNorm {
    /// Equation: `maxwell`, `kg` or `gauge`.
    pub equation: String,
    /// Slot.
    pub slot: Slot,
    /// L² norm of the residual's coefficients in the slot.
    pub residual: f64,
    /// Largest of the slot norms of the individual terms of the equation.
    pub scale: f64,
}

impl SlotNorm {
    /// `residual / scale` (0 when the slot is empty on both sides).
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Coefficient norms of every slot that must cancel identically: eikonal,
/// transport, non-oscillating and self-harmonic, for both equations and the
/// gauge.
pub fn cascade_ledger(res: &SymbolicResidual) -> Vec<SlotNorm> {
    let mut rows = Vec::new();
    let slots = [Slot::Eikonal, Slot::Transport, Slot::Smooth, Slot::SelfHarmonic];
    let maxwell = res.maxwell();
    let kg = [res.kg()];
    let gauge = [res.gauge()];
    for slot in slots {
        let scale_a = slot_norm(&res.box_a, slot).max(slot_norm(&res.n_a, slot));
        rows.push(SlotNorm { equation: "maxwell".into(), slot, residual: slot_norm(&maxwell, slot), scale: scale_a });
        let scale_p = slot_norm(std::slice::from_ref(&res.box_phi), slot).max(slot_norm(std::slice::from_ref(&res.n_phi), slot));
        rows.push(SlotNorm { equation: "kg".into(), slot, residual: slot_norm(&kg, slot), scale: scale_p });
        let scale_g = res.div_terms.iter().map(|d| slot_norm(std::slice::from_ref(d), slot)).fold(0.0, f64::max);
        rows.push(SlotNorm { equation: "gauge".into(), slot, residual: slot_norm(&gauge, slot), scale: scale_g });
    }
    rows
}

/// Cross-phase interaction coefficient at one combined harmonic.
#[derive(Clone, Debug)]
pub struct InteractionTerm {
    /// First phase of the pair (declaration order, `a < b`).
    pub a: usize,
    /// Second phase of the pair.
    pub b: usize,
    /// Class of the pair.
    pub class: PairClass,
    /// Harmonic multi-index (`e_a + e_b`, `e_a − e_b` or `e_b − e_a`).
    pub harmonic: [i8; MAX_PHASES],
    /// Maxwell coefficients `c^β` with time jets.
    pub maxwell: Vec<Jet>,
    /// Klein–Gordon coefficient with time jets.
    pub kg: Jet,
}

impl InteractionTerm {
    /// Key of the term in the `O(1)` slot.
    pub fn key(&self) -> Key {
        Key { n: self.harmonic, p: 0 }
    }

    /// Vector amplitude in the real form `Re(conj(K) e^{iθ/λ})` used for a
    /// real potential: `K = 2 conj(c)` on the harmonic that carries it.
    pub fn real_form(&self) -> Vec<Vec<C64>> {
        self.maxwell.iter().map(|j| j.v.iter().map(|z| 2.0 * z.conj()).collect()).collect()
    }
}

/// All interaction terms of a phase set at one time.
#[derive(Clone, Debug)]
pub struct InteractionTerms {
    /// Grid.
    pub grid: Grid,
    /// Time.
    pub t: f64,
    /// Per-harmonic coefficients.
    pub terms: Vec<InteractionTerm>,
}

fn dot_lower(x: &[Jet], du: &[f64]) -> Jet {
    let n = x[0].v.len();
    x.iter().zip(du).fold(Jet::zero(n), |acc, (j, &g)| acc.plus(j, C64::new(g, 0.0)))
}

/// Expand the `O(1)` cross-phase products of the plug-in identities into
/// harmonic coefficients.
///
/// With `R = □ − 𝒩`, the pair `(A, B)` contributes
///
/// ```text
/// Maxwell: −(∂^βu_A + ∂^βu_B) Re(e^{i(u_A−u_B)/λ} Ψ_A conj Ψ_B)
/// KG:      −[(conj W_A·∂u_B)Ψ_B + (conj W_B·∂u_A)Ψ_A] e^{i(u_A+u_B)/λ}
///          − (W_B·∂u_A)Ψ_A e^{i(u_A−u_B)/λ} − (W_A·∂u_B)Ψ_B e^{i(u_B−u_A)/λ}.
/// ```
pub fn interaction_terms(jets: &BgJets, ks: &[[f64; 3]], table: &InteractionTable, grid: Grid) -> InteractionTerms {
    let dim = grid.dim;
    let n = grid.npts();
    let mut terms = Vec::new();
    for pair in &table.pairs {
        let (a, b) = (pair.a, pair.b);
        let (ua, ub) = (upper_gradient(&ks[a], dim), upper_gradient(&ks[b], dim));
        let (la, lb) = (lower_gradient(&ks[a], dim), lower_gradient(&ks[b], dim));
        let (psa, psb) = (&jets.psi[a], &jets.psi[b]);
        let cross = psa.mul(&psb.conj());
        let wa_conj: Vec<Jet> = jets.w[a].iter().map(Jet::conj).collect();
        let wb_conj: Vec<Jet> = jets.w[b].iter().map(Jet::conj).collect();
        let m = C64::new(-1.0, 0.0);
        // e_a + e_b
        let kg_sum = dot_lower(&wa_conj, &lb).mul(psb).plus(&dot_lower(&wb_conj, &la).mul(psa), ONE).scale(m);
        let mut h = [0i8; MAX_PHASES];
        h[a] += 1;
        h[b] += 1;
        terms.push(InteractionTerm {
            a,
            b,
            class: pair.class,
            harmonic: h,
            maxwell: vec![Jet::zero(n); dim + 1],
            kg: kg_sum,
        });
        // e_a − e_b and its conjugate harmonic
        let mw: Vec<Jet> = (0..=dim).map(|be| cross.scale(C64::new(-0.5 * (ua[be] + ub[be]), 0.0))).collect();
        let mut h = [0i8; MAX_PHASES];
        h[a] += 1;
        h[b] -= 1;
        terms.push(InteractionTerm {
            a,
            b,
            class: pair.class,
            harmonic: h,
            kg: dot_lower(&jets.w[b], &la).mul(psa).scale(m),
            maxwell: mw.clone(),
        });
        let hn = h.map(|v| -v);
        terms.push(InteractionTerm {
            a,
            b,
            class: pair.class,
            harmonic: hn,
            kg: dot_lower(&jets.w[a], &lb).mul(psb).scale(m),
            maxwell: mw.iter().map(Jet::conj).collect(),
        });
    }
    InteractionTerms { grid, t: jets.t, terms }
}

/// [`interaction_terms`] at the background checkpoint nearest `t`.
pub fn interaction_terms_at(bg: &BackgroundState, table: &InteractionTable, t: f64) -> Result<InteractionTerms> {
    let win = bg.window_at(t)?;
    Ok(interaction_terms(&win.jets(), &bg.ks, table, bg.grid))
}

/// Symbolic expansion at the background checkpoint nearest `t`.
pub fn first_order_at(bg: &BackgroundState, t: f64) -> Result<FirstOrderJets> {
    let win = bg.window_at(t)?;
    Ok(first_order_jets(&win.jets(), &bg.frame(), bg.grid))
}

impl InteractionTerms {
    /// `Ξ̃` restricted to pairs accepted by `keep`, as symbolic fields
    /// (Maxwell components, Klein–Gordon).
    pub fn to_osc<F: Fn(&InteractionTerm) -> bool>(&self, keep: F) -> (Vec<Osc>, Osc) {
        let ncomp = self.grid.dim + 1;
        let mut a = vec![Osc::zero(self.grid); ncomp];
        let mut phi = Osc::zero(self.grid);
        for term in self.terms.iter().filter(|t| keep(t)) {
            for (c, j) in term.maxwell.iter().enumerate() {
                a[c].add_term(term.key(), &j.v, ONE);
            }
            phi.add_term(term.key(), &term.kg.v, ONE);
        }
        (a, phi)
    }

    /// Terms of resonant pairs.
    pub fn resonant(&self) -> impl Iterator<Item = &InteractionTerm> {
        self.terms.iter().filter(|t| t.class == PairClass::Resonant)
    }
}

/// Largest violations of the resonant-pair identities.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct KClassReport {
    /// Number of resonant harmonics checked.
    pub checked: usize,
    /// `max |K_{A+B}|` and `max |∂(u_A+u_B)-harmonic KG coefficient|`.
    pub sum_harmonic: f64,
    /// `max |∂(u_A−u_B)·K_{A−B}|` over both difference harmonics.
    pub orthogonality: f64,
    /// `max |K_{A−B}|`, the scale the defects are measured against.
    pub scale: f64,
}

impl KClassReport {
    /// Both defects relative to `max(scale, 1)`.
    pub fn relative(&self) -> f64 {
        self.sum_harmonic.max(self.orthogonality) / self.scale.max(1.0)
    }
}

/// Check `K_{A+B} ≡ 0` and `∂(u_A−u_B)·K_{A−B} ≡ 0` on every resonant term.
pub fn k_class_defects(terms: &InteractionTerms, frame: &PlaneFrame) -> KClassReport {
    let mut rep = KClassReport::default();
    let maxabs = |v: &[C64]| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for term in terms.resonant() {
        rep.checked += 1;
        let k = term.real_form();
        if term.harmonic.iter().sum::<i8>() == 2 {
            let m = k.iter().map(|c| maxabs(c)).fold(maxabs(&term.kg.v), f64::max);
            rep.sum_harmonic = rep.sum_harmonic.max(m);
        } else {
            let low = frame.covector(&term.harmonic);
            let dot: Vec<C64> = (0..terms.grid.npts()).map(|p| low.iter().zip(&k).map(|(l, c)| *l * c[p]).sum()).collect();
            rep.orthogonality = rep.orthogonality.max(maxabs(&dot));
            rep.scale = k.iter().map(|c| maxabs(c)).fold(rep.scale, f64::max);
        }
    }
    rep
}

/// Elliptic error piece `E^ell` with time jets on its coefficients.
#[derive(Clone, Debug)]
pub struct EllipticCorrection {
    /// `(E^ell)^α`.
    pub a: Vec<OscJet>,
    /// `ℰ^ell`.
    pub phi: OscJet,
}

/// Invert the separated-pair interactions elliptically:
/// `E^ell = λ² Σ_n c_n e^{iθ_n/λ} / (∂θ_n·∂θ_n)`, so that
/// `□E^ell = −Σ_n c_n e^{iθ_n/λ} + O(λ)` cancels them in the error equation.
pub fn build_e_ell(terms: &InteractionTerms, table: &InteractionTable, frame: &PlaneFrame) -> Result<EllipticCorrection> {
    let grid = terms.grid;
    let mut a = vec![OscJet::zero(grid); grid.dim + 1];
    let mut phi = OscJet::zero(grid);
    for term in terms.terms.iter().filter(|t| t.class == PairClass::Separated) {
        let cov = frame.covector(&term.harmonic);
        let denom = mdot(&cov, &cov);
        if denom.abs() < 0.5 * table.eta0 {
            return Err(Error::PhaseSet(format!(
                "combined phase of pair ({}, {}) has |∂θ·∂θ| = {denom:e} below η₀/2 = {:e}",
                term.a,
                term.b,
                0.5 * table.eta0
            )));
        }
        let key = Key { n: term.harmonic, p: 4 };
        let inv = C64::new(1.0 / denom, 0.0);
        for (c, j) in term.maxwell.iter().enumerate() {
            a[c].add_term(key, j, inv);
        }
        phi.add_term(key, &term.kg, inv);
    }
    Ok(EllipticCorrection { a, phi })
}

impl EllipticCorrection {
    /// Values as symbolic fields (vector components followed by the scalar).
    pub fn values(&self) -> Vec<Osc> {
        self.a.iter().map(OscJet::value).chain(std::iter::once(self.phi.value())).collect()
    }

    /// Inversion defect `□E^ell + Σ_{separated} c_n e^{iθ_n/λ}`.
    pub fn defect(&self, terms: &InteractionTerms, frame: &PlaneFrame) -> Vec<Osc> {
        let (sa, sp) = terms.to_osc(|t| t.class == PairClass::Separated);
        self.a
            .iter()
            .zip(&sa)
            .map(|(e, s)| e.dalembert(frame).add(s))
            .chain(std::iter::once(self.phi.dalembert(frame).add(&sp)))
            .collect()
    }
}

/// Norms of the residual split into the interaction part and the remainder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    /// Wavelength parameter.
    pub lambda: f64,
    /// `‖R − Ξ̃‖_{L²}` over both equations.
    pub remainder: f64,
    /// `‖Ξ̃‖_{L²}`.
    pub interaction: f64,
    /// `‖R_L‖_{L²}`.
    pub gauge: f64,
}

/// `R − factor·Ξ̃` for both equations (Maxwell components, then KG).
pub fn subtract_interactions(res: &SymbolicResidual, terms: &InteractionTerms, factor: f64) -> Vec<Osc> {
    let (xa, xp) = terms.to_osc(|_| true);
    let f = C64::new(-factor, 0.0);
    res.maxwell()
        .iter()
        .zip(&xa)
        .map(|(r, x)| r.add(&x.scale(f)))
        .chain(std::iter::once(res.kg().add(&xp.scale(f))))
        .collect()
}

/// Split the residual into `Ξ̃` and the remainder, and measure both (and the
/// gauge residual) in L² at wavelength parameter λ.
pub fn residual_decompose(res: &SymbolicResidual, terms: &InteractionTerms, lambda: f64) -> Decomposition {
    let rem = subtract_interactions(res, terms, 1.0);
    let (xa, xp) = terms.to_osc(|_| true);
    let mut xi = xa;
    xi.push(xp);
    let f = &res.frame;
    Decomposition {
        lambda,
        remainder: osc_sobolev_norm(&rem, f, lambda, res.t, 0.0),
        interaction: osc_sobolev_norm(&xi, f, lambda, res.t, 0.0),
        gauge: osc_sobolev_norm(&[res.gauge()], f, lambda, res.t, 0.0),
    }
}

/// Grid residuals of KGML for sampled histories.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// `R_A^β = □A^β + Im(Φ conj ∂^βΦ) − A^β|Φ|²`.
    pub maxwell: FieldArray,
    /// `R_Φ = □Φ + 2iA^α∂_αΦ − A^αA_αΦ`.
    pub kg: FieldArray,
    /// `R_L = ∂_αA^α`.
    pub gauge: FieldArray,
    /// `‖R_A‖_{L²}`.
    pub maxwell_norm: f64,
    /// `‖R_Φ‖_{L²}`.
    pub kg_norm: f64,
    /// `‖R_L‖_{L²}`.
    pub gauge_norm: f64,
}

/// KGML residuals of fully sampled fields (second-order centred time
/// differences, spectral space derivatives). The fields must be resolved by
/// the grid; for unresolved oscillations use [`symbolic_residual`].
pub fn residual_kgml(a: &FieldHistory, phi: &FieldHistory) -> Result<ResidualReport> {
    let grid = *a.grid();
    same_grid(&grid, phi.grid())?;
    let ncomp = grid.dim + 1;
    if a.curr.ncomp() != ncomp || phi.curr.ncomp() != 1 {
        return Err(Error::Config("residual_kgml expects a (dim+1)-vector and a scalar".into()));
    }
    let av: Vec<Vec<C64>> = a.curr.comps().to_vec();
    let pv = phi.curr.comp(0).to_vec();
    let mut dphi = vec![phi.dt_comp(0)];
    dphi.extend(spectral::gradient(&grid, &pv));
    let (na, np) = kgml_rhs(&av, &pv, &dphi);
    let box_a = dalembert(a)?;
    let box_p = dalembert(phi)?;
    let maxwell: Vec<Vec<C64>> = (0..ncomp).map(|c| box_a.comp(c).to_vec().sub(&na[c])).collect();
    let kg = box_p.comp(0).to_vec().sub(&np);
    let mut div = a.dt_comp(0);
    for i in 1..ncomp {
        div = div.add(&spectral::deriv(&grid, &av[i], i - 1));
    }
    Ok(ResidualReport {
        maxwell_norm: l2_norm_comps(&grid, &maxwell),
        kg_norm: l2_norm(&grid, &kg),
        gauge_norm: l2_norm(&grid, &div),
        maxwell: FieldArray::new(grid, maxwell)?,
        kg: FieldArray::scalar(grid, kg)?,
        gauge: FieldArray::scalar(grid, div)?,
    })
}

#[cfg(test)]
mod tests;
