//! Evolution of the error term `Z = A_λ − A₁` through its structured
//! parametrix:
//!
//! ```text
//! Z_A = Σ_A λ Re(e^{iu_A/λ} conj W⁺_A) + Σ_{res} λ Re(e^{iθ/λ} conj W̆) + E^ell + E^evo
//! Z_Φ = Σ_A λ e^{iu_A/λ} Ψ⁺_A         + Σ_{res} λ e^{iθ/λ} Ψ̆          + ℰ^ell + ℰ^evo
//! ```
//!
//! * `F⁺_A = (W⁺_A, Ψ⁺_A)` is transported along the phase `u_A` and couples
//!   to `E^evo` through the `λ^{-1/2}` background-interaction terms and the
//!   low-frequency part `Π₋` of the quadratic terms;
//! * `G⁺_A` is the auxiliary field standing for `□F⁺_A`, transported by the
//!   `□` of the `F⁺` equations (the commutator `[ℒ_A, □]` vanishes for plane
//!   waves);
//! * `F̆ = (W̆, Ψ̆)` is transported along each combined phase `θ = u_A ± u_B`
//!   of a resonant pair and absorbs its interaction coefficient;
//! * `E^evo` solves a wave equation whose source is *defined by subtraction*:
//!   the exact KGML nonlinearity of the assembled fields minus everything the
//!   other parameters already account for.
//!
//! Background, `E^evo`, `F⁺`, `G⁺` and `F̆` are advanced together by one
//! classical Runge–Kutta step with spectral space derivatives, so every
//! coupling is treated at fourth order in time.
//!
//! Transport along a null covector `ℓ` (lower index) reads
//! `ℒc = 2ℓ^α∂_αc = f`, i.e. `∂_tc = (2ℓ_i∂_ic − f)/(2ℓ₀)`.

use serde::{Deserialize, Serialize};

use crate::background::{state_jets, BackgroundInitialData, BgJets, BgState, Comps};
use crate::fields::osc::{Osc, PlaneFrame, MAX_PHASES};
use crate::fields::{l2_norm, l2_norm_comps, mdot, projector_cutoff, spectral, Grid};
use crate::init_data::ErrorParameterInit;
use crate::parametrix::{build_e_ell, first_order_jets, interaction_terms, InteractionTerms};
use crate::phases::{InteractionTable, PairClass};
use crate::{Error, Result, C64};

use crate::fields::algebra::kgml_rhs;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

fn lin(x: &[C64], s: f64, y: &[C64]) -> Vec<C64> {
    x.iter().zip(y).map(|(a, b)| a + s * b).collect()
}

fn lin_c(x: &Comps, s: f64, y: &Comps) -> Comps {
    x.iter().zip(y).map(|(a, b)| lin(a, s, b)).collect()
}

fn real_part(v: &mut [C64]) {
    v.iter_mut().for_each(|z| z.im = 0.0);
}

/// `e^{iθ_n(t,x)/λ}` sampled on the grid.
pub fn plane_factor(grid: &Grid, frame: &PlaneFrame, n: &[i8; MAX_PHASES], lambda: f64, t: f64) -> Vec<C64> {
    grid.coords().iter().map(|x| C64::from_polar(1.0, frame.theta(n, t, x) / lambda)).collect()
}

/// Harmonic index of the single phase `A`.
pub fn single_harmonic(a: usize) -> [i8; MAX_PHASES] {
    let mut n = [0i8; MAX_PHASES];
    n[a] = 1;
    n
}

/// `∂_tc` from the transport equation `2ℓ^α∂_αc = f` along the null lower
/// covector `ℓ`.
pub fn transport_dt(grid: &Grid, cov: &[f64], c: &[C64], f: &[C64]) -> Vec<C64> {
    let dim = grid.dim;
    let adv = spectral::apply_symbol(grid, c, |xi, nyq| {
        let mut s = 0.0;
        for i in 0..dim {
            if !nyq[i] {
                s += cov[i + 1] * xi[i];
            }
        }
        C64::new(0.0, 2.0 * s)
    });
    adv.iter().zip(f).map(|(a, b)| (a - b) / (2.0 * cov[0])).collect()
}

/// Everything the `F⁺_A` right-hand side depends on. The right-hand side is
/// a real-quadratic form in these fields, which lets its time derivative and
/// its d'Alembertian be computed exactly by polarisation.
#[derive(Clone, Debug)]
pub struct PlusInputs {
    /// `Φ₀`.
    pub phi0: Vec<C64>,
    /// `A₀^α`.
    pub a0: Comps,
    /// Background amplitude `Ψ_A` of the phase.
    pub psi: Vec<C64>,
    /// `Ψ⁺_A`.
    pub psi_plus: Vec<C64>,
    /// `(E^evo)^α`.
    pub e: Comps,
    /// `ℰ^evo`.
    pub eps: Vec<C64>,
}

impl PlusInputs {
    fn lin(&self, s: f64, o: &PlusInputs) -> PlusInputs {
        PlusInputs {
            phi0: lin(&self.phi0, s, &o.phi0),
            a0: lin_c(&self.a0, s, &o.a0),
            psi: lin(&self.psi, s, &o.psi),
            psi_plus: lin(&self.psi_plus, s, &o.psi_plus),
            e: lin_c(&self.e, s, &o.e),
            eps: lin(&self.eps, s, &o.eps),
        }
    }

    fn map<F: Fn(&[C64]) -> Vec<C64>>(&self, f: F) -> PlusInputs {
        PlusInputs {
            phi0: f(&self.phi0),
            a0: self.a0.iter().map(|c| f(c)).collect(),
            psi: f(&self.psi),
            psi_plus: f(&self.psi_plus),
            e: self.e.iter().map(|c| f(c)).collect(),
            eps: f(&self.eps),
        }
    }
}

/// Right-hand side `(f_W^β, f_Ψ)` of the `F⁺` transport equations.
#[derive(Clone, Debug)]
pub struct PlusRhs {
    /// `f_W^β`.
    pub w: Comps,
    /// `f_Ψ`.
    pub psi: Vec<C64>,
}

impl PlusRhs {
    fn lin(&self, s: f64, o: &PlusRhs) -> PlusRhs {
        PlusRhs { w: lin_c(&self.w, s, &o.w), psi: lin(&self.psi, s, &o.psi) }
    }

    fn scale(&self, s: f64) -> PlusRhs {
        PlusRhs { w: self.w.iter().map(|c| c.iter().map(|v| s * v).collect()).collect(), psi: self.psi.iter().map(|v| s * v).collect() }
    }
}

/// Static data of a coupled solve: grid, phases, interaction table, λ and
/// the projector cut-off `λ^{-κ}`.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    /// Grid.
    pub grid: Grid,
    /// Phase wavevectors.
    pub ks: Vec<[f64; 3]>,
    /// Harmonic frame.
    pub frame: PlaneFrame,
    /// Pair table.
    pub table: InteractionTable,
    /// Wavelength parameter.
    pub lambda: f64,
    /// Projector exponent κ.
    pub kappa: f64,
    /// Cut-off `λ^{-κ}` of `Π₋`.
    pub cutoff: f64,
    /// Resonant combined harmonics `(a, b, e_a ± e_b)` carrying `F̆`.
    pub resonant: Vec<(usize, usize, [i8; MAX_PHASES])>,
}

impl CoupledSystem {
    /// Set up a coupled solve; combined phases of resonant pairs must be
    /// characteristic.
    pub fn new(grid: Grid, ks: &[[f64; 3]], table: &InteractionTable, lambda: f64, kappa: f64) -> Result<Self> {
        let cutoff = projector_cutoff(lambda, kappa)?;
        let frame = PlaneFrame::new(grid.dim, ks.to_vec())?;
        if table.pairs.iter().any(|p| p.class == PairClass::Incoherent) {
            return Err(Error::PhaseSet("incoherent phase pair in a coupled solve".into()));
        }
        let mut resonant = Vec::new();
        for p in table.of_class(PairClass::Resonant) {
            for s in [1i8, -1] {
                let mut n = [0i8; MAX_PHASES];
                n[p.a] = 1;
                n[p.b] = s;
                let cov = frame.covector(&n);
                let q = mdot(&cov, &cov);
                let scale = mdot(&cov[..1], &cov[..1]).max(1.0);
                if q.abs() > 1e-10 * scale {
                    return Err(Error::PhaseSet(format!(
                        "combined phase of resonant pair ({}, {}) is not characteristic: ∂θ·∂θ = {q:e}",
                        p.a, p.b
                    )));
                }
                resonant.push((p.a, p.b, n));
            }
        }
        Ok(CoupledSystem { grid, ks: ks.to_vec(), frame, table: table.clone(), lambda, kappa, cutoff, resonant })
    }

    fn low(&self, f: &[C64]) -> Vec<C64> {
        spectral::low_pass(&self.grid, f, self.cutoff)
    }

    /// Lower covector `∂_αu_A`.
    pub fn cov(&self, a: usize) -> Vec<f64> {
        self.frame.covector(&single_harmonic(a))
    }

    /// Right-hand side of the `F⁺_A` transport equations:
    ///
    /// ```text
    /// ℒ_A W⁺^β = i∂^βu_A [conj(Ψ⁺)Φ₀ + λ^{-1/2} conj(Ψ_A) ℰ + Π₋(conj(Ψ⁺) ℰ)]
    /// ℒ_A Ψ⁺   = −2i ∂_αu_A [A₀^α Ψ⁺ + λ^{-1/2} E^α Ψ_A + Π₋(E^α Ψ⁺)]
    /// ```
    pub fn plus_rhs(&self, a: usize, x: &PlusInputs) -> PlusRhs {
        let cov = self.cov(a);
        let npts = self.grid.npts();
        let dim = self.grid.dim;
        let s = self.lambda.powf(-0.5);
        let mix: Vec<C64> = (0..npts).map(|p| x.psi_plus[p].conj() * x.eps[p]).collect();
        let mix = self.low(&mix);
        let rho: Vec<C64> = (0..npts)
            .map(|p| x.psi_plus[p].conj() * x.phi0[p] + s * x.psi[p].conj() * x.eps[p] + mix[p])
            .collect();
        let edu: Vec<C64> = (0..npts).map(|p| (0..=dim).map(|al| cov[al] * x.e[al][p]).sum()).collect();
        let mix2: Vec<C64> = (0..npts).map(|p| edu[p] * x.psi_plus[p]).collect();
        let mix2 = self.low(&mix2);
        let psi: Vec<C64> = (0..npts)
            .map(|p| {
                let adu: C64 = (0..=dim).map(|al| cov[al] * x.a0[al][p]).sum();
                -2.0 * I * (adu * x.psi_plus[p] + s * edu[p] * x.psi[p] + mix2[p])
            })
            .collect();
        // Upper index: ∂^0u = −∂_0u, ∂^iu = ∂_iu.
        let w = (0..=dim)
            .map(|be| {
                let up = if be == 0 { -cov[0] } else { cov[be] };
                rho.iter().map(|r| I * up * r).collect()
            })
            .collect();
        PlusRhs { w, psi }
    }

    /// Exact time derivative `2B(x, ẋ)` of the quadratic right-hand side.
    pub fn plus_rhs_dt(&self, a: usize, x: &PlusInputs, xdot: &PlusInputs) -> PlusRhs {
        let p = self.plus_rhs(a, &x.lin(1.0, xdot));
        let m = self.plus_rhs(a, &x.lin(-1.0, xdot));
        p.lin(-1.0, &m).scale(0.5)
    }

    /// Exact d'Alembertian of the quadratic right-hand side,
    /// `□Q(x) = 2B(x, □x) − 2Q(∂_tx) + 2Σ_i Q(∂_ix)`.
    pub fn plus_rhs_box(&self, a: usize, x: &PlusInputs, xdot: &PlusInputs, xbox: &PlusInputs) -> PlusRhs {
        let mut out = self.plus_rhs_dt(a, x, xbox);
        out = out.lin(-2.0, &self.plus_rhs(a, xdot));
        for axis in 0..self.grid.dim {
            let xi = x.map(|f| spectral::deriv(&self.grid, f, axis));
            out = out.lin(2.0, &self.plus_rhs(a, &xi));
        }
        out
    }
}

/// Transported amplitudes of one phase.
#[derive(Clone, Debug)]
pub struct PlusSlot {
    /// `W⁺^α`.
    pub w: Comps,
    /// `Ψ⁺`.
    pub psi: Vec<C64>,
    /// `G⁺_W^α` (stands for `□W⁺`).
    pub gw: Comps,
    /// `G⁺_Ψ` (stands for `□Ψ⁺`).
    pub gpsi: Vec<C64>,
}

/// Amplitudes transported along one resonant combined phase.
#[derive(Clone, Debug)]
pub struct ResonantSlot {
    /// First phase of the pair.
    pub a: usize,
    /// Second phase of the pair.
    pub b: usize,
    /// Harmonic `e_a ± e_b`.
    pub harmonic: [i8; MAX_PHASES],
    /// `W̆^α`.
    pub w: Comps,
    /// `Ψ̆`.
    pub psi: Vec<C64>,
}

/// Error parameters at one time. The wave fields `E^evo` are stored with
/// their time derivatives (first-order form of the wave equation).
#[derive(Clone, Debug)]
pub struct ErrorState {
    /// Time.
    pub t: f64,
    /// `(E^evo)^α` (real).
    pub e: Comps,
    /// `∂_t(E^evo)^α`.
    pub edot: Comps,
    /// `ℰ^evo`.
    pub eps: Vec<C64>,
    /// `∂_tℰ^evo`.
    pub epsdot: Vec<C64>,
    /// Per-phase `F⁺`, `G⁺`.
    pub plus: Vec<PlusSlot>,
    /// Per resonant combined harmonic `F̆`.
    pub fab: Vec<ResonantSlot>,
}

impl ErrorState {
    /// All-zero state for a system.
    pub fn zero(sys: &CoupledSystem, t: f64) -> ErrorState {
        let n = sys.grid.npts();
        let nc = sys.grid.dim + 1;
        ErrorState {
            t,
            e: vec![zeros(n); nc],
            edot: vec![zeros(n); nc],
            eps: zeros(n),
            epsdot: zeros(n),
            plus: (0..sys.ks.len())
                .map(|_| PlusSlot { w: vec![zeros(n); nc], psi: zeros(n), gw: vec![zeros(n); nc], gpsi: zeros(n) })
                .collect(),
            fab: sys
                .resonant
                .iter()
                .map(|&(a, b, harmonic)| ResonantSlot { a, b, harmonic, w: vec![zeros(n); nc], psi: zeros(n) })
                .collect(),
        }
    }

    /// `self + h·d`.
    pub fn axpy(&self, h: f64, d: &ErrorState) -> ErrorState {
        ErrorState {
            t: self.t + h,
            e: lin_c(&self.e, h, &d.e),
            edot: lin_c(&self.edot, h, &d.edot),
            eps: lin(&self.eps, h, &d.eps),
            epsdot: lin(&self.epsdot, h, &d.epsdot),
            plus: self
                .plus
                .iter()
                .zip(&d.plus)
                .map(|(x, y)| PlusSlot {
                    w: lin_c(&x.w, h, &y.w),
                    psi: lin(&x.psi, h, &y.psi),
                    gw: lin_c(&x.gw, h, &y.gw),
                    gpsi: lin(&x.gpsi, h, &y.gpsi),
                })
                .collect(),
            fab: self
                .fab
                .iter()
                .zip(&d.fab)
                .map(|(x, y)| ResonantSlot { w: lin_c(&x.w, h, &y.w), psi: lin(&x.psi, h, &y.psi), ..x.clone() })
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &C64> {
        self.e
            .iter()
            .chain(&self.edot)
            .chain(std::iter::once(&self.eps))
            .chain(std::iter::once(&self.epsdot))
            .chain(self.plus.iter().flat_map(|s| s.w.iter().chain(std::iter::once(&s.psi)).chain(&s.gw).chain(std::iter::once(&s.gpsi))))
            .chain(self.fab.iter().flat_map(|s| s.w.iter().chain(std::iter::once(&s.psi))))
            .flatten()
    }

    /// Largest modulus of any stored sample.
    pub fn max_abs(&self) -> f64 {
        self.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Whether every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Assembled fields of one stage: first-order expansion, error term, and the
/// `E^evo` source.
#[derive(Clone, Debug)]
pub struct StageFields {
    /// Time.
    pub t: f64,
    /// `A₁^α`.
    pub a1: Comps,
    /// `∂_tA₁^α`.
    pub a1_t: Comps,
    /// `Φ₁`.
    pub phi1: Vec<C64>,
    /// `∂_tΦ₁`.
    pub phi1_t: Vec<C64>,
    /// `Z_A^α`.
    pub z: Comps,
    /// `∂_tZ_A^α`.
    pub z_t: Comps,
    /// `Z_Φ`.
    pub zeta: Vec<C64>,
    /// `∂_tZ_Φ`.
    pub zeta_t: Vec<C64>,
    /// Maxwell slot of the `E^evo` source.
    pub source_a: Comps,
    /// Klein–Gordon slot of the `E^evo` source.
    pub source_phi: Vec<C64>,
}

/// Time derivatives of a coupled state plus the fields assembled on the way.
#[derive(Clone, Debug)]
pub struct StageEval {
    /// Background rate.
    pub bg: BgState,
    /// Error-parameter rate.
    pub err: ErrorState,
    /// Assembled fields.
    pub fields: StageFields,
}

/// Data of the resonant-slot transport at one stage.
struct FabStage {
    rhs_w: Comps,
    rhs_psi: Vec<C64>,
    box_w: Comps,
    box_psi: Vec<C64>,
    w_t: Comps,
    psi_t: Vec<C64>,
}

fn find_term<'a>(terms: &'a InteractionTerms, n: &[i8; MAX_PHASES]) -> Option<&'a crate::parametrix::InteractionTerm> {
    terms.terms.iter().find(|t| &t.harmonic == n)
}

impl CoupledSystem {
    /// Right-hand sides, time derivatives and d'Alembertians of the resonant
    /// slots. They read only the background (decoupling).
    fn fab_stage(&self, jets: &BgJets, terms: &InteractionTerms, slot: &ResonantSlot) -> FabStage {
        let grid = &self.grid;
        let dim = grid.dim;
        let npts = grid.npts();
        let cov = self.frame.covector(&slot.harmonic);
        let up: Vec<f64> = (0..=dim).map(|al| if al == 0 { -cov[0] } else { cov[al] }).collect();
        let zero_jet = crate::fields::osc::Jet::zero(npts);
        let term = find_term(terms, &slot.harmonic);
        let cm: Vec<&crate::fields::osc::Jet> =
            (0..=dim).map(|be| term.map_or(&zero_jet, |t| &t.maxwell[be])).collect();
        let ck = term.map_or(&zero_jet, |t| &t.kg);
        let adu = |a: &[crate::fields::osc::Jet], p: usize, d: usize| -> C64 {
            (0..=dim)
                .map(|al| {
                    cov[al]
                        * match d {
                            0 => a[al].v[p],
                            _ => a[al].vt[p],
                        }
                })
                .sum()
        };
        // ℒΨ̆ = i c_Φ − 2i (A₀·∂θ) Ψ̆
        let rhs_psi: Vec<C64> =
            (0..npts).map(|p| I * ck.v[p] - 2.0 * I * adu(&jets.a, p, 0) * slot.psi[p]).collect();
        let psi_t = transport_dt(grid, &cov, &slot.psi, &rhs_psi);
        // ℒW̆^β = i ∂^βθ conj(Ψ̆) Φ₀ − 2i conj(c^β)
        let rhs_w: Comps = (0..=dim)
            .map(|be| (0..npts).map(|p| I * up[be] * slot.psi[p].conj() * jets.phi.v[p] - 2.0 * I * cm[be].v[p].conj()).collect())
            .collect();
        let w_t: Comps = (0..=dim).map(|be| transport_dt(grid, &cov, &slot.w[be], &rhs_w[be])).collect();
        // Differentiate once more for the second time derivatives.
        let rhs_psi_t: Vec<C64> = (0..npts)
            .map(|p| I * ck.vt[p] - 2.0 * I * (adu(&jets.a, p, 1) * slot.psi[p] + adu(&jets.a, p, 0) * psi_t[p]))
            .collect();
        let psi_tt = transport_dt(grid, &cov, &psi_t, &rhs_psi_t);
        let lap = |f: &[C64]| spectral::laplacian(grid, f);
        let box_psi: Vec<C64> = lap(&slot.psi).iter().zip(&psi_tt).map(|(l, t)| l - t).collect();
        let box_w: Comps = (0..=dim)
            .map(|be| {
                let ft: Vec<C64> = (0..npts)
                    .map(|p| {
                        I * up[be] * (psi_t[p].conj() * jets.phi.v[p] + slot.psi[p].conj() * jets.phi.vt[p])
                            - 2.0 * I * cm[be].vt[p].conj()
                    })
                    .collect();
                let tt = transport_dt(grid, &cov, &w_t[be], &ft);
                lap(&slot.w[be]).iter().zip(&tt).map(|(l, t)| l - t).collect()
            })
            .collect();
        FabStage { rhs_w, rhs_psi, box_w, box_psi, w_t, psi_t }
    }

    /// Inputs of the `F⁺_A` right-hand side from the background jets (order
    /// `d` = 0 values, 1 time derivatives) and the error fields.
    pub(crate) fn plus_inputs(&self, jets: &BgJets, a: usize, d: usize, psi_plus: &[C64], e: &Comps, eps: &[C64]) -> PlusInputs {
        let pick = |j: &crate::fields::osc::Jet| if d == 0 { j.v.clone() } else { j.vt.clone() };
        PlusInputs {
            phi0: pick(&jets.phi),
            a0: jets.a.iter().map(pick).collect(),
            psi: pick(&jets.psi[a]),
            psi_plus: psi_plus.to_vec(),
            e: e.clone(),
            eps: eps.to_vec(),
        }
    }

    /// Rates of the coupled state and the fields assembled on the way.
    pub fn evaluate(&self, bg: &BgState, err: &ErrorState, t: f64) -> Result<StageEval> {
        let grid = &self.grid;
        let dim = grid.dim;
        let npts = grid.npts();
        let lam = self.lambda;
        let frame = &self.frame;
        let jets = state_jets(grid, &self.ks, bg, t);
        let fo = first_order_jets(&jets, frame, *grid);
        let terms = interaction_terms(&jets, &self.ks, &self.table, *grid);
        let eell = build_e_ell(&terms, &self.table, frame)?;
        let ev = |o: &Osc| o.eval(frame, lam, t);
        let a1: Comps = fo.a.iter().map(|f| ev(&f.value())).collect();
        let a1_t: Comps = fo.a.iter().map(|f| ev(&f.deriv(frame, 0))).collect();
        let box_a1: Comps = fo.a.iter().map(|f| ev(&f.dalembert(frame))).collect();
        let phi1 = ev(&fo.phi.value());
        let phi1_t = ev(&fo.phi.deriv(frame, 0));
        let box_phi1 = ev(&fo.phi.dalembert(frame));
        let ell: Comps = eell.a.iter().map(|f| ev(&f.value())).collect();
        let ell_t: Comps = eell.a.iter().map(|f| ev(&f.deriv(frame, 0))).collect();
        let box_ell: Comps = eell.a.iter().map(|f| ev(&f.dalembert(frame))).collect();
        let ellp = ev(&eell.phi.value());
        let ellp_t = ev(&eell.phi.deriv(frame, 0));
        let box_ellp = ev(&eell.phi.dalembert(frame));

        // F⁺ right-hand sides and first time derivatives.
        let nph = self.ks.len();
        let mut plus_rhs = Vec::with_capacity(nph);
        let mut plus_t: Vec<(Comps, Vec<C64>)> = Vec::with_capacity(nph);
        for a in 0..nph {
            let slot = &err.plus[a];
            let x = self.plus_inputs(&jets, a, 0, &slot.psi, &err.e, &err.eps);
            let f = self.plus_rhs(a, &x);
            let cov = self.cov(a);
            let w_t: Comps = (0..=dim).map(|be| transport_dt(grid, &cov, &slot.w[be], &f.w[be])).collect();
            let psi_t = transport_dt(grid, &cov, &slot.psi, &f.psi);
            plus_rhs.push(f);
            plus_t.push((w_t, psi_t));
        }
        let fab: Vec<FabStage> = err.fab.iter().map(|s| self.fab_stage(&jets, &terms, s)).collect();

        // Assemble Z and ∂_tZ.
        let mut z: Comps = (0..=dim).map(|c| lin(&err.e[c], 1.0, &ell[c])).collect();
        let mut z_t: Comps = (0..=dim).map(|c| lin(&err.edot[c], 1.0, &ell_t[c])).collect();
        let mut zeta = lin(&err.eps, 1.0, &ellp);
        let mut zeta_t = lin(&err.epsdot, 1.0, &ellp_t);
        let mut sub_a: Comps = (0..=dim).map(|c| lin(&box_a1[c], 1.0, &box_ell[c])).collect();
        let mut sub_phi = lin(&box_phi1, 1.0, &box_ellp);
        let mut add_piece = |n: &[i8; MAX_PHASES],
                             w: &Comps,
                             w_t: &Comps,
                             psi: &[C64],
                             psi_t: &[C64],
                             box_w: &Comps,
                             box_psi: &[C64],
                             rhs: (&Comps, &[C64])| {
            let e = plane_factor(grid, frame, n, lam, t);
            let th_t = frame.covector(n)[0];
            for p in 0..npts {
                for c in 0..=dim {
                    let cw = w[c][p].conj();
                    z[c][p] += lam * (e[p] * cw).re;
                    z_t[c][p] += (e[p] * (lam * w_t[c][p].conj() + I * th_t * cw)).re;
                    sub_a[c][p] += (e[p] * (lam * box_w[c][p].conj() + I * rhs.0[c][p].conj())).re;
                }
                zeta[p] += lam * e[p] * psi[p];
                zeta_t[p] += e[p] * (lam * psi_t[p] + I * th_t * psi[p]);
                sub_phi[p] += e[p] * (lam * box_psi[p] + I * rhs.1[p]);
            }
        };
        for a in 0..nph {
            let s = &err.plus[a];
            add_piece(&single_harmonic(a), &s.w, &plus_t[a].0, &s.psi, &plus_t[a].1, &s.gw, &s.gpsi, (&plus_rhs[a].w, &plus_rhs[a].psi));
        }
        for (s, f) in err.fab.iter().zip(&fab) {
            add_piece(&s.harmonic, &s.w, &f.w_t, &s.psi, &f.psi_t, &f.box_w, &f.box_psi, (&f.rhs_w, &f.rhs_psi));
        }

        // Exact nonlinearity of the assembled fields.
        let a_tot: Comps = (0..=dim).map(|c| lin(&a1[c], 1.0, &z[c])).collect();
        let phi_tot = lin(&phi1, 1.0, &zeta);
        let mut dphi = vec![lin(&phi1_t, 1.0, &zeta_t)];
        dphi.extend(spectral::gradient(grid, &phi_tot));
        let (na, nphi) = kgml_rhs(&a_tot, &phi_tot, &dphi);
        let mut source_a: Comps = (0..=dim).map(|c| lin(&na[c], -1.0, &sub_a[c])).collect();
        source_a.iter_mut().for_each(|c| real_part(c));
        let source_phi = lin(&nphi, -1.0, &sub_phi);

        // E^evo rates: ∂²_tE = ΔE − S.
        let edd: Comps = (0..=dim)
            .map(|c| {
                let mut v = lin(&spectral::laplacian(grid, &err.e[c]), -1.0, &source_a[c]);
                real_part(&mut v);
                v
            })
            .collect();
        let epsdd = lin(&spectral::laplacian(grid, &err.eps), -1.0, &source_phi);

        // G⁺ rates: ℒ_A G = □(right-hand side), with □Ψ⁺ → G_Ψ and □E^evo → S.
        let boxj = |j: &crate::fields::osc::Jet| lin(&spectral::laplacian(grid, &j.v), -1.0, &j.vtt);
        let mut plus_rate = Vec::with_capacity(nph);
        for a in 0..nph {
            let slot = &err.plus[a];
            let x = self.plus_inputs(&jets, a, 0, &slot.psi, &err.e, &err.eps);
            let xdot = self.plus_inputs(&jets, a, 1, &plus_t[a].1, &err.edot, &err.epsdot);
            let xbox = PlusInputs {
                phi0: boxj(&jets.phi),
                a0: jets.a.iter().map(boxj).collect(),
                psi: boxj(&jets.psi[a]),
                psi_plus: slot.gpsi.clone(),
                e: source_a.clone(),
                eps: source_phi.clone(),
            };
            let bf = self.plus_rhs_box(a, &x, &xdot, &xbox);
            let cov = self.cov(a);
            plus_rate.push(PlusSlot {
                w: plus_t[a].0.clone(),
                psi: plus_t[a].1.clone(),
                gw: (0..=dim).map(|be| transport_dt(grid, &cov, &slot.gw[be], &bf.w[be])).collect(),
                gpsi: transport_dt(grid, &cov, &slot.gpsi, &bf.psi),
            });
        }
        let err_rate = ErrorState {
            t: 1.0,
            e: err.edot.clone(),
            edot: edd,
            eps: err.epsdot.clone(),
            epsdot: epsdd,
            plus: plus_rate,
            fab: err
                .fab
                .iter()
                .zip(fab)
                .map(|(s, f)| ResonantSlot { w: f.w_t, psi: f.psi_t, ..s.clone() })
                .collect(),
        };
        let bg_rate = BgState {
            a: jets.a.iter().map(|j| j.vt.clone()).collect(),
            adot: jets.a.iter().map(|j| j.vtt.clone()).collect(),
            phi: jets.phi.vt.clone(),
            phidot: jets.phi.vtt.clone(),
            psi: jets.psi.iter().map(|j| j.vt.clone()).collect(),
            w: jets.w.iter().map(|c| c.iter().map(|j| j.vt.clone()).collect()).collect(),
        };
        Ok(StageEval {
            bg: bg_rate,
            err: err_rate,
            fields: StageFields { t, a1, a1_t, phi1, phi1_t, z, z_t, zeta, zeta_t, source_a, source_phi },
        })
    }

    /// One classical Runge–Kutta step of the joint system. Returns the new
    /// state and the evaluation at the old one.
    pub fn step(&self, bg: &BgState, err: &ErrorState, t: f64) -> Result<(BgState, ErrorState, StageEval)> {
        let dt = self.grid.dt;
        let k1 = self.evaluate(bg, err, t)?;
        let k2 = self.evaluate(&bg.axpy(0.5 * dt, &k1.bg), &err.axpy(0.5 * dt, &k1.err), t + 0.5 * dt)?;
        let k3 = self.evaluate(&bg.axpy(0.5 * dt, &k2.bg), &err.axpy(0.5 * dt, &k2.err), t + 0.5 * dt)?;
        let k4 = self.evaluate(&bg.axpy(dt, &k3.bg), &err.axpy(dt, &k3.err), t + dt)?;
        let nb = bg.axpy(dt / 6.0, &k1.bg).axpy(dt / 3.0, &k2.bg).axpy(dt / 3.0, &k3.bg).axpy(dt / 6.0, &k4.bg);
        let mut ne =
            err.axpy(dt / 6.0, &k1.err).axpy(dt / 3.0, &k2.err).axpy(dt / 3.0, &k3.err).axpy(dt / 6.0, &k4.err);
        ne.t = t + dt;
        Ok((nb, ne, k1))
    }
}

/// Error state and assembled fields at one checkpoint, with the `F⁺` slots
/// one step before and after (for second-order time differences).
#[derive(Clone, Debug)]
pub struct ErrorCheckpoint {
    /// Time.
    pub t: f64,
    /// State at the checkpoint.
    pub state: ErrorState,
    /// Rates at the checkpoint.
    pub rate: ErrorState,
    /// Assembled fields at the checkpoint.
    pub fields: StageFields,
    /// `F⁺` slots at `t − dt`.
    pub plus_prev: Vec<PlusSlot>,
    /// `F⁺` slots at `t + dt`.
    pub plus_next: Vec<PlusSlot>,
    /// Largest boundary-to-peak ratio of the `F⁺` slots. The low-frequency
    /// projection and the elliptic part of `E^evo` have infinite support, so
    /// this is a diagnostic rather than an abort condition.
    pub support_leak: f64,
}

/// Options of a coupled run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoupledOptions {
    /// Final time.
    pub t_final: f64,
    /// Checkpoint times (rounded to steps; at least one step after 0 and
    /// before `t_final`).
    pub checkpoints: Vec<f64>,
    /// Abort when the largest error sample exceeds this bound.
    pub blowup: f64,
}

/// Result of a coupled run.
#[derive(Clone, Debug)]
pub struct CoupledTrajectory {
    /// The system.
    pub system: CoupledSystem,
    /// Checkpoints in increasing time.
    pub checkpoints: Vec<ErrorCheckpoint>,
    /// Time reached.
    pub t_final: f64,
}

fn boundary_leak(grid: &Grid, f: &[C64]) -> f64 {
    let max = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let n = grid.n;
    let mut edge = 0.0f64;
    for (idx, v) in f.iter().enumerate() {
        let j = spectral::unflatten(grid, idx);
        if (0..grid.dim).any(|a| j[a] < 2 || j[a] >= n - 2) {
            edge = edge.max(v.norm());
        }
    }
    edge / max
}

/// Evolve background and error parameters together from admissible initial
/// data.
pub fn evolve_coupled(
    bg: &BackgroundInitialData,
    init: &ErrorParameterInit,
    sys: &CoupledSystem,
    opts: &CoupledOptions,
) -> Result<CoupledTrajectory> {
    let grid = sys.grid;
    let dt = grid.dt;
    let last = (opts.t_final / dt).round() as usize;
    let mut wanted: Vec<usize> = opts.checkpoints.iter().map(|t| (t / dt).round() as usize).collect();
    wanted.sort_unstable();
    wanted.dedup();
    if wanted.iter().any(|&n| n < 1 || n + 1 > last) {
        return Err(Error::Config("coupled checkpoints must lie strictly inside (0, T)".into()));
    }
    let mut bgs = BgState::from_initial(bg);
    let mut err = init.state.clone();
    let mut prev_plus: Vec<PlusSlot> = err.plus.clone();
    let mut pending: Option<ErrorCheckpoint> = None;
    let mut out = Vec::new();
    for n in 0..last {
        let t = n as f64 * dt;
        let (nb, ne, eval) = sys.step(&bgs, &err, t)?;
        if let Some(mut cp) = pending.take() {
            cp.plus_next = err.plus.clone();
            out.push(cp);
        }
        if wanted.binary_search(&n).is_ok() {
            let support_leak = err
                .plus
                .iter()
                .flat_map(|s| s.w.iter().chain(std::iter::once(&s.psi)))
                .map(|f| boundary_leak(&grid, f))
                .fold(0.0, f64::max);
            pending = Some(ErrorCheckpoint {
                t,
                state: err.clone(),
                rate: eval.err.clone(),
                fields: eval.fields,
                plus_prev: prev_plus.clone(),
                plus_next: Vec::new(),
                support_leak,
            });
        }
        prev_plus = err.plus.clone();
        if !ne.is_finite() || nb.all_values().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Abort { time: t + dt, reason: "non-finite field in the coupled evolution".into() });
        }
        let big = ne.values().map(|v| v.norm()).fold(0.0, f64::max);
        if big > opts.blowup {
            return Err(Error::Abort { time: t + dt, reason: format!("error amplitude {big:e} above the blow-up bound") });
        }
        bgs = nb;
        err = ne;
    }
    if let Some(mut cp) = pending.take() {
        cp.plus_next = err.plus.clone();
        out.push(cp);
    }
    Ok(CoupledTrajectory { system: sys.clone(), checkpoints: out, t_final: last as f64 * dt })
}

/// Trajectory of the resonant slots alone.
#[derive(Clone, Debug)]
pub struct FabTrajectory {
    /// `(t, slots)` at each checkpoint.
    pub samples: Vec<(f64, Vec<ResonantSlot>)>,
    /// Polarisation `‖∂_βθ W̆^β‖_{L²}` per checkpoint and slot.
    pub polarization: Vec<Vec<f64>>,
}

/// Integrate the resonant-slot transport `F̆` (zero initial data) together
/// with the background. Returns an empty trajectory when no pair is
/// resonant.
pub fn evolve_fab(bg: &BackgroundInitialData, sys: &CoupledSystem, t_final: f64, checkpoints: &[f64]) -> Result<FabTrajectory> {
    let grid = sys.grid;
    let dt = grid.dt;
    if sys.resonant.is_empty() {
        return Ok(FabTrajectory { samples: vec![], polarization: vec![] });
    }
    let last = (t_final / dt).round() as usize;
    let wanted: Vec<usize> = checkpoints.iter().map(|t| (t / dt).round() as usize).collect();
    let mut bgs = BgState::from_initial(bg);
    let mut slots = ErrorState::zero(sys, 0.0).fab;
    let mut samples = Vec::new();
    let mut polarization = Vec::new();
    let rate = |b: &BgState, s: &[ResonantSlot], t: f64| -> (BgState, Vec<ResonantSlot>) {
        let jets = state_jets(&grid, &sys.ks, b, t);
        let terms = interaction_terms(&jets, &sys.ks, &sys.table, grid);
        let r: Vec<ResonantSlot> = s
            .iter()
            .map(|x| {
                let f = sys.fab_stage(&jets, &terms, x);
                ResonantSlot { w: f.w_t, psi: f.psi_t, ..x.clone() }
            })
            .collect();
        let br = BgState {
            a: jets.a.iter().map(|j| j.vt.clone()).collect(),
            adot: jets.a.iter().map(|j| j.vtt.clone()).collect(),
            phi: jets.phi.vt.clone(),
            phidot: jets.phi.vtt.clone(),
            psi: jets.psi.iter().map(|j| j.vt.clone()).collect(),
            w: jets.w.iter().map(|c| c.iter().map(|j| j.vt.clone()).collect()).collect(),
        };
        (br, r)
    };
    let ax = |s: &[ResonantSlot], h: f64, d: &[ResonantSlot]| -> Vec<ResonantSlot> {
        s.iter().zip(d).map(|(x, y)| ResonantSlot { w: lin_c(&x.w, h, &y.w), psi: lin(&x.psi, h, &y.psi), ..x.clone() }).collect()
    };
    let record = |n: usize, s: &[ResonantSlot], samples: &mut Vec<(f64, Vec<ResonantSlot>)>, pol: &mut Vec<Vec<f64>>| {
        if wanted.contains(&n) {
            samples.push((n as f64 * dt, s.to_vec()));
            pol.push(
                s.iter()
                    .map(|x| {
                        let cov = sys.frame.covector(&x.harmonic);
                        let v: Vec<C64> =
                            (0..grid.npts()).map(|p| (0..=grid.dim).map(|al| cov[al] * x.w[al][p]).sum()).collect();
                        l2_norm(&grid, &v)
                    })
                    .collect(),
            );
        }
    };
    record(0, &slots, &mut samples, &mut polarization);
    for n in 0..last {
        let t = n as f64 * dt;
        let (b1, s1) = rate(&bgs, &slots, t);
        let (b2, s2) = rate(&bgs.axpy(0.5 * dt, &b1), &ax(&slots, 0.5 * dt, &s1), t + 0.5 * dt);
        let (b3, s3) = rate(&bgs.axpy(0.5 * dt, &b2), &ax(&slots, 0.5 * dt, &s2), t + 0.5 * dt);
        let (b4, s4) = rate(&bgs.axpy(dt, &b3), &ax(&slots, dt, &s3), t + dt);
        bgs = bgs.axpy(dt / 6.0, &b1).axpy(dt / 3.0, &b2).axpy(dt / 3.0, &b3).axpy(dt / 6.0, &b4);
        slots = ax(&ax(&ax(&ax(&slots, dt / 6.0, &s1), dt / 3.0, &s2), dt / 3.0, &s3), dt / 6.0, &s4);
        if slots.iter().flat_map(|s| s.w.iter().chain(std::iter::once(&s.psi))).flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Abort { time: t + dt, reason: "non-finite resonant amplitude".into() });
        }
        record(n + 1, &slots, &mut samples, &mut polarization);
    }
    Ok(FabTrajectory { samples, polarization })
}

/// `‖G⁺ − □F⁺‖` at one checkpoint, with `□F⁺` from a centred second time
/// difference and the spectral Laplacian.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuxiliaryReport {
    /// Time.
    pub t: f64,
    /// `‖G⁺ − □F⁺‖_{L²}` per phase (both slots together).
    pub discrepancy: Vec<f64>,
    /// `‖G⁺‖_{L²}` per phase.
    pub size: Vec<f64>,
    /// Largest ratio `discrepancy / size` (absolute value when `G⁺ = 0`).
    pub relative: f64,
}

/// Check the auxiliary identity `G⁺ = □F⁺` at a checkpoint.
pub fn verify_auxiliary(cp: &ErrorCheckpoint, grid: &Grid) -> AuxiliaryReport {
    let dt = grid.dt;
    let mut discrepancy = Vec::new();
    let mut size = Vec::new();
    let boxfd = |prev: &[C64], cur: &[C64], next: &[C64]| -> Vec<C64> {
        let lap = spectral::laplacian(grid, cur);
        (0..cur.len()).map(|p| lap[p] - (next[p] - 2.0 * cur[p] + prev[p]) / (dt * dt)).collect()
    };
    for a in 0..cp.state.plus.len() {
        let (pv, cu, nx) = (&cp.plus_prev[a], &cp.state.plus[a], &cp.plus_next[a]);
        let mut d2 = 0.0;
        let mut s2 = 0.0;
        for c in 0..cu.w.len() {
            let b = boxfd(&pv.w[c], &cu.w[c], &nx.w[c]);
            d2 += l2_norm(grid, &lin(&cu.gw[c], -1.0, &b)).powi(2);
            s2 += l2_norm(grid, &cu.gw[c]).powi(2);
        }
        let b = boxfd(&pv.psi, &cu.psi, &nx.psi);
        d2 += l2_norm(grid, &lin(&cu.gpsi, -1.0, &b)).powi(2);
        s2 += l2_norm(grid, &cu.gpsi).powi(2);
        discrepancy.push(d2.sqrt());
        size.push(s2.sqrt());
    }
    let relative = discrepancy
        .iter()
        .zip(&size)
        .map(|(d, s)| if *s > 0.0 { d / s } else { *d })
        .fold(0.0, f64::max);
    AuxiliaryReport { t: cp.t, discrepancy, size, relative }
}

fn hs_comps(grid: &Grid, f: &[Vec<C64>], s: f64) -> f64 {
    f.iter().map(|c| spectral::sobolev_sq(grid, c, s)).sum::<f64>().sqrt()
}

/// The bundles of the bootstrap assumption at one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleRow {
    /// Time.
    pub t: f64,
    /// `max_A Σ_{k≤1} λ^k(‖F⁺‖_{H^{k+1}} + ‖∂_tF⁺‖_{H^k}) + λ‖∂²_tF⁺‖_{L²}`.
    pub f_plus: f64,
    /// Same bundle for `(E^i, ℰ)` of `E^evo`.
    pub e_evo: f64,
    /// Same bundle for `(E^evo)^0`.
    pub e_evo0: f64,
    /// `max_A Σ_{k≤1} λ^k‖G⁺‖_{H^k} + λ‖∂_tG⁺‖_{L²}`.
    pub g_plus: f64,
    /// `max(f_plus, e_evo/λ^{1/2}, e_evo0/λ^{1/2}, g_plus)`.
    pub combined: f64,
}

/// Recorded bundles and the fitted envelope `c₁e^{c₂t}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapMonitor {
    /// Wavelength parameter.
    pub lambda: f64,
    /// Bundles per checkpoint.
    pub rows: Vec<BundleRow>,
    /// Fitted `c₁` (`None` for a degenerate fit).
    pub c1: Option<f64>,
    /// Fitted `c₂`.
    pub c2: Option<f64>,
    /// RMS residual of the affine fit of `log N(t)`.
    pub fit_residual: f64,
    /// Largest `N(t) / (c₁e^{c₂t})`.
    pub max_excursion: f64,
    /// Whether a non-finite norm was met.
    pub non_finite: bool,
    /// Whether the trajectory is identically zero.
    pub trivial: bool,
}

/// Record the bootstrap bundles along a trajectory and fit
/// `log N = log c₁ + c₂ t` by least squares.
pub fn monitor_bootstrap(traj: &CoupledTrajectory) -> BootstrapMonitor {
    let sys = &traj.system;
    let grid = &sys.grid;
    let lam = sys.lambda;
    let dt = grid.dt;
    let mut rows = Vec::new();
    for cp in &traj.checkpoints {
        let mut f_plus = 0.0f64;
        let mut g_plus = 0.0f64;
        for a in 0..cp.state.plus.len() {
            let (pv, cu, nx, rt) = (&cp.plus_prev[a], &cp.state.plus[a], &cp.plus_next[a], &cp.rate.plus[a]);
            let mut f: Vec<Vec<C64>> = cu.w.clone();
            f.push(cu.psi.clone());
            let mut ft: Vec<Vec<C64>> = rt.w.clone();
            ft.push(rt.psi.clone());
            let mut ftt: Vec<Vec<C64>> = Vec::new();
            for c in 0..cu.w.len() {
                ftt.push((0..cu.w[c].len()).map(|p| (nx.w[c][p] - 2.0 * cu.w[c][p] + pv.w[c][p]) / (dt * dt)).collect());
            }
            ftt.push((0..cu.psi.len()).map(|p| (nx.psi[p] - 2.0 * cu.psi[p] + pv.psi[p]) / (dt * dt)).collect());
            let fb = hs_comps(grid, &f, 1.0) + hs_comps(grid, &ft, 0.0) + lam * (hs_comps(grid, &f, 2.0) + hs_comps(grid, &ft, 1.0))
                + lam * l2_norm_comps(grid, &ftt);
            f_plus = f_plus.max(fb);
            let mut g: Vec<Vec<C64>> = cu.gw.clone();
            g.push(cu.gpsi.clone());
            let mut gt: Vec<Vec<C64>> = rt.gw.clone();
            gt.push(rt.gpsi.clone());
            let gb = hs_comps(grid, &g, 0.0) + lam * hs_comps(grid, &g, 1.0) + lam * l2_norm_comps(grid, &gt);
            g_plus = g_plus.max(gb);
        }
        let s = &cp.state;
        let r = &cp.rate;
        let mut ev: Vec<Vec<C64>> = s.e[1..].to_vec();
        ev.push(s.eps.clone());
        let mut evt: Vec<Vec<C64>> = s.edot[1..].to_vec();
        evt.push(s.epsdot.clone());
        let mut evtt: Vec<Vec<C64>> = r.edot[1..].to_vec();
        evtt.push(r.epsdot.clone());
        let bundle = |f: &[Vec<C64>], ft: &[Vec<C64>], ftt: &[Vec<C64>]| {
            hs_comps(grid, f, 1.0) + hs_comps(grid, ft, 0.0) + lam * (hs_comps(grid, f, 2.0) + hs_comps(grid, ft, 1.0)) + lam * l2_norm_comps(grid, ftt)
        };
        let e_evo = bundle(&ev, &evt, &evtt);
        let e_evo0 = bundle(&s.e[..1], &s.edot[..1], &r.edot[..1]);
        let combined = f_plus.max(e_evo / lam.sqrt()).max(e_evo0 / lam.sqrt()).max(g_plus);
        rows.push(BundleRow { t: cp.t, f_plus, e_evo, e_evo0, g_plus, combined });
    }
    let non_finite = rows.iter().any(|r| !r.combined.is_finite());
    let trivial = rows.iter().all(|r| r.combined == 0.0);
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.combined > 0.0 && r.combined.is_finite()).map(|r| (r.t, r.combined.ln())).collect();
    let (mut c1, mut c2, mut fit_residual, mut max_excursion) = (None, None, 0.0, 0.0);
    if pts.len() >= 2 && !non_finite {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        if sxx > 0.0 {
            let b = sxy / sxx;
            let a = my - b * mt;
            c1 = Some(a.exp());
            c2 = Some(b);
            fit_residual = (pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum::<f64>() / n).sqrt();
            max_excursion = rows.iter().map(|r| r.combined / (a + b * r.t).exp()).fold(0.0, f64::max);
        }
    }
    BootstrapMonitor { lambda: lam, rows, c1, c2, fit_residual, max_excursion, non_finite, trivial }
}

/// Gauge defect of the assembled solution at one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeRow {
    /// Time.
    pub t: f64,
    /// `‖∂_αA_λ^α‖_{L²}` of `A_λ = A₁ + Z`.
    pub divergence: f64,
    /// `‖∂_α(A₁)^α‖_{L²}` alone (for scale).
    pub first_order: f64,
    /// Polarisation `max_A ‖∂_αu_A W⁺_A^α‖_{L²}`.
    pub polarization_plus: f64,
}

/// Divergence of the assembled potential from its fields and time
/// derivatives.
pub fn gauge_divergence(grid: &Grid, a: &Comps, a_t: &Comps) -> Vec<C64> {
    let mut div = a_t[0].clone();
    for i in 1..=grid.dim {
        let d = spectral::deriv(grid, &a[i], i - 1);
        div.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
    }
    div
}

/// `‖∂_αA_λ^α‖` per checkpoint of a coupled trajectory.
pub fn gauge_divergence_monitor(traj: &CoupledTrajectory) -> Vec<GaugeRow> {
    let sys = &traj.system;
    let grid = &sys.grid;
    traj.checkpoints
        .iter()
        .map(|cp| {
            let f = &cp.fields;
            let a: Comps = f.a1.iter().zip(&f.z).map(|(x, y)| lin(x, 1.0, y)).collect();
            let a_t: Comps = f.a1_t.iter().zip(&f.z_t).map(|(x, y)| lin(x, 1.0, y)).collect();
            let polarization_plus = (0..sys.ks.len())
                .map(|idx| {
                    let cov = sys.cov(idx);
                    let w = &cp.state.plus[idx].w;
                    let v: Vec<C64> = (0..grid.npts()).map(|p| (0..=grid.dim).map(|al| cov[al] * w[al][p]).sum()).collect();
                    l2_norm(grid, &v)
                })
                .fold(0.0, f64::max);
            GaugeRow {
                t: cp.t,
                divergence: l2_norm(grid, &gauge_divergence(grid, &a, &a_t)),
                first_order: l2_norm(grid, &gauge_divergence(grid, &f.a1, &f.a1_t)),
                polarization_plus,
            }
        })
        .collect()
}

/// Norms of `Z = (Z_A, Z_Φ)` at a checkpoint in `L²`, `H^{1/2}` and `H¹`.
pub fn error_norms(grid: &Grid, f: &StageFields) -> [f64; 3] {
    let mut all: Vec<Vec<C64>> = f.z.clone();
    all.push(f.zeta.clone());
    [hs_comps(grid, &all, 0.0), hs_comps(grid, &all, 0.5), hs_comps(grid, &all, 1.0)]
}

/// Total Klein–Gordon charge `∫ Im(Φ conj ∂_tΦ) + A⁰|Φ|²`.
pub fn total_charge(grid: &Grid, a0: &[C64], phi: &[C64], phi_t: &[C64]) -> f64 {
    (0..phi.len()).map(|p| (phi[p] * phi_t[p].conj()).im + a0[p].re * phi[p].norm_sqr()).sum::<f64>() * grid.cell_volume()
}

/// Split `X = Π₋X + Π₊X` of a product term and return the largest
/// deviation from the unsplit product (partition of unity).
pub fn projector_split_defect(sys: &CoupledSystem, f: &[C64]) -> f64 {
    let low = spectral::low_pass(&sys.grid, f, sys.cutoff);
    let high = lin(f, -1.0, &low);
    (0..f.len()).map(|p| (low[p] + high[p] - f[p]).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
