//! Background profiles: admissible initial data, the coupled background /
//! transport cascade and its diagnostics.
//!
//! The background solves
//!
//! ```text
//! □A₀^β = −Im(Φ₀ conj(∂^βΦ₀)) + A₀^β|Φ₀|² + Σ_A ∂^βu_A|Ψ_A|²
//! □Φ₀   = −2iA₀^α∂_αΦ₀ + A₀^αA₀_αΦ₀
//! ℒ_A Ψ_A = −2iA₀^α∂_αu_A Ψ_A
//! ℒ_A W_A^β = i∂^βu_A conj(Ψ_A)Φ₀,       ℒ_A = 2∂^αu_A∂_α + □u_A,
//! ```
//!
//! with plane-wave phases. The whole system is written first order in time
//! and advanced by classical RK4 with spectral space derivatives, so that the
//! Lorenz gauge and the Klein–Gordon charge are kept to fourth order in `dt`.
//! The same stepper with an empty phase set integrates plain KGML.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::fields::algebra::kgml_rhs;
use crate::fields::osc::{Jet, PlaneFrame};
use crate::fields::{l2_norm, l2_norm_comps, spectral, FieldArray, Grid};
use crate::init_data::solve_perturbed_laplacian_projected;
use crate::phases::{validate_eikonal_data, EikonalData, Phase};
use crate::{Error, Result, C64};

/// Component-major samples of a multi-component field.
pub type Comps = Vec<Vec<C64>>;

/// Radius (in units of σ) beyond which `exp(−|x|²/σ²)` is below 1e−16.
pub const SUPPORT_FACTOR: f64 = 6.1;

/// Relative size above which a compactly supported field is considered to
/// have reached the two boundary cells of the box.
pub const SUPPORT_LEAK_TOL: f64 = 1e-8;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

fn knorm(k: &[f64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

/// Upper-index gradient `∂^βu = (|k|, k)` of a plane-wave phase.
pub fn upper_gradient(k: &[f64; 3], dim: usize) -> Vec<f64> {
    let mut v = vec![knorm(k)];
    v.extend_from_slice(&k[..dim]);
    v
}

/// Lower-index gradient `∂_βu = (−|k|, k)` of a plane-wave phase.
pub fn lower_gradient(k: &[f64; 3], dim: usize) -> Vec<f64> {
    let mut v = vec![-knorm(k)];
    v.extend_from_slice(&k[..dim]);
    v
}

/// Gaussian bump `exp(−|x − c|²/σ²)` sampled on the grid.
pub fn gaussian(grid: &Grid, center: [f64; 3], sigma: f64) -> Vec<f64> {
    grid.coords()
        .iter()
        .map(|x| {
            let r2: f64 = (0..grid.dim).map(|a| (x[a] - center[a]).powi(2)).sum();
            (-r2 / (sigma * sigma)).exp()
        })
        .collect()
}

/// Admissible background initial data with plane-wave phases.
#[derive(Clone, Debug)]
pub struct BackgroundInitialData {
    /// Spatial grid.
    pub grid: Grid,
    /// Plane-wave phase wavevectors, in declaration order.
    pub ks: Vec<[f64; 3]>,
    /// Eikonal data of each phase.
    pub eikonal: Vec<EikonalData>,
    /// `a₀^α` (real, `dim+1` components).
    pub a0: FieldArray,
    /// `ȧ₀^α`.
    pub a0dot: FieldArray,
    /// `φ₀`.
    pub phi0: FieldArray,
    /// `φ̇₀`.
    pub phi0dot: FieldArray,
    /// `ψ_A` per phase.
    pub psi: Vec<FieldArray>,
    /// `w_A^α = p_A^α + i q_A^α` per phase.
    pub w: Vec<FieldArray>,
    /// Radius `S'` of the ball containing every compactly supported datum.
    pub support_radius: f64,
    /// Mean removed from the Gauss-law source when `|φ₀|² ≡ 0`.
    pub neutrality_mean: f64,
}

/// Parameters of the Gaussian-bump background presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundPreset {
    /// Width σ of every bump.
    pub sigma: f64,
    /// Amplitude of `φ₀`.
    pub phi_amp: f64,
    /// Carrier wavenumber `m` of `φ₀ = a·g·e^{imx₁}`.
    pub phi_wavenumber: f64,
    /// Frequency ω in `φ̇₀ = −iωφ₀`.
    pub phi_frequency: f64,
    /// Amplitude of the spatial potential `a₀^i`.
    pub a_amp: f64,
    /// Amplitude of `ȧ₀^i`.
    pub adot_amp: f64,
    /// Amplitude of every `ψ_A`.
    pub psi_amp: f64,
    /// Offset along x₁ between the bump centres of consecutive phases.
    pub psi_spacing: f64,
    /// Complex amplitude `(re, im)` of every `w_A`.
    pub w_amp: [f64; 2],
}

impl Default for BackgroundPreset {
    fn default() -> Self {
        BackgroundPreset {
            sigma: 0.5,
            phi_amp: 0.5,
            phi_wavenumber: 1.0,
            phi_frequency: 1.0,
            a_amp: 0.3,
            adot_amp: 0.2,
            psi_amp: 0.5,
            psi_spacing: 0.0,
            w_amp: [0.4, 0.2],
        }
    }
}

impl BackgroundPreset {
    /// Preset with every amplitude zero.
    pub fn zero() -> Self {
        BackgroundPreset { phi_amp: 0.0, a_amp: 0.0, adot_amp: 0.0, psi_amp: 0.0, w_amp: [0.0, 0.0], ..Self::default() }
    }

    fn psi_center(&self, a: usize, count: usize) -> [f64; 3] {
        [(a as f64 - 0.5 * (count as f64 - 1.0)) * self.psi_spacing, 0.0, 0.0]
    }

    /// Radius `S'` of the ball holding every bump.
    pub fn support_radius(&self, count: usize) -> f64 {
        let c = (0..count).map(|a| self.psi_center(a, count)[0].abs()).fold(0.0, f64::max);
        c + SUPPORT_FACTOR * self.sigma
    }

    /// Build constraint-satisfying data: `ȧ₀⁰ = −∂_ia₀^i` (Lorenz), `a₀⁰` from
    /// the Gauss law, `w_A` polarised along `(1, k̂)` plus a transverse part.
    pub fn build(&self, grid: Grid, ks: &[[f64; 3]]) -> Result<BackgroundInitialData> {
        let dim = grid.dim;
        let npts = grid.npts();
        let coords = grid.coords();
        let g0 = gaussian(&grid, [0.0; 3], self.sigma);
        let phi: Vec<C64> = (0..npts)
            .map(|p| self.phi_amp * g0[p] * C64::from_polar(1.0, self.phi_wavenumber * coords[p][0]))
            .collect();
        let phidot: Vec<C64> = phi.iter().map(|v| -I * self.phi_frequency * v).collect();
        let mut a0 = vec![zeros(npts); dim + 1];
        let mut a0dot = vec![zeros(npts); dim + 1];
        for i in 1..=dim {
            let scale = if i == 1 { 1.0 } else { 0.5 };
            for p in 0..npts {
                a0[i][p] = C64::new(scale * self.a_amp * g0[p], 0.0);
                a0dot[i][p] = C64::new(scale * self.adot_amp * g0[p] * coords[p][0] / self.sigma, 0.0);
            }
        }
        let div_a = (1..=dim).fold(zeros(npts), |acc, i| {
            let d = spectral::deriv(&grid, &a0[i], i - 1);
            acc.iter().zip(&d).map(|(x, y)| x + y).collect()
        });
        a0dot[0] = div_a.iter().map(|v| C64::new(-v.re, 0.0)).collect();
        let count = ks.len();
        let mut psi = Vec::with_capacity(count);
        let mut w = Vec::with_capacity(count);
        let wamp = C64::new(self.w_amp[0], self.w_amp[1]);
        for (a, k) in ks.iter().enumerate() {
            let ga = gaussian(&grid, self.psi_center(a, count), self.sigma);
            psi.push(
                (0..npts).map(|p| self.psi_amp * ga[p] * C64::from_polar(1.0, 0.5 * coords[p][0])).collect::<Vec<_>>(),
            );
            let kn = knorm(k);
            let mut wa = vec![zeros(npts); dim + 1];
            for p in 0..npts {
                wa[0][p] = wamp * ga[p];
                for i in 1..=dim {
                    wa[i][p] = wamp * ga[p] * (k[i - 1] / kn);
                }
                if dim >= 2 {
                    // Transverse direction (−k̂₂, k̂₁) in the first plane.
                    wa[1][p] += 0.5 * wamp * ga[p] * (-k[1] / kn);
                    wa[2][p] += 0.5 * wamp * ga[p] * (k[0] / kn);
                }
            }
            w.push(wa);
        }
        // Gauss law: (−Δ + |φ|²) a⁰ = ∂_iȧ^i − Im(φ conj φ̇) + Σ v̇_A|ψ_A|².
        let div_adot = (1..=dim).fold(zeros(npts), |acc, i| {
            let d = spectral::deriv(&grid, &a0dot[i], i - 1);
            acc.iter().zip(&d).map(|(x, y)| x + y).collect()
        });
        let gpot: Vec<f64> = phi.iter().map(|v| v.norm_sqr()).collect();
        let h: Vec<C64> = (0..npts)
            .map(|p| {
                let mut s = div_adot[p].re - (phi[p] * phidot[p].conj()).im;
                for (a, k) in ks.iter().enumerate() {
                    s -= knorm(k) * psi[a][p].norm_sqr();
                }
                C64::new(s, 0.0)
            })
            .collect();
        let sol = solve_perturbed_laplacian_projected(&grid, &gpot, &h, 1e-13)?;
        a0[0] = sol.f.iter().map(|v| C64::new(v.re, 0.0)).collect();
        Ok(BackgroundInitialData {
            grid,
            ks: ks.to_vec(),
            eikonal: ks.iter().map(|k| EikonalData::plane(grid, *k)).collect(),
            a0: FieldArray::new(grid, a0)?,
            a0dot: FieldArray::new(grid, a0dot)?,
            phi0: FieldArray::scalar(grid, phi)?,
            phi0dot: FieldArray::scalar(grid, phidot)?,
            psi: psi.into_iter().map(|v| FieldArray::scalar(grid, v)).collect::<Result<_>>()?,
            w: w.into_iter().map(|v| FieldArray::new(grid, v)).collect::<Result<_>>()?,
            support_radius: self.support_radius(count),
            neutrality_mean: sol.projected_mean.norm(),
        })
    }
}

/// Residual norms of the background constraints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Gauss-law residual (relative to the size of its terms; the mean is
    /// excluded when `|φ₀|² ≡ 0`, see `neutrality_mean`).
    pub maxwell: f64,
    /// Lorenz residual `‖ȧ₀⁰ + ∂_ia₀^i‖` relative to its terms.
    pub lorenz: f64,
    /// Largest eikonal residual of the phase data.
    pub eikonal: f64,
    /// Polarisation residual `‖∂_iv_A w_A^i + v̇_A w_A⁰‖` per phase (relative).
    pub polarization: Vec<f64>,
    /// Mean of the Gauss-law source removed on the torus.
    pub neutrality_mean: f64,
    /// Whether `S' + T` fits inside the box with a two-cell margin.
    pub support_ok: bool,
    /// All residuals within tolerance.
    pub pass: bool,
}

fn rel(res: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        res
    } else {
        res / scale
    }
}

/// Evaluate the four constraint residuals of background data.
pub fn check_background_constraints(d: &BackgroundInitialData, tol: f64, t_final: f64) -> ConstraintReport {
    let grid = d.grid;
    let dim = grid.dim;
    let npts = grid.npts();
    let a = d.a0.comps();
    let adot = d.a0dot.comps();
    let phi = d.phi0.comp(0);
    let phidot = d.phi0dot.comp(0);
    let lap = spectral::laplacian(&grid, &a[0]);
    let mut div_adot = zeros(npts);
    let mut div_a = zeros(npts);
    for i in 1..=dim {
        let x = spectral::deriv(&grid, &adot[i], i - 1);
        let y = spectral::deriv(&grid, &a[i], i - 1);
        for p in 0..npts {
            div_adot[p] += x[p];
            div_a[p] += y[p];
        }
    }
    let mut terms = vec![zeros(npts); 5];
    for p in 0..npts {
        terms[0][p] = -lap[p];
        terms[1][p] = -div_adot[p];
        terms[2][p] = C64::new((phi[p] * phidot[p].conj()).im, 0.0);
        terms[3][p] = a[0][p] * phi[p].norm_sqr();
        for (idx, e) in d.eikonal.iter().enumerate() {
            terms[4][p] -= e.vdot.comp(0)[p] * d.psi[idx].comp(0)[p].norm_sqr();
        }
    }
    let mut res: Vec<C64> = (0..npts).map(|p| terms.iter().map(|t| t[p]).sum()).collect();
    if phi.iter().all(|v| v.norm() == 0.0) {
        let mean = res.iter().sum::<C64>() / npts as f64;
        res.iter_mut().for_each(|v| *v -= mean);
    }
    let scale = terms.iter().map(|t| l2_norm(&grid, t)).fold(0.0, f64::max);
    let maxwell = rel(l2_norm(&grid, &res), scale);
    let lor: Vec<C64> = (0..npts).map(|p| adot[0][p] + div_a[p]).collect();
    let lorenz = rel(l2_norm(&grid, &lor), l2_norm(&grid, &adot[0]).max(l2_norm(&grid, &div_a)));
    let eikonal = d.eikonal.iter().map(|e| validate_eikonal_data(e, tol).eikonal_residual).fold(0.0, f64::max);
    let polarization: Vec<f64> = d
        .eikonal
        .iter()
        .zip(&d.w)
        .map(|(e, w)| {
            let grad = e.gradient();
            let mut r = zeros(npts);
            let mut s = 0.0f64;
            for p in 0..npts {
                let mut v = e.vdot.comp(0)[p].re * w.comp(0)[p];
                for i in 1..=dim {
                    v += grad[i - 1][p] * w.comp(i)[p];
                }
                r[p] = v;
            }
            for c in w.comps() {
                s = s.max(l2_norm(&grid, c));
            }
            rel(l2_norm(&grid, &r), s)
        })
        .collect();
    let support_ok = d.support_radius + t_final <= 0.5 * grid.l - 2.0 * grid.dx();
    let pass = maxwell <= tol
        && lorenz <= tol
        && eikonal <= tol
        && polarization.iter().all(|&v| v <= tol)
        && support_ok
        && d.eikonal.iter().all(|e| validate_eikonal_data(e, tol).pass);
    ConstraintReport { maxwell, lorenz, eikonal, polarization, neutrality_mean: d.neutrality_mean, support_ok, pass }
}

/// All background fields at one time level.
#[derive(Clone, Debug)]
pub struct BgLevel {
    /// Time of the level.
    pub t: f64,
    /// `A₀^α`.
    pub a: Comps,
    /// `Φ₀`.
    pub phi: Vec<C64>,
    /// `Ψ_A`.
    pub psi: Comps,
    /// `W_A^α`.
    pub w: Vec<Comps>,
}

/// Background fields with first and second time derivatives at one time.
#[derive(Clone, Debug)]
pub struct BgJets {
    /// Time.
    pub t: f64,
    /// `A₀^α`.
    pub a: Vec<Jet>,
    /// `Φ₀`.
    pub phi: Jet,
    /// `Ψ_A`.
    pub psi: Vec<Jet>,
    /// `W_A^α`.
    pub w: Vec<Vec<Jet>>,
}

/// Five consecutive levels centred on a checkpoint time.
#[derive(Clone, Debug)]
pub struct BgWindow {
    /// Centre time.
    pub t: f64,
    /// Time step.
    pub dt: f64,
    /// Levels at `t − 2dt, …, t + 2dt`.
    pub levels: Vec<BgLevel>,
}

fn stencil(vals: [&[C64]; 5], dt: f64) -> Jet {
    let n = vals[2].len();
    let mut j = Jet::zero(n);
    for p in 0..n {
        let (m2, m1, c, p1, p2) = (vals[0][p], vals[1][p], vals[2][p], vals[3][p], vals[4][p]);
        j.v[p] = c;
        j.vt[p] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * dt);
        j.vtt[p] = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * dt * dt);
    }
    j
}

impl BgWindow {
    /// Fourth-order finite-difference jets at the centre level.
    pub fn jets(&self) -> BgJets {
        let l = &self.levels;
        let pick = |f: &dyn Fn(&BgLevel) -> &[C64]| stencil([f(&l[0]), f(&l[1]), f(&l[2]), f(&l[3]), f(&l[4])], self.dt);
        let ncomp = l[2].a.len();
        BgJets {
            t: self.t,
            a: (0..ncomp).map(|c| pick(&|x: &BgLevel| &x.a[c])).collect(),
            phi: pick(&|x: &BgLevel| &x.phi),
            psi: (0..l[2].psi.len()).map(|a| pick(&|x: &BgLevel| &x.psi[a])).collect(),
            w: (0..l[2].w.len()).map(|a| (0..ncomp).map(|c| pick(&|x: &BgLevel| &x.w[a][c])).collect()).collect(),
        }
    }

    /// Centre level.
    pub fn center(&self) -> &BgLevel {
        &self.levels[2]
    }
}

/// `−k̂·∇f`, the spatial part of the transport operator divided by `2|k|`.
fn advect(grid: &Grid, k: &[f64; 3], f: &[C64]) -> Vec<C64> {
    let kn = knorm(k);
    spectral::apply_symbol(grid, f, |xi, nyq| {
        let mut s = 0.0;
        for a in 0..grid.dim {
            if !nyq[a] {
                s += k[a] * xi[a];
            }
        }
        C64::new(0.0, -s / kn)
    })
}

/// Time derivatives of `(Ψ_A, W_A)` from the transport equations, given the
/// wave fields at the same time.
pub fn transport_rate(grid: &Grid, ks: &[[f64; 3]], a: &Comps, phi: &[C64], psi: &Comps, w: &[Comps]) -> (Comps, Vec<Comps>) {
    let dim = grid.dim;
    let npts = grid.npts();
    let mut dpsi = Vec::with_capacity(ks.len());
    let mut dw = Vec::with_capacity(ks.len());
    for (idx, k) in ks.iter().enumerate() {
        let kn = knorm(k);
        let low = lower_gradient(k, dim);
        let up = upper_gradient(k, dim);
        let mut d = advect(grid, k, &psi[idx]);
        for p in 0..npts {
            let adu: C64 = (0..=dim).map(|al| a[al][p] * low[al]).sum();
            d[p] += -I * adu * psi[idx][p] / kn;
        }
        dpsi.push(d);
        let mut dwa = Vec::with_capacity(dim + 1);
        for beta in 0..=dim {
            let mut d = advect(grid, k, &w[idx][beta]);
            for p in 0..npts {
                d[p] += I * up[beta] * psi[idx][p].conj() * phi[p] / (2.0 * kn);
            }
            dwa.push(d);
        }
        dw.push(dwa);
    }
    (dpsi, dw)
}

/// Second time derivatives of `A₀^β` and `Φ₀` from the wave equations
/// (`f_tt = Δf − RHS`), given first time derivatives.
pub fn wave_accel(grid: &Grid, ks: &[[f64; 3]], a: &Comps, phi: &[C64], phidot: &[C64], psi: &Comps) -> (Comps, Vec<C64>) {
    let dim = grid.dim;
    let mut dphi = vec![phidot.to_vec()];
    dphi.extend(spectral::gradient(grid, phi));
    let (na, nphi) = kgml_rhs(a, &phi.to_vec(), &dphi);
    let lap_phi = spectral::laplacian(grid, phi);
    let phitt: Vec<C64> = lap_phi.iter().zip(&nphi).map(|(l, n)| l - n).collect();
    let mut att = Vec::with_capacity(dim + 1);
    for beta in 0..=dim {
        let lap = spectral::laplacian(grid, &a[beta]);
        let mut v: Vec<C64> = lap.iter().zip(&na[beta]).map(|(l, n)| l - n).collect();
        for (idx, k) in ks.iter().enumerate() {
            let up = upper_gradient(k, dim)[beta];
            for p in 0..v.len() {
                v[p] -= up * psi[idx][p].norm_sqr();
            }
        }
        att.push(v);
    }
    (att, phitt)
}

/// Time jets of every background field at `t = 0`, obtained by
/// differentiating the governing equations (no finite differences).
pub fn initial_jets(d: &BackgroundInitialData) -> BgJets {
    state_jets(&d.grid, &d.ks, &BgState::from_initial(d), 0.0)
}

/// Time jets of every background field of a state, from the governing
/// equations: `∂²_t` of the wave fields from the wave equations and `∂_t`,
/// `∂²_t` of the amplitudes from the (once differentiated) transport
/// equations.
pub fn state_jets(grid: &Grid, ks: &[[f64; 3]], s: &BgState, t: f64) -> BgJets {
    let (a, adot, phi, phidot, psi, w) = (&s.a, &s.adot, &s.phi, &s.phidot, &s.psi, &s.w);
    let (att, phitt) = wave_accel(grid, ks, a, phi, phidot, psi);
    let (psit, wt) = transport_rate(grid, ks, a, phi, psi, w);
    let dim = grid.dim;
    let npts = grid.npts();
    let mut psitt = Vec::with_capacity(ks.len());
    let mut wtt = Vec::with_capacity(ks.len());
    for (idx, k) in ks.iter().enumerate() {
        let kn = knorm(k);
        let low = lower_gradient(k, dim);
        let up = upper_gradient(k, dim);
        let mut dd = advect(grid, k, &psit[idx]);
        for p in 0..npts {
            let adu: C64 = (0..=dim).map(|al| a[al][p] * low[al]).sum();
            let adu_t: C64 = (0..=dim).map(|al| adot[al][p] * low[al]).sum();
            dd[p] += -I * (adu * psit[idx][p] + adu_t * psi[idx][p]) / kn;
        }
        psitt.push(dd);
        let mut wa = Vec::with_capacity(dim + 1);
        for beta in 0..=dim {
            let mut dd = advect(grid, k, &wt[idx][beta]);
            for p in 0..npts {
                dd[p] += I * up[beta] * (psit[idx][p].conj() * phi[p] + psi[idx][p].conj() * phidot[p]) / (2.0 * kn);
            }
            wa.push(dd);
        }
        wtt.push(wa);
    }
    let jet = |v: &Vec<C64>, vt: &Vec<C64>, vtt: &Vec<C64>| Jet { v: v.clone(), vt: vt.clone(), vtt: vtt.clone() };
    BgJets {
        t,
        a: (0..=dim).map(|c| jet(&a[c], &adot[c], &att[c])).collect(),
        phi: jet(phi, phidot, &phitt),
        psi: (0..ks.len()).map(|i| jet(&psi[i], &psit[i], &psitt[i])).collect(),
        w: (0..ks.len()).map(|i| (0..=dim).map(|c| jet(&w[i][c], &wt[i][c], &wtt[i][c])).collect()).collect(),
    }
}

/// Full background state: wave fields with their time derivatives plus the
/// transported amplitudes.
#[derive(Clone, Debug)]
pub struct BgState {
    /// `A₀^α`.
    pub a: Comps,
    /// `∂_tA₀^α`.
    pub adot: Comps,
    /// `Φ₀`.
    pub phi: Vec<C64>,
    /// `∂_tΦ₀`.
    pub phidot: Vec<C64>,
    /// `Ψ_A`.
    pub psi: Comps,
    /// `W_A^α`.
    pub w: Vec<Comps>,
}

impl BgState {
    /// State holding the initial data.
    pub fn from_initial(d: &BackgroundInitialData) -> BgState {
        BgState {
            a: d.a0.comps().to_vec(),
            adot: d.a0dot.comps().to_vec(),
            phi: d.phi0.comp(0).to_vec(),
            phidot: d.phi0dot.comp(0).to_vec(),
            psi: d.psi.iter().map(|f| f.comp(0).to_vec()).collect(),
            w: d.w.iter().map(|f| f.comps().to_vec()).collect(),
        }
    }

    /// `self + h·d`, field by field.
    pub fn axpy(&self, h: f64, d: &BgState) -> BgState {
        let v = |x: &[C64], y: &[C64]| -> Vec<C64> { x.iter().zip(y).map(|(p, q)| p + h * q).collect() };
        let c = |x: &Comps, y: &Comps| -> Comps { x.iter().zip(y).map(|(p, q)| v(p, q)).collect() };
        BgState {
            a: c(&self.a, &d.a),
            adot: c(&self.adot, &d.adot),
            phi: v(&self.phi, &d.phi),
            phidot: v(&self.phidot, &d.phidot),
            psi: c(&self.psi, &d.psi),
            w: self.w.iter().zip(&d.w).map(|(x, y)| c(x, y)).collect(),
        }
    }

    /// Every stored sample, in a fixed order.
    pub fn all_values(&self) -> impl Iterator<Item = &C64> {
        self.a
            .iter()
            .chain(&self.adot)
            .chain(std::iter::once(&self.phi))
            .chain(std::iter::once(&self.phidot))
            .chain(&self.psi)
            .chain(self.w.iter().flatten())
            .flatten()
    }
}

/// Time derivative of a background state under the background system.
pub fn rate(grid: &Grid, ks: &[[f64; 3]], s: &BgState) -> BgState {
    let (att, phitt) = wave_accel(grid, ks, &s.a, &s.phi, &s.phidot, &s.psi);
    let (psit, wt) = transport_rate(grid, ks, &s.a, &s.phi, &s.psi, &s.w);
    BgState { a: s.adot.clone(), adot: att, phi: s.phidot.clone(), phidot: phitt, psi: psit, w: wt }
}

/// Classical fourth-order Runge–Kutta integrator of the background system,
/// written as a first-order system in time with spectral space derivatives.
#[derive(Clone, Debug)]
pub struct BackgroundStepper {
    grid: Grid,
    ks: Vec<[f64; 3]>,
    step: usize,
    state: BgState,
    support_radius: Option<f64>,
}

impl BackgroundStepper {
    /// Start from initial data.
    pub fn new(d: &BackgroundInitialData) -> Result<Self> {
        Ok(BackgroundStepper {
            grid: d.grid,
            ks: d.ks.clone(),
            step: 0,
            state: BgState::from_initial(d),
            support_radius: Some(d.support_radius),
        })
    }

    /// Plain KGML integrator (no phases) from `(A, ∂_tA, Φ, ∂_tΦ)` at `t = 0`.
    pub fn kgml(grid: Grid, a: Comps, adot: Comps, phi: Vec<C64>, phidot: Vec<C64>) -> Result<Self> {
        let d = BackgroundInitialData {
            grid,
            ks: vec![],
            eikonal: vec![],
            a0: FieldArray::new(grid, a)?,
            a0dot: FieldArray::new(grid, adot)?,
            phi0: FieldArray::scalar(grid, phi)?,
            phi0dot: FieldArray::scalar(grid, phidot)?,
            psi: vec![],
            w: vec![],
            support_radius: 0.0,
            neutrality_mean: 0.0,
        };
        let mut s = BackgroundStepper::new(&d)?;
        s.support_radius = None;
        Ok(s)
    }

    /// Grid of the integrator.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Current time.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.grid.dt
    }

    /// Index of the current level.
    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Snapshot of the current level.
    pub fn level(&self) -> BgLevel {
        let s = &self.state;
        BgLevel { t: self.time(), a: s.a.clone(), phi: s.phi.clone(), psi: s.psi.clone(), w: s.w.clone() }
    }

    /// Current `(Φ, ∂_tΦ)`.
    pub fn phi_pair(&self) -> (&[C64], &[C64]) {
        (&self.state.phi, &self.state.phidot)
    }

    /// Current `(A, ∂_tA)`.
    pub fn a_pair(&self) -> (&Comps, &Comps) {
        (&self.state.a, &self.state.adot)
    }

    /// Advance one time step.
    pub fn advance(&mut self) -> Result<()> {
        let (grid, dt) = (self.grid, self.grid.dt);
        let s0 = &self.state;
        let k1 = rate(&grid, &self.ks, s0);
        let k2 = rate(&grid, &self.ks, &s0.axpy(0.5 * dt, &k1));
        let k3 = rate(&grid, &self.ks, &s0.axpy(0.5 * dt, &k2));
        let k4 = rate(&grid, &self.ks, &s0.axpy(dt, &k3));
        let next = s0.axpy(dt / 6.0, &k1).axpy(dt / 3.0, &k2).axpy(dt / 3.0, &k3).axpy(dt / 6.0, &k4);
        self.state = next;
        self.step += 1;
        if self.state.all_values().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Abort { time: self.time(), reason: "non-finite background field".into() });
        }
        Ok(())
    }

    /// Abort if a compactly supported field reaches the two boundary cells.
    pub fn check_support(&self) -> Result<()> {
        if self.support_radius.is_none() {
            return Ok(());
        }
        let grid = self.grid;
        let edge = 0.5 * grid.l - 2.0 * grid.dx() - 1e-12;
        let collar: Vec<usize> =
            (0..grid.npts()).filter(|&p| (0..grid.dim).any(|a| grid.coord(p)[a].abs() >= edge)).collect();
        let s = &self.state;
        let mut fields: Vec<&Vec<C64>> = vec![&s.phi];
        fields.extend(s.a.iter().skip(1));
        fields.extend(s.psi.iter());
        fields.extend(s.w.iter().flatten());
        for f in fields {
            let max = f.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let leak = collar.iter().fold(0.0f64, |m, &p| m.max(f[p].norm()));
            if max > 0.0 && leak > SUPPORT_LEAK_TOL * max {
                return Err(Error::Abort {
                    time: self.time(),
                    reason: format!("compact support reached the box boundary (relative size {:e})", leak / max),
                });
            }
        }
        Ok(())
    }
}

/// Scalar diagnostics recorded at every time step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesRow {
    /// Time.
    pub t: f64,
    /// `‖∂_αu_A W_A^α‖_{L²}` per phase.
    pub polarization: Vec<f64>,
    /// `‖∂_αA₀^α‖_{L²}` (fourth-order time stencil).
    pub lorenz: f64,
    /// `∫|Ψ_A|²(−∂⁰u_A)` per phase.
    pub psi_charge: Vec<f64>,
    /// Total Klein–Gordon charge `∫ Im(Φ₀ conj ∂_tΦ₀) + A₀⁰|Φ₀|²`.
    pub phi_charge: f64,
}

/// Background trajectory: checkpoint windows and per-step diagnostics.
#[derive(Clone, Debug)]
pub struct BackgroundState {
    /// Grid.
    pub grid: Grid,
    /// Plane-wave phase wavevectors.
    pub ks: Vec<[f64; 3]>,
    /// The phases as [`Phase`] objects.
    pub phases: Vec<Phase>,
    /// Existence time reached.
    pub t_final: f64,
    /// Five-level windows around each checkpoint.
    pub windows: Vec<BgWindow>,
    /// Per-step diagnostics (centre of the sliding window).
    pub series: Vec<SeriesRow>,
}

impl BackgroundState {
    /// Harmonic frame of the phase set.
    pub fn frame(&self) -> PlaneFrame {
        PlaneFrame::new(self.grid.dim, self.ks.clone()).expect("phase count validated at build")
    }

    /// Window whose centre is closest to `t`.
    pub fn window_at(&self, t: f64) -> Result<&BgWindow> {
        self.windows
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .filter(|w| (w.t - t).abs() <= 0.5 * self.grid.dt + 1e-12)
            .ok_or_else(|| Error::Config(format!("no background checkpoint at t = {t}")))
    }
}

fn series_row(grid: &Grid, ks: &[[f64; 3]], win: &[BgLevel]) -> SeriesRow {
    let dim = grid.dim;
    let npts = grid.npts();
    let dt = grid.dt;
    let c = &win[2];
    let d4 = |f: &dyn Fn(&BgLevel) -> &Vec<C64>, p: usize| {
        (-f(&win[4])[p] + 8.0 * f(&win[3])[p] - 8.0 * f(&win[1])[p] + f(&win[0])[p]) / (12.0 * dt)
    };
    let mut div = (0..npts).map(|p| d4(&|l: &BgLevel| &l.a[0], p)).collect::<Vec<_>>();
    for i in 1..=dim {
        let d = spectral::deriv(grid, &c.a[i], i - 1);
        div.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
    }
    let polarization = ks
        .iter()
        .enumerate()
        .map(|(a, k)| {
            let low = lower_gradient(k, dim);
            let v: Vec<C64> = (0..npts).map(|p| (0..=dim).map(|al| low[al] * c.w[a][al][p]).sum()).collect();
            l2_norm(grid, &v)
        })
        .collect();
    let psi_charge = ks
        .iter()
        .enumerate()
        .map(|(a, k)| knorm(k) * c.psi[a].iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume())
        .collect();
    let phi_charge = (0..npts)
        .map(|p| (c.phi[p] * d4(&|l: &BgLevel| &l.phi, p).conj()).im + c.a[0][p].re * c.phi[p].norm_sqr())
        .sum::<f64>()
        * grid.cell_volume();
    SeriesRow { t: c.t, polarization, lorenz: l2_norm(grid, &div), psi_charge, phi_charge }
}

/// Integrate the background to `t_final`, keeping five-level windows around
/// each checkpoint time (each must be at least two steps from either end).
pub fn evolve_background(d: &BackgroundInitialData, t_final: f64, checkpoints: &[f64]) -> Result<BackgroundState> {
    let grid = d.grid;
    if d.support_radius > 0.0 && d.support_radius + t_final > 0.5 * grid.l - 2.0 * grid.dx() {
        return Err(Error::Config(format!(
            "support radius {} + T {} does not fit in the box of half-width {}",
            d.support_radius,
            t_final,
            0.5 * grid.l
        )));
    }
    PlaneFrame::new(grid.dim, d.ks.clone())?;
    let dt = grid.dt;
    let last = (t_final / dt).round() as usize;
    let mut wanted: Vec<usize> = checkpoints.iter().map(|t| (t / dt).round() as usize).collect();
    wanted.sort_unstable();
    wanted.dedup();
    if wanted.iter().any(|&n| n < 2) {
        return Err(Error::Config("checkpoints must lie at least two steps after t = 0".into()));
    }
    let end = last.max(wanted.last().map_or(0, |n| n + 2));
    let mut stepper = BackgroundStepper::new(d)?;
    let mut ring: VecDeque<BgLevel> = VecDeque::with_capacity(5);
    ring.push_back(stepper.level());
    let mut windows = Vec::new();
    let mut series = Vec::new();
    for n in 1..=end {
        stepper.advance()?;
        if n % 16 == 0 || n == end {
            stepper.check_support()?;
        }
        if ring.len() == 5 {
            ring.pop_front();
        }
        ring.push_back(stepper.level());
        if ring.len() == 5 {
            let levels: Vec<BgLevel> = ring.iter().cloned().collect();
            series.push(series_row(&grid, &d.ks, &levels));
            let centre = n - 2;
            if wanted.binary_search(&centre).is_ok() {
                windows.push(BgWindow { t: centre as f64 * dt, dt, levels });
            }
        }
    }
    Ok(BackgroundState {
        grid,
        ks: d.ks.clone(),
        phases: d.ks.iter().map(|k| Phase::plane(grid, *k, t_final)).collect(),
        t_final: end as f64 * dt,
        windows,
        series,
    })
}

/// Diagnostics of one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticRow {
    /// Time.
    pub t: f64,
    /// `‖∂_αu_A W_A^α‖` per phase.
    pub polarization: Vec<f64>,
    /// `‖∂_αA₀^α‖`.
    pub lorenz: f64,
    /// `‖ℒ_A|Ψ_A|‖` per phase.
    pub charge_transport: Vec<f64>,
    /// `‖D‖` with `D = □A₀ − 𝒩_A(A₀, Φ₀)` the Maxwell defect of the background.
    pub maxwell_defect: f64,
    /// `‖Σ_A ∂^βu_A|Ψ_A|²‖`.
    pub flux_norm: f64,
    /// `‖D − Σ_A ∂^βu_A|Ψ_A|²‖ / ‖flux‖` (absolute if the flux vanishes).
    pub defect_flux_error: f64,
    /// `‖D‖ / ‖□A₀‖` (scale of the defect against the equation's terms).
    pub defect_relative: f64,
    /// Residuals of the five null-transport equations: Maxwell with charges,
    /// covariant Klein–Gordon, geodesic, null, charge transport.
    pub null_transport: [f64; 5],
}

/// Per-checkpoint polarisation, gauge, charge-transport and null-transport
/// diagnostics of a background trajectory.
pub fn background_diagnostics(s: &BackgroundState) -> Vec<DiagnosticRow> {
    let grid = s.grid;
    let dim = grid.dim;
    let npts = grid.npts();
    s.windows
        .iter()
        .map(|win| {
            let j = win.jets();
            let a: Comps = j.a.iter().map(|x| x.v.clone()).collect();
            let mut dphi = vec![j.phi.vt.clone()];
            dphi.extend(spectral::gradient(&grid, &j.phi.v));
            let (na, nphi) = kgml_rhs(&a, &j.phi.v, &dphi);
            let boxf = |x: &Jet| -> Vec<C64> {
                let lap = spectral::laplacian(&grid, &x.v);
                lap.iter().zip(&x.vtt).map(|(l, t)| l - t).collect()
            };
            let mut defect = Vec::with_capacity(dim + 1);
            let mut flux = Vec::with_capacity(dim + 1);
            let mut box_a = Vec::with_capacity(dim + 1);
            for beta in 0..=dim {
                let b = boxf(&j.a[beta]);
                defect.push(b.iter().zip(&na[beta]).map(|(x, y)| x - y).collect::<Vec<_>>());
                let mut fl = zeros(npts);
                for (idx, k) in s.ks.iter().enumerate() {
                    let up = upper_gradient(k, dim)[beta];
                    for p in 0..npts {
                        fl[p] += up * j.psi[idx].v[p].norm_sqr();
                    }
                }
                flux.push(fl);
                box_a.push(b);
            }
            let diff: Comps =
                defect.iter().zip(&flux).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
            let flux_norm = l2_norm_comps(&grid, &flux);
            let diff_norm = l2_norm_comps(&grid, &diff);
            let defect_norm = l2_norm_comps(&grid, &defect);
            let mut div = j.a[0].vt.clone();
            for i in 1..=dim {
                let d = spectral::deriv(&grid, &j.a[i].v, i - 1);
                div.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            }
            let box_phi = boxf(&j.phi);
            let kg: Vec<C64> =
                (0..npts).map(|p| box_phi[p] - nphi[p] + I * div[p] * j.phi.v[p]).collect();
            let charge_transport: Vec<f64> = s
                .ks
                .iter()
                .enumerate()
                .map(|(idx, k)| {
                    let m = &j.psi[idx];
                    let abs: Vec<C64> = m.v.iter().map(|v| C64::new(v.norm(), 0.0)).collect();
                    let abs_t: Vec<C64> = (0..npts)
                        .map(|p| {
                            let n = m.v[p].norm();
                            if n == 0.0 {
                                C64::new(0.0, 0.0)
                            } else {
                                C64::new((m.v[p].conj() * m.vt[p]).re / n, 0.0)
                            }
                        })
                        .collect();
                    // ℒ|Ψ| = 2(|k|∂_t + k·∇)|Ψ| for a plane wave.
                    let up = upper_gradient(k, dim);
                    let grad = spectral::gradient(&grid, &abs);
                    let r: Vec<C64> = (0..npts)
                        .map(|p| {
                            let mut v = 2.0 * up[0] * abs_t[p];
                            for i in 1..=dim {
                                v += 2.0 * up[i] * grad[i - 1][p];
                            }
                            v
                        })
                        .collect();
                    l2_norm(&grid, &r)
                })
                .collect();
            let geodesic = 0.0;
            let null = s
                .ks
                .iter()
                .map(|k| {
                    let up = upper_gradient(k, dim);
                    (-up[0] * up[0] + up[1..].iter().map(|v| v * v).sum::<f64>()).abs()
                })
                .fold(0.0, f64::max);
            let polarization = s
                .ks
                .iter()
                .enumerate()
                .map(|(idx, k)| {
                    let low = lower_gradient(k, dim);
                    let v: Vec<C64> = (0..npts).map(|p| (0..=dim).map(|al| low[al] * j.w[idx][al].v[p]).sum()).collect();
                    l2_norm(&grid, &v)
                })
                .collect();
            DiagnosticRow {
                t: win.t,
                polarization,
                lorenz: l2_norm(&grid, &div),
                charge_transport: charge_transport.clone(),
                maxwell_defect: defect_norm,
                flux_norm,
                defect_flux_error: rel(diff_norm, flux_norm),
                defect_relative: rel(defect_norm, l2_norm_comps(&grid, &box_a)),
                null_transport: [diff_norm, l2_norm(&grid, &kg), geodesic, null, charge_transport.iter().cloned().fold(0.0, f64::max)],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, cfl: f64) -> Grid {
        Grid::new(1, n, 16.0, cfl).unwrap()
    }

    #[test]
    fn zero_data_stay_zero() {
        let g = grid(128, 0.1);
        let d = BackgroundPreset::zero().build(g, &[[1.0, 0.0, 0.0]]).unwrap();
        let rep = check_background_constraints(&d, 1e-12, 1.0);
        assert!(rep.pass && rep.maxwell == 0.0);
        let s = evolve_background(&d, 1.0, &[0.5]).unwrap();
        let l = s.windows[0].center();
        assert!(l.a.iter().chain(&l.psi).chain(l.w.iter().flatten()).flatten().all(|v| v.norm() == 0.0));
        assert!(l.phi.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn transverse_polarisation_in_2d_has_zero_residual() {
        let g = Grid::new(2, 32, 16.0, 0.2).unwrap();
        let mut d = BackgroundPreset::zero().build(g, &[[1.0, 0.0, 0.0]]).unwrap();
        let bump = gaussian(&g, [0.0; 3], 0.5);
        let mut w = vec![zeros(g.npts()); 3];
        w[2] = bump.iter().map(|&v| C64::new(v, 0.0)).collect();
        d.w = vec![FieldArray::new(g, w).unwrap()];
        assert_eq!(check_background_constraints(&d, 1e-12, 1.0).polarization[0], 0.0);
    }

    #[test]
    fn charged_data_pass_constraints() {
        let g = grid(256, 0.1);
        for preset in [BackgroundPreset::default(), BackgroundPreset { phi_amp: 0.0, a_amp: 0.0, adot_amp: 0.0, ..Default::default() }] {
            let d = preset.build(g, &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
            let rep = check_background_constraints(&d, 1e-8, 2.0);
            assert!(rep.pass, "{rep:?}");
        }
        // Without φ₀ the Gauss source is not neutral; the removed mean is reported.
        let d = BackgroundPreset { phi_amp: 0.0, ..Default::default() }.build(g, &[[1.0, 0.0, 0.0]]).unwrap();
        assert!(d.neutrality_mean > 0.0);
    }

    #[test]
    fn free_standing_wave_matches_closed_form() {
        let run = |cfl: f64| {
            let g = grid(64, cfl);
            let m = 2.0 * std::f64::consts::PI * 3.0 / g.l;
            let npts = g.npts();
            let a1: Vec<C64> = g.coords().iter().map(|x| C64::new((m * x[0]).cos(), 0.0)).collect();
            let mut st =
                BackgroundStepper::kgml(g, vec![zeros(npts), a1], vec![zeros(npts); 2], zeros(npts), zeros(npts)).unwrap();
            let steps = (1.0 / g.dt).round() as usize;
            for _ in 0..steps {
                st.advance().unwrap();
            }
            let t = st.time();
            let err: Vec<C64> = g
                .coords()
                .iter()
                .zip(&st.level().a[1])
                .map(|(x, v)| v - (m * x[0]).cos() * (m * t).cos())
                .collect();
            l2_norm(&g, &err)
        };
        let (e1, e2) = (run(0.2), run(0.1));
        assert!(e1 < 1e-3, "{e1}");
        assert!(e1 / e2 > 3.8, "{e1} → {e2}");
    }

    #[test]
    fn amplitude_modulus_is_advected_along_rays() {
        let g = grid(256, 0.05);
        let d = BackgroundPreset { phi_amp: 0.0, a_amp: 0.0, adot_amp: 0.0, w_amp: [0.0, 0.0], ..Default::default() }
            .build(g, &[[2.0, 0.0, 0.0]])
            .unwrap();
        let s = evolve_background(&d, 2.0, &[1.5]).unwrap();
        let abs0: Vec<C64> = d.psi[0].comp(0).iter().map(|v| C64::new(v.norm(), 0.0)).collect();
        let expect = spectral::translate(&g, &abs0, [1.5, 0.0, 0.0]);
        let got = &s.window_at(1.5).unwrap().center().psi[0];
        let err = got.iter().zip(&expect).map(|(a, b)| (a.norm() - b.re).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let q: Vec<f64> = s.series.iter().map(|r| r.psi_charge[0]).collect();
        let spread = q.iter().fold(0.0f64, |m, v| m.max((v - q[0]).abs())) / q[0];
        assert!(spread < 1e-10, "{spread}");
    }

    #[test]
    fn backreaction_defect_equals_flux() {
        let g = grid(256, 0.05);
        let d = BackgroundPreset::default().build(g, &[[1.0, 0.0, 0.0]]).unwrap();
        let s = evolve_background(&d, 1.0, &[0.5, 1.0]).unwrap();
        for row in background_diagnostics(&s) {
            assert!(row.defect_flux_error < 1e-3, "{row:?}");
            assert!(row.flux_norm > 0.1);
            assert!(row.polarization[0] < 1e-10);
            assert!(row.lorenz < 1e-4, "{row:?}");
            assert!(row.charge_transport[0] < 1e-6, "{row:?}");
        }
    }

    #[test]
    fn polarisation_and_charge_are_propagated() {
        // Charge drifts with the Lorenz defect, which RK4 keeps at O(dt⁴).
        let g = grid(256, 0.05);
        let d = BackgroundPreset::default().build(g, &[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let s = evolve_background(&d, 1.0, &[]).unwrap();
        let q0 = s.series[0].phi_charge;
        for r in &s.series {
            assert!(r.polarization.iter().all(|&v| v < 1e-10));
            assert!((r.phi_charge - q0).abs() < 1e-6 * q0.abs(), "{} vs {q0}", r.phi_charge);
        }
    }

    #[test]
    fn w_data_do_not_feed_back() {
        let g = grid(128, 0.1);
        let ks = [[1.0, 0.0, 0.0]];
        let d1 = BackgroundPreset::default().build(g, &ks).unwrap();
        let d2 = BackgroundPreset { w_amp: [-1.0, 0.7], ..Default::default() }.build(g, &ks).unwrap();
        let (s1, s2) = (evolve_background(&d1, 0.5, &[0.4]).unwrap(), evolve_background(&d2, 0.5, &[0.4]).unwrap());
        let (l1, l2) = (s1.windows[0].center(), s2.windows[0].center());
        assert_eq!(l1.a, l2.a);
        assert_eq!(l1.phi, l2.phi);
        assert_eq!(l1.psi, l2.psi);
        assert_ne!(l1.w, l2.w);
    }

    #[test]
    fn support_breach_aborts() {
        let g = grid(128, 0.1);
        let d = BackgroundPreset::default().build(g, &[[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(evolve_background(&d, 6.0, &[]), Err(Error::Config(_))));
    }
}
