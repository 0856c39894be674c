//! Error-term initial data: the perturbed-Laplacian solver used for every
//! elliptic constraint, the gauge-compatible time derivative ż⁰, the
//! closed-form z⁰ᴮᴵˢ, the constrained assembly z⁰ = z⁰ᴮᴵˢ + z⁰ᵀᴱᴿ and the
//! split of the constrained data into admissible error parameters.

use serde::{Deserialize, Serialize};

use crate::background::{gaussian, initial_jets, BackgroundInitialData, BgState, SUPPORT_FACTOR};
use crate::error_evolution::{transport_dt, CoupledSystem, ErrorState};
use crate::fields::osc::{Jet, PlaneFrame};
use crate::fields::{l2_norm, spectral, FieldArray, Grid};
use crate::parametrix::{build_e_ell, first_order_jets, interaction_terms};
use crate::phases::InteractionTable;
use crate::{Error, Result, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Outcome of a perturbed-Laplacian solve.
#[derive(Clone, Debug)]
pub struct EllipticSolution {
    /// Solution `f`.
    pub f: Vec<C64>,
    /// Mean of `h` removed before a pure-Laplacian inversion (zero otherwise).
    pub projected_mean: C64,
    /// Conjugate-gradient iterations used (0 for the direct branches).
    pub iterations: usize,
    /// Final relative residual `‖(−Δ+g)f − h‖ / ‖h‖`.
    pub relative_residual: f64,
}

/// Largest CG iteration count before reporting non-convergence.
pub const MAX_CG_ITERATIONS: usize = 2000;

fn apply_operator(grid: &Grid, g: &[f64], f: &[C64]) -> Vec<C64> {
    let lap = spectral::laplacian(grid, f);
    lap.iter().zip(f).zip(g).map(|((l, v), w)| -l + w * v).collect()
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solve `(−Δ + g) f = h` on the periodic box.
///
/// For `g ≢ 0` the solve is conjugate gradients preconditioned by the
/// spectral inverse of `−Δ + ḡ`, `ḡ` the mean of `g`. For `g ≡ 0` the
/// mean-zero pseudo-inverse of `−Δ` is applied after projecting out the mean
/// of `h`, which is returned as `projected_mean`.
pub fn solve_perturbed_laplacian_projected(grid: &Grid, g: &[f64], h: &[C64], tol: f64) -> Result<EllipticSolution> {
    if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidField { name: "g".into(), reason: "must be finite and nonnegative".into() });
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidField { name: "h".into(), reason: "non-finite sample".into() });
    }
    let hn = l2_norm(grid, h);
    let zero = vec![C64::new(0.0, 0.0); h.len()];
    if hn == 0.0 {
        return Ok(EllipticSolution { f: zero, projected_mean: C64::new(0.0, 0.0), iterations: 0, relative_residual: 0.0 });
    }
    let gbar = g.iter().sum::<f64>() / g.len() as f64;
    if g.iter().all(|&v| v == 0.0) {
        let mean = h.iter().sum::<C64>() / h.len() as f64;
        let f = spectral::apply_symbol(grid, h, |xi, _| {
            let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            if q == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0 / q, 0.0)
            }
        });
        let hp: Vec<C64> = h.iter().map(|v| v - mean).collect();
        let r: Vec<C64> = apply_operator(grid, g, &f).iter().zip(&hp).map(|(a, b)| a - b).collect();
        return Ok(EllipticSolution {
            relative_residual: l2_norm(grid, &r) / hn,
            f,
            projected_mean: mean,
            iterations: 0,
        });
    }
    let precond = |r: &[C64]| spectral::apply_symbol(grid, r, |xi, _| C64::new(1.0 / (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] + gbar), 0.0));
    let mut f = precond(h);
    let mut r: Vec<C64> = h.iter().zip(apply_operator(grid, g, &f)).map(|(a, b)| a - b).collect();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = inner(&r, &z);
    for it in 0..MAX_CG_ITERATIONS {
        let res = l2_norm(grid, &r) / hn;
        if res <= tol {
            return Ok(EllipticSolution { f, projected_mean: C64::new(0.0, 0.0), iterations: it, relative_residual: res });
        }
        let ap = apply_operator(grid, g, &p);
        let alpha = rz / inner(&p, &ap);
        for i in 0..f.len() {
            f[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precond(&r);
        let rz_new = inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence(format!(
        "perturbed Laplacian: residual {:e} after {MAX_CG_ITERATIONS} iterations",
        l2_norm(grid, &r) / hn
    )))
}

/// Solve `(−Δ + g) f = h` to relative residual `tol`; with `g ≡ 0`, `h` must
/// have zero mean (net neutrality on the torus).
pub fn solve_perturbed_laplacian(grid: &Grid, g: &[f64], h: &[C64], tol: f64) -> Result<Vec<C64>> {
    let sol = solve_perturbed_laplacian_projected(grid, g, h, tol)?;
    let hn = l2_norm(grid, h);
    if sol.projected_mean.norm() * grid.volume().sqrt() > tol * hn {
        return Err(Error::Neutrality { mean: sol.projected_mean.norm() });
    }
    Ok(sol.f)
}

/// Free (unconstrained) part of the error initial data: the spatial
/// potential `z^i`, its time derivative `ż^i`, and the scalar pair `(ζ, ζ̇)`.
#[derive(Clone, Debug)]
pub struct FreeErrorData {
    /// Wavelength parameter.
    pub lambda: f64,
    /// `z^i` (real, one sample vector per spatial component).
    pub z: Vec<Vec<C64>>,
    /// `ż^i` (real, one sample vector per spatial component).
    pub zdot: Vec<Vec<C64>>,
    /// `ζ`.
    pub zeta: FieldArray,
    /// `ζ̇`.
    pub zetadot: FieldArray,
}

/// Generator of free data: Gaussian bumps of amplitude `λ^{1/2}·amp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeDataPreset {
    /// Bump width.
    pub sigma: f64,
    /// Bump centre along `x₁`.
    pub center: f64,
    /// Amplitude of `z^i` (before the `λ^{1/2}` factor).
    pub z_amp: f64,
    /// Amplitude of `ż^i`.
    pub zdot_amp: f64,
    /// Complex amplitude `(re, im)` of `ζ`.
    pub zeta_amp: [f64; 2],
    /// Complex amplitude `(re, im)` of `ζ̇`.
    pub zetadot_amp: [f64; 2],
    /// Drift speed `c` along `x₁`: `ζ̇` receives the extra term `−c ∂₁ζ`,
    /// so the scalar bump initially moves with the rays of a phase
    /// travelling in `+x₁` when `c = 1`.
    pub zeta_speed: f64,
    /// Remove the divergence part of `ż^i` spectrally.
    pub clean_divergence: bool,
}

impl Default for FreeDataPreset {
    fn default() -> Self {
        FreeDataPreset {
            sigma: 0.5,
            center: 0.0,
            z_amp: 0.5,
            zdot_amp: 0.5,
            zeta_amp: [0.5, 0.0],
            zetadot_amp: [0.0, 0.0],
            zeta_speed: 1.0,
            clean_divergence: true,
        }
    }
}

impl FreeDataPreset {
    /// Preset with every amplitude zero.
    pub fn zero() -> Self {
        FreeDataPreset { z_amp: 0.0, zdot_amp: 0.0, zeta_amp: [0.0; 2], zetadot_amp: [0.0; 2], ..Self::default() }
    }

    /// Radius of the ball holding the bumps.
    pub fn support_radius(&self) -> f64 {
        self.center.abs() + SUPPORT_FACTOR * self.sigma
    }

    /// Sample the free data on a grid.
    pub fn build(&self, grid: Grid, lambda: f64) -> Result<FreeErrorData> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("λ must be positive, got {lambda}")));
        }
        let dim = grid.dim;
        let s = lambda.sqrt();
        let g = gaussian(&grid, [self.center, 0.0, 0.0], self.sigma);
        let coords = grid.coords();
        let real = |amp: f64, i: usize| -> Vec<C64> {
            let scale = if i == 0 { 1.0 } else { 0.5 };
            (0..grid.npts()).map(|p| C64::new(s * amp * scale * g[p] * (1.0 + 0.3 * coords[p][0]), 0.0)).collect()
        };
        let z: Vec<Vec<C64>> = (0..dim).map(|i| real(self.z_amp, i)).collect();
        let mut zdot: Vec<Vec<C64>> = (0..dim).map(|i| real(self.zdot_amp, i)).collect();
        if self.clean_divergence {
            zdot = divergence_free_part(&grid, &zdot);
        }
        // Odd envelope: with real `ζ` and imaginary `ζ̇` amplitudes the
        // charge the free data add against an even background has zero
        // mean, which keeps the elliptic part of `z⁰` from spreading over
        // the whole box.
        let cplx = |a: [f64; 2]| -> Vec<C64> {
            (0..grid.npts()).map(|p| s * C64::new(a[0], a[1]) * g[p] * (coords[p][0] - self.center) / self.sigma).collect()
        };
        let zeta = cplx(self.zeta_amp);
        let drift = spectral::deriv(&grid, &zeta, 0);
        let zetadot: Vec<C64> = cplx(self.zetadot_amp).iter().zip(&drift).map(|(a, b)| a - self.zeta_speed * b).collect();
        Ok(FreeErrorData {
            lambda,
            z,
            zdot,
            zetadot: FieldArray::scalar(grid, zetadot)?,
            zeta: FieldArray::scalar(grid, zeta)?,
        })
    }
}

/// Divergence-free part `v − ∇Δ^{-1}∇·v` of a spatial vector field, with the
/// mean removed (in one dimension this is zero).
pub fn divergence_free_part(grid: &Grid, v: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let dim = grid.dim;
    let mut spec: Vec<Vec<C64>> = v.to_vec();
    for c in spec.iter_mut() {
        spectral::forward(grid, c);
    }
    for idx in 0..grid.npts() {
        let (xi, nyq) = spectral::wavevector(grid, idx);
        let q: f64 = (0..dim).map(|a| xi[a] * xi[a]).sum();
        if q == 0.0 || nyq[..dim].iter().any(|&b| b) {
            for c in spec.iter_mut() {
                c[idx] = C64::new(0.0, 0.0);
            }
            continue;
        }
        let dot: C64 = (0..dim).map(|a| xi[a] * spec[a][idx]).sum();
        for a in 0..dim {
            let corr = dot * (xi[a] / q);
            spec[a][idx] -= corr;
        }
    }
    for c in spec.iter_mut() {
        spectral::inverse(grid, c);
        c.iter_mut().for_each(|z| z.im = 0.0);
    }
    spec
}

fn divergence(grid: &Grid, v: &[Vec<C64>]) -> Vec<C64> {
    let mut d = vec![C64::new(0.0, 0.0); grid.npts()];
    for (i, c) in v.iter().enumerate() {
        let di = spectral::deriv(grid, c, i);
        d.iter_mut().zip(&di).for_each(|(x, y)| *x += y);
    }
    d
}

/// First-order fields `A₁`, `∂_tA₁`, `Φ₁`, `∂_tΦ₁` at `t = 0`.
#[derive(Clone, Debug)]
pub struct FirstOrderData {
    /// `A₁^α`.
    pub a: Vec<Vec<C64>>,
    /// `∂_tA₁^α`.
    pub a_t: Vec<Vec<C64>>,
    /// `Φ₁`.
    pub phi: Vec<C64>,
    /// `∂_tΦ₁`.
    pub phi_t: Vec<C64>,
}

/// Evaluate the first-order expansion and its time derivative at `t = 0`.
pub fn first_order_data(bg: &BackgroundInitialData, lambda: f64) -> Result<FirstOrderData> {
    let frame = PlaneFrame::new(bg.grid.dim, bg.ks.clone())?;
    let jets = initial_jets(bg);
    let fo = first_order_jets(&jets, &frame, bg.grid);
    Ok(FirstOrderData {
        a: fo.a.iter().map(|f| f.value().eval(&frame, lambda, 0.0)).collect(),
        a_t: fo.a.iter().map(|f| f.deriv(&frame, 0).eval(&frame, lambda, 0.0)).collect(),
        phi: fo.phi.value().eval(&frame, lambda, 0.0),
        phi_t: fo.phi.deriv(&frame, 0).eval(&frame, lambda, 0.0),
    })
}

/// `ż⁰ = −∂_iz^i − λ^{1/2} Σ_A Re(e^{iv_A/λ} conj(∂_αW_A^α)|_{t=0})`, the
/// choice that makes the assembled potential satisfy the Lorenz condition at
/// `t = 0` (the background satisfies it by admissibility).
pub fn gauge_time_derivative(free: &FreeErrorData, bg: &BackgroundInitialData) -> Result<FieldArray> {
    let grid = bg.grid;
    let lam = free.lambda;
    let frame = PlaneFrame::new(grid.dim, bg.ks.clone())?;
    let jets = initial_jets(bg);
    let mut out: Vec<C64> = divergence(&grid, &free.z).iter().map(|v| -v).collect();
    for a in 0..bg.ks.len() {
        let dw = w_divergence(&grid, &jets.w[a]);
        let e = crate::error_evolution::plane_factor(&grid, &frame, &crate::error_evolution::single_harmonic(a), lam, 0.0);
        for p in 0..grid.npts() {
            out[p] -= lam.sqrt() * (e[p] * dw[p].conj()).re;
        }
    }
    out.iter_mut().for_each(|v| v.im = 0.0);
    FieldArray::scalar(grid, out)
}

/// `∂_αW^α = ∂_tW⁰ + ∂_iW^i` from a jet of the amplitude.
fn w_divergence(grid: &Grid, w: &[Jet]) -> Vec<C64> {
    let mut d = w[0].vt.clone();
    for i in 1..=grid.dim {
        let di = spectral::deriv(grid, &w[i].v, i - 1);
        d.iter_mut().zip(&di).for_each(|(x, y)| *x += y);
    }
    d
}

/// Closed-form approximate solution `z⁰ᴮᴵˢ` of the Maxwell constraint that
/// removes its `O(λ^{-1/2})` and `O(1)` oscillations:
///
/// ```text
/// z⁰ᴮᴵˢ = λ^{3/2} Σ_A v̇_A [Re(i e^{iv_A/λ} conj ∂_αW_A^α) + Im(i ζ conj ψ_A e^{-iv_A/λ})] / |∇v_A|²
///       + λ² Σ_{pairs} Σ_{θ = v_A ± v_B} 2Re(c⁰_θ e^{iθ/λ}) / |∇θ|²
/// ```
///
/// where `c⁰_θ` is the time component of the Maxwell interaction
/// coefficient. Combined phases with `∇θ ≡ 0` (sum of anti-parallel
/// phases) are non-oscillating in space and left to `z⁰ᵀᴱᴿ`.
pub fn build_z0bis(free: &FreeErrorData, bg: &BackgroundInitialData, table: &InteractionTable) -> Result<FieldArray> {
    let grid = bg.grid;
    let lam = free.lambda;
    let npts = grid.npts();
    let frame = PlaneFrame::new(grid.dim, bg.ks.clone())?;
    let jets = initial_jets(bg);
    let mut out = vec![C64::new(0.0, 0.0); npts];
    let zeta = free.zeta.comp(0);
    for (a, k) in bg.ks.iter().enumerate() {
        let n = crate::error_evolution::single_harmonic(a);
        let grad2: f64 = k.iter().map(|v| v * v).sum();
        if grad2 < 0.5 * table.eta0 {
            return Err(Error::PhaseSet(format!("phase {a}: |∇v|² = {grad2:e} below η₀/2")));
        }
        let vdot = frame.covector(&n)[0];
        let dw = w_divergence(&grid, &jets.w[a]);
        let e = crate::error_evolution::plane_factor(&grid, &frame, &n, lam, 0.0);
        let psi = &jets.psi[a].v;
        let c = lam.powf(1.5) * vdot / grad2;
        for p in 0..npts {
            out[p] += c * ((I * e[p] * dw[p].conj()).re + (I * zeta[p] * psi[p].conj() * e[p].conj()).im);
        }
    }
    let terms = interaction_terms(&jets, &bg.ks, table, grid);
    for term in &terms.terms {
        let s = frame.spatial(&term.harmonic);
        let grad2: f64 = s.iter().map(|v| v * v).sum();
        if grad2 == 0.0 {
            continue;
        }
        if grad2 < 0.5 * table.eta0 {
            return Err(Error::PhaseSet(format!(
                "combined phase of pair ({}, {}) has |∇θ|² = {grad2:e} below η₀/2",
                term.a, term.b
            )));
        }
        let e = crate::error_evolution::plane_factor(&grid, &frame, &term.harmonic, lam, 0.0);
        let c = lam * lam / grad2;
        for p in 0..npts {
            out[p] += c * term.maxwell[0].v[p] * e[p];
        }
    }
    out.iter_mut().for_each(|v| v.im = 0.0);
    FieldArray::scalar(grid, out)
}

/// Maxwell constraint `ΔA⁰ + ∂_iȦ^i − Im(φ conj φ̇) − A⁰|φ|²` of a full
/// data set.
pub fn maxwell_constraint(grid: &Grid, a: &[Vec<C64>], adot: &[Vec<C64>], phi: &[C64], phidot: &[C64]) -> Vec<C64> {
    let lap = spectral::laplacian(grid, &a[0]);
    let div = divergence(grid, &adot[1..]);
    (0..grid.npts())
        .map(|p| {
            C64::new(lap[p].re + div[p].re - (phi[p] * phidot[p].conj()).im - a[0][p].re * phi[p].norm_sqr(), 0.0)
        })
        .collect()
}

/// Maxwell-constraint source `h` of the data with `z⁰ = 0`: the right-hand
/// side of `(−Δ + |Φ₁ + ζ|²) z⁰ = h`.
pub fn constraint_source(free: &FreeErrorData, bg: &BackgroundInitialData) -> Result<Vec<C64>> {
    let grid = bg.grid;
    let fo = first_order_data(bg, free.lambda)?;
    let zdot0 = gauge_time_derivative(free, bg)?;
    let mut z: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); grid.npts()]];
    z.extend(free.z.iter().cloned());
    let mut zdot: Vec<Vec<C64>> = vec![zdot0.comp(0).to_vec()];
    zdot.extend(free.zdot.iter().cloned());
    let add = |x: &[Vec<C64>], y: &[Vec<C64>]| -> Vec<Vec<C64>> {
        x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + v).collect()).collect()
    };
    let phi: Vec<C64> = fo.phi.iter().zip(free.zeta.comp(0)).map(|(u, v)| u + v).collect();
    let phidot: Vec<C64> = fo.phi_t.iter().zip(free.zetadot.comp(0)).map(|(u, v)| u + v).collect();
    Ok(maxwell_constraint(&grid, &add(&fo.a, &z), &add(&fo.a_t, &zdot), &phi, &phidot))
}

/// Make the total charge of the data vanish by adding `iαφ₀` to `ζ̇`.
///
/// On the torus the Maxwell constraint integrates to `∫|φ|² z⁰ = ∫h`, so a
/// net charge `∫h ≠ 0` forces a spatially constant part of `z⁰` of size
/// `∫h / ∫|φ|²`, which is large when `|φ|²` is small. The source is affine
/// in `ζ̇` and `ζ̇ ↦ ζ̇ + iαφ₀` shifts `∫h` by `α∫Re(φ conj φ₀)`, so `α` is
/// found exactly from two evaluations. Returns the corrected data and `α`.
pub fn neutralize_charge(free: &FreeErrorData, bg: &BackgroundInitialData) -> Result<(FreeErrorData, f64)> {
    let h0: f64 = constraint_source(free, bg)?.iter().map(|v| v.re).sum();
    let phi0 = bg.phi0.comp(0);
    let shifted = |alpha: f64| -> Result<FreeErrorData> {
        let zd: Vec<C64> = free.zetadot.comp(0).iter().zip(phi0).map(|(z, p)| z + I * alpha * p).collect();
        Ok(FreeErrorData { zetadot: FieldArray::scalar(bg.grid, zd)?, ..free.clone() })
    };
    let h1: f64 = constraint_source(&shifted(1.0)?, bg)?.iter().map(|v| v.re).sum();
    if (h1 - h0).abs() <= f64::EPSILON * h0.abs().max(1.0) {
        return Ok((free.clone(), 0.0));
    }
    let alpha = -h0 / (h1 - h0);
    Ok((shifted(alpha)?, alpha))
}

/// Constrained error initial data `(z^α, ż^α, ζ, ζ̇)`.
#[derive(Clone, Debug)]
pub struct ConstrainedErrorData {
    /// Wavelength parameter.
    pub lambda: f64,
    /// `z^α` (real).
    pub z: Vec<Vec<C64>>,
    /// `ż^α` (real).
    pub zdot: Vec<Vec<C64>>,
    /// `ζ`.
    pub zeta: Vec<C64>,
    /// `ζ̇`.
    pub zetadot: Vec<C64>,
}

/// Bookkeeping of the constraint solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintSolveReport {
    /// Wavelength parameter.
    pub lambda: f64,
    /// Relative Maxwell-constraint residual of the assembled data.
    pub maxwell: f64,
    /// Relative Lorenz residual `‖∂_αA^α|₀‖` of the assembled data.
    pub lorenz: f64,
    /// `Σ_{k≤1} λ^k‖z⁰‖_{H^{k+1}}`.
    pub z0_bundle: f64,
    /// `Σ_{k≤1} λ^k‖z⁰ᴮᴵˢ‖_{H^{k+1}}`.
    pub z0bis_bundle: f64,
    /// `Σ_{k≤1} λ^k‖z⁰ᵀᴱᴿ‖_{H^{k+1}}`.
    pub z0ter_bundle: f64,
    /// Free-data bundle `Σ_{k≤1} λ^k(‖ζ‖_{H^{k+1}} + ‖ζ̇‖_{H^k} + ‖z^i‖_{H^{k+1}} + ‖ż^i‖_{H^k})`.
    pub free_bundle: f64,
    /// `‖∂_iż^i‖_{L²}`.
    pub zdot_divergence: f64,
    /// CG iterations of the `z⁰ᵀᴱᴿ` solve.
    pub iterations: usize,
}

fn bundle1(grid: &Grid, f: &[Vec<C64>], lambda: f64) -> f64 {
    let n = |s: f64| f.iter().map(|c| spectral::sobolev_sq(grid, c, s)).sum::<f64>().sqrt();
    n(1.0) + lambda * n(2.0)
}

fn bundle0(grid: &Grid, f: &[Vec<C64>], lambda: f64) -> f64 {
    let n = |s: f64| f.iter().map(|c| spectral::sobolev_sq(grid, c, s)).sum::<f64>().sqrt();
    n(0.0) + lambda * n(1.0)
}

/// Assemble the full error data: `ż⁰` from the Lorenz condition, and
/// `z⁰ = z⁰ᴮᴵˢ + z⁰ᵀᴱᴿ` with `z⁰ᵀᴱᴿ` solving
/// `(−Δ + |Φ₁ + ζ|²) z⁰ᵀᴱᴿ = h − (−Δ + |Φ₁ + ζ|²) z⁰ᴮᴵˢ`, where `h` is the
/// Maxwell constraint of the data with `z⁰ = 0`.
pub fn assemble_error_initial(
    free: &FreeErrorData,
    bg: &BackgroundInitialData,
    table: &InteractionTable,
    tol: f64,
) -> Result<(ConstrainedErrorData, ConstraintSolveReport)> {
    let grid = bg.grid;
    let dim = grid.dim;
    let npts = grid.npts();
    let lam = free.lambda;
    let fo = first_order_data(bg, lam)?;
    let zdot0 = gauge_time_derivative(free, bg)?;
    let zero = vec![C64::new(0.0, 0.0); npts];
    let mut z: Vec<Vec<C64>> = vec![zero.clone()];
    z.extend(free.z.iter().cloned());
    let mut zdot: Vec<Vec<C64>> = vec![zdot0.comp(0).to_vec()];
    zdot.extend(free.zdot.iter().cloned());
    let add = |x: &[Vec<C64>], y: &[Vec<C64>]| -> Vec<Vec<C64>> {
        x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + v).collect()).collect()
    };
    let phi: Vec<C64> = fo.phi.iter().zip(free.zeta.comp(0)).map(|(u, v)| u + v).collect();
    let phidot: Vec<C64> = fo.phi_t.iter().zip(free.zetadot.comp(0)).map(|(u, v)| u + v).collect();
    let h = constraint_source(free, bg)?;
    let g: Vec<f64> = phi.iter().map(|v| v.norm_sqr()).collect();
    let bis = build_z0bis(free, bg, table)?;
    let op_bis = apply_operator(&grid, &g, bis.comp(0));
    let rhs: Vec<C64> = h.iter().zip(&op_bis).map(|(a, b)| a - b).collect();
    let ter = solve_perturbed_laplacian_projected(&grid, &g, &rhs, tol)?;
    let hn = l2_norm(&grid, &h);
    if ter.projected_mean.norm() * grid.volume().sqrt() > tol * hn.max(f64::MIN_POSITIVE) {
        return Err(Error::Neutrality { mean: ter.projected_mean.norm() });
    }
    z[0] = bis.comp(0).iter().zip(&ter.f).map(|(a, b)| C64::new(a.re + b.re, 0.0)).collect();
    let a_full = add(&fo.a, &z);
    let adot_full = add(&fo.a_t, &zdot);
    let c = maxwell_constraint(&grid, &a_full, &adot_full, &phi, &phidot);
    let mut lorenz = adot_full[0].clone();
    let div = divergence(&grid, &a_full[1..]);
    lorenz.iter_mut().zip(&div).for_each(|(x, y)| *x += y);
    let lorenz_scale = l2_norm(&grid, &adot_full[0]).max(l2_norm(&grid, &div));
    let rel = |r: f64, s: f64| if s > 0.0 { r / s } else { r };
    let mut free_all: Vec<Vec<C64>> = free.z.clone();
    free_all.push(free.zeta.comp(0).to_vec());
    let mut free_dot: Vec<Vec<C64>> = free.zdot.clone();
    free_dot.push(free.zetadot.comp(0).to_vec());
    let report = ConstraintSolveReport {
        lambda: lam,
        maxwell: rel(l2_norm(&grid, &c), hn.max(l2_norm(&grid, &apply_operator(&grid, &g, &z[0])))),
        lorenz: rel(l2_norm(&grid, &lorenz), lorenz_scale),
        z0_bundle: bundle1(&grid, &z[..1], lam),
        z0bis_bundle: bundle1(&grid, bis.comps(), lam),
        z0ter_bundle: bundle1(&grid, std::slice::from_ref(&ter.f), lam),
        free_bundle: bundle1(&grid, &free_all, lam) + bundle0(&grid, &free_dot, lam),
        zdot_divergence: l2_norm(&grid, &divergence(&grid, &free.zdot)),
        iterations: ter.iterations,
    };
    let _ = dim;
    Ok((
        ConstrainedErrorData {
            lambda: lam,
            z,
            zdot,
            zeta: free.zeta.comp(0).to_vec(),
            zetadot: free.zetadot.comp(0).to_vec(),
        },
        report,
    ))
}

/// Admissible initial values of every error parameter.
#[derive(Clone, Debug)]
pub struct ErrorParameterInit {
    /// Parameters at `t = 0`: `e^evo`, `ė^evo`, `ε^evo`, `ε̇^evo`, `F⁺ = 0`
    /// with `g⁺ = □F⁺|₀`, and `F̆ = 0`.
    pub state: ErrorState,
    /// `(E^ell)^α|₀`.
    pub e_ell: Vec<Vec<C64>>,
    /// `∂_t(E^ell)^α|₀`.
    pub edot_ell: Vec<Vec<C64>>,
    /// `ℰ^ell|₀`.
    pub eps_ell: Vec<C64>,
    /// `∂_tℰ^ell|₀`.
    pub epsdot_ell: Vec<C64>,
    /// `∂_tW⁺_A|₀` per phase.
    pub w_plus_t: Vec<Vec<Vec<C64>>>,
    /// `∂_tΨ⁺_A|₀` per phase.
    pub psi_plus_t: Vec<Vec<C64>>,
}

/// Split constrained error data into admissible parameters: all transported
/// amplitudes vanish initially, `E^ell` is evaluated from its formula, and
/// `E^evo` takes the rest so the parametrix reproduces the data exactly.
/// `g⁺ = □F⁺|₀ = −∂²_tF⁺|₀` follows from differentiating the transport
/// equations once in time.
pub fn split_parameters(
    data: &ConstrainedErrorData,
    bg: &BackgroundInitialData,
    sys: &CoupledSystem,
) -> Result<ErrorParameterInit> {
    let grid = sys.grid;
    let lam = sys.lambda;
    let frame = &sys.frame;
    let jets = initial_jets(bg);
    let terms = interaction_terms(&jets, &sys.ks, &sys.table, grid);
    let eell = build_e_ell(&terms, &sys.table, frame)?;
    let ev = |o: &crate::fields::osc::Osc| o.eval(frame, lam, 0.0);
    let e_ell: Vec<Vec<C64>> = eell.a.iter().map(|f| ev(&f.value())).collect();
    let edot_ell: Vec<Vec<C64>> = eell.a.iter().map(|f| ev(&f.deriv(frame, 0))).collect();
    let eps_ell = ev(&eell.phi.value());
    let epsdot_ell = ev(&eell.phi.deriv(frame, 0));
    let sub = |x: &[C64], y: &[C64]| -> Vec<C64> { x.iter().zip(y).map(|(a, b)| a - b).collect() };
    let mut state = ErrorState::zero(sys, 0.0);
    state.e = data.z.iter().zip(&e_ell).map(|(x, y)| sub(x, y)).collect();
    state.eps = sub(&data.zeta, &eps_ell);
    // With the time derivatives of E^evo set to zero, the assembled ∂_tZ
    // holds everything except them.
    let bgs = BgState::from_initial(bg);
    let partial = sys.evaluate(&bgs, &state, 0.0)?;
    state.edot = data.zdot.iter().zip(&partial.fields.z_t).map(|(x, y)| sub(x, y)).collect();
    state.edot.iter_mut().for_each(|c| c.iter_mut().for_each(|v| v.im = 0.0));
    state.epsdot = sub(&data.zetadot, &partial.fields.zeta_t);
    let mut w_plus_t = Vec::new();
    let mut psi_plus_t = Vec::new();
    for a in 0..sys.ks.len() {
        let rate = &partial.err.plus[a];
        let x = sys.plus_inputs(&jets, a, 0, &state.plus[a].psi, &state.e, &state.eps);
        let xdot = sys.plus_inputs(&jets, a, 1, &rate.psi, &state.edot, &state.epsdot);
        let ft = sys.plus_rhs_dt(a, &x, &xdot);
        let cov = sys.cov(a);
        let slot = &mut state.plus[a];
        slot.gw = rate.w.iter().zip(&ft.w).map(|(c, f)| transport_dt(&grid, &cov, c, f).iter().map(|v| -v).collect()).collect();
        slot.gpsi = transport_dt(&grid, &cov, &rate.psi, &ft.psi).iter().map(|v| -v).collect();
        w_plus_t.push(rate.w.clone());
        psi_plus_t.push(rate.psi.clone());
    }
    Ok(ErrorParameterInit { state, e_ell, edot_ell, eps_ell, epsdot_ell, w_plus_t, psi_plus_t })
}

/// Largest deviation between constrained data and the parametrix assembled
/// from split parameters at `t = 0`.
pub fn reassembly_error(data: &ConstrainedErrorData, init: &ErrorParameterInit, bg: &BackgroundInitialData, sys: &CoupledSystem) -> Result<f64> {
    let ev = sys.evaluate(&BgState::from_initial(bg), &init.state, 0.0)?;
    let f = &ev.fields;
    let mut m = 0.0f64;
    let mut upd = |x: &[C64], y: &[C64]| {
        for (a, b) in x.iter().zip(y) {
            m = m.max((a - b).norm());
        }
    };
    for c in 0..data.z.len() {
        upd(&data.z[c], &f.z[c]);
        upd(&data.zdot[c], &f.z_t[c]);
    }
    upd(&data.zeta, &f.zeta);
    upd(&data.zetadot, &f.zeta_t);
    Ok(m)
}

#[cfg(test)]
mod tests;
