//! Oscillatory-composition calculus for plane-wave phase sets.
//!
//! A field is represented symbolically as
//!
//! ```text
//! f(t, x) = Σ_key λ^{p/2} c_key(x) e^{iθ_n(t,x)/λ},   θ_n = Σ_A n_A u_A,
//! ```
//!
//! where `key = (n, p)` pairs an integer harmonic multi-index over the phases
//! with a half-integer power of λ. Products add keys, derivatives act on the
//! smooth coefficients and on the phase through the chain rule, and the
//! d'Alembertian uses the cascade identity
//! `□(e^{iθ/λ}c) = e^{iθ/λ}(−λ^{-2}(∂θ·∂θ)c + iλ^{-1}(2∂^αθ∂_αc + □θ c) + □c)`.
//! Because λ appears only through keys, the coefficient of every power of λ
//! and every harmonic can be extracted exactly; nothing oscillating at scale λ
//! is ever differentiated on the grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::algebra::Algebra;
use super::{spectral, Grid};
use crate::{Error, Result, C64};

/// Maximum number of phases a frame can hold.
pub const MAX_PHASES: usize = 6;

/// Harmonic multi-index and half-power of λ of one term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    /// Harmonic multi-index `n_A`.
    pub n: [i8; MAX_PHASES],
    /// Power `p` of `λ^{1/2}`.
    pub p: i8,
}

impl Key {
    /// Non-oscillating key with power `p`.
    pub fn smooth(p: i8) -> Key {
        Key { n: [0; MAX_PHASES], p }
    }

    /// Key of `±` phase `a` with power `p`.
    pub fn single(a: usize, sign: i8, p: i8) -> Key {
        let mut n = [0; MAX_PHASES];
        n[a] = sign;
        Key { n, p }
    }

    /// Key of the combined phase `u_a + s·u_b` with power `p`.
    pub fn pair(a: usize, b: usize, s: i8, p: i8) -> Key {
        let mut n = [0; MAX_PHASES];
        n[a] += 1;
        n[b] += s;
        Key { n, p }
    }

    /// Key of the product of two terms.
    pub fn add(&self, o: &Key) -> Key {
        let mut n = [0; MAX_PHASES];
        for (i, v) in n.iter_mut().enumerate() {
            *v = self.n[i] + o.n[i];
        }
        Key { n, p: self.p + o.p }
    }

    /// Key of the complex conjugate term.
    pub fn neg(&self) -> Key {
        let mut n = self.n;
        for v in n.iter_mut() {
            *v = -*v;
        }
        Key { n, p: self.p }
    }

    /// Same harmonic with a shifted power.
    pub fn shift(&self, dp: i8) -> Key {
        Key { n: self.n, p: self.p + dp }
    }

    /// Whether the harmonic is zero (non-oscillating).
    pub fn is_smooth(&self) -> bool {
        self.n.iter().all(|&v| v == 0)
    }

    /// Number of distinct phases involved in the harmonic.
    pub fn phase_count(&self) -> usize {
        self.n.iter().filter(|&&v| v != 0).count()
    }
}

/// Plane-wave phases `u_A = k_A·x − |k_A| t` (future directed).
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneFrame {
    /// Spatial dimension.
    pub dim: usize,
    /// Spatial wavevectors.
    pub ks: Vec<[f64; 3]>,
}

impl PlaneFrame {
    /// Frame from wavevectors; at most [`MAX_PHASES`] phases.
    pub fn new(dim: usize, ks: Vec<[f64; 3]>) -> Result<Self> {
        if ks.len() > MAX_PHASES {
            return Err(Error::Config(format!("at most {MAX_PHASES} phases are supported")));
        }
        Ok(PlaneFrame { dim, ks })
    }

    /// Number of phases.
    pub fn len(&self) -> usize {
        self.ks.len()
    }

    /// Whether the frame has no phase.
    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    /// `|k_A|`.
    pub fn omega(&self, a: usize) -> f64 {
        norm3(&self.ks[a])
    }

    /// Spatial wavevector `Σ n_A k_A` of a harmonic.
    pub fn spatial(&self, n: &[i8; MAX_PHASES]) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (a, k) in self.ks.iter().enumerate() {
            for i in 0..3 {
                s[i] += n[a] as f64 * k[i];
            }
        }
        s
    }

    /// Temporal frequency `Σ n_A |k_A|` of a harmonic (θ = κ·x − ωt).
    pub fn frequency(&self, n: &[i8; MAX_PHASES]) -> f64 {
        (0..self.ks.len()).map(|a| n[a] as f64 * self.omega(a)).sum()
    }

    /// Lower-index spacetime gradient `∂_αθ_n` (α = 0..=dim).
    pub fn covector(&self, n: &[i8; MAX_PHASES]) -> Vec<f64> {
        let s = self.spatial(n);
        let mut c = vec![-self.frequency(n)];
        c.extend_from_slice(&s[..self.dim]);
        c
    }

    /// Phase value `θ_n(t, x)`.
    pub fn theta(&self, n: &[i8; MAX_PHASES], t: f64, x: &[f64; 3]) -> f64 {
        let s = self.spatial(n);
        s[0] * x[0] + s[1] * x[1] + s[2] * x[2] - self.frequency(n) * t
    }
}

fn norm3(k: &[f64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

fn accumulate(terms: &mut BTreeMap<Key, Vec<C64>>, key: Key, v: &[C64], c: C64) {
    let e = terms.entry(key).or_insert_with(|| zeros(v.len()));
    for (a, b) in e.iter_mut().zip(v) {
        *a += c * b;
    }
}

/// Single-component oscillatory field at one time.
#[derive(Clone, Debug)]
pub struct Osc {
    /// Grid of the coefficients.
    pub grid: Grid,
    /// Coefficients per key.
    pub terms: BTreeMap<Key, Vec<C64>>,
}

impl Osc {
    /// Zero field.
    pub fn zero(grid: Grid) -> Osc {
        Osc { grid, terms: BTreeMap::new() }
    }

    /// Single term.
    pub fn term(grid: Grid, key: Key, v: Vec<C64>) -> Osc {
        let mut terms = BTreeMap::new();
        terms.insert(key, v);
        Osc { grid, terms }
    }

    /// Non-oscillating λ-independent field.
    pub fn smooth(grid: Grid, v: Vec<C64>) -> Osc {
        Osc::term(grid, Key::smooth(0), v)
    }

    /// Add `c·v` to the coefficient of `key`.
    pub fn add_term(&mut self, key: Key, v: &[C64], c: C64) {
        accumulate(&mut self.terms, key, v, c);
    }

    /// Terms satisfying a predicate on the key.
    pub fn filter<F: Fn(&Key) -> bool>(&self, keep: F) -> Osc {
        Osc {
            grid: self.grid,
            terms: self.terms.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (*k, v.clone())).collect(),
        }
    }

    /// Coefficient of a key (zero if absent).
    pub fn coeff(&self, key: &Key) -> Vec<C64> {
        self.terms.get(key).cloned().unwrap_or_else(|| zeros(self.grid.npts()))
    }

    /// Pointwise evaluation on the coefficient grid.
    pub fn eval(&self, frame: &PlaneFrame, lambda: f64, t: f64) -> Vec<C64> {
        let coords = self.grid.coords();
        let mut out = zeros(self.grid.npts());
        for (key, c) in &self.terms {
            let amp = lambda.powf(0.5 * key.p as f64);
            if key.is_smooth() {
                for (o, v) in out.iter_mut().zip(c) {
                    *o += amp * v;
                }
            } else {
                for ((o, v), x) in out.iter_mut().zip(c).zip(&coords) {
                    *o += amp * v * C64::from_polar(1.0, frame.theta(&key.n, t, x) / lambda);
                }
            }
        }
        out
    }

    /// Largest spatial wavenumber `|Σ n_A k_A| / λ` among the terms.
    pub fn max_wavenumber(&self, frame: &PlaneFrame, lambda: f64) -> f64 {
        self.terms.keys().map(|k| norm3(&frame.spatial(&k.n)) / lambda).fold(0.0, f64::max)
    }

    /// Evaluate on a grid refined by `r` (band-limited interpolation of the
    /// coefficients, exact oscillatory factors).
    pub fn eval_refined(&self, frame: &PlaneFrame, lambda: f64, t: f64, r: usize) -> (Grid, Vec<C64>) {
        let fine = Grid { n: self.grid.n * r, ..self.grid };
        let coords = fine.coords();
        let mut out = zeros(fine.npts());
        for (key, c) in &self.terms {
            let amp = lambda.powf(0.5 * key.p as f64);
            let (_, cf) = spectral::refine(&self.grid, c, r);
            for ((o, v), x) in out.iter_mut().zip(&cf).zip(&coords) {
                *o += amp * v * C64::from_polar(1.0, frame.theta(&key.n, t, x) / lambda);
            }
        }
        (fine, out)
    }

    /// `H^s` norm of the represented function at time `t` and wavelength
    /// parameter λ (see [`osc_sobolev_norm`]).
    pub fn sobolev_norm(&self, frame: &PlaneFrame, lambda: f64, t: f64, s: f64) -> f64 {
        osc_sobolev_norm(std::slice::from_ref(self), frame, lambda, t, s)
    }

    /// L² norm of every coefficient combined (λ-free size of the term set).
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().map(|v| super::l2_norm(&self.grid, v).powi(2)).sum::<f64>().sqrt()
    }
}

/// Refinement factor (power of two) resolving every harmonic of `fields`.
pub fn resolving_factor(fields: &[Osc], frame: &PlaneFrame, lambda: f64) -> usize {
    let Some(first) = fields.first() else { return 1 };
    let kmax = fields.iter().map(|f| f.max_wavenumber(frame, lambda)).fold(0.0, f64::max);
    let nyq = PI / first.grid.dx();
    let need = (1.0 + kmax / nyq).ceil() as usize;
    need.next_power_of_two()
}

/// Finest refined grid size used for exact norms; beyond it, harmonics are
/// treated as mutually orthogonal and their spectra shifted analytically.
pub const MAX_REFINED_POINTS: usize = 1 << 23;

/// `H^s` norm (summed over components) of oscillatory fields at time `t`.
///
/// The represented function is evaluated on a grid refined until every
/// harmonic is resolved and the discrete Sobolev norm is taken there. If the
/// refined grid would exceed [`MAX_REFINED_POINTS`], each group of harmonics
/// sharing a spatial wavevector κ is normed separately with its spectrum
/// shifted by κ/λ, neglecting cross terms between distinct groups.
pub fn osc_sobolev_norm(fields: &[Osc], frame: &PlaneFrame, lambda: f64, t: f64, s: f64) -> f64 {
    let Some(first) = fields.first() else { return 0.0 };
    let r = resolving_factor(fields, frame, lambda);
    if (first.grid.n * r).pow(first.grid.dim as u32) <= MAX_REFINED_POINTS {
        return fields
            .iter()
            .map(|f| {
                let (fine, v) = f.eval_refined(frame, lambda, t, r);
                spectral::sobolev_sq(&fine, &v, s)
            })
            .sum::<f64>()
            .sqrt();
    }
    let mut total = 0.0;
    for f in fields {
        let mut groups: Vec<([f64; 3], Vec<C64>)> = Vec::new();
        for (key, c) in &f.terms {
            let kappa = frame.spatial(&key.n);
            let w = C64::from_polar(lambda.powf(0.5 * key.p as f64), -frame.frequency(&key.n) * t / lambda);
            let slot = groups.iter().position(|(k, _)| (0..3).all(|i| (k[i] - kappa[i]).abs() < 1e-12));
            match slot {
                Some(i) => groups[i].1.iter_mut().zip(c).for_each(|(a, b)| *a += w * b),
                None => groups.push((kappa, c.iter().map(|b| w * b).collect())),
            }
        }
        for (kappa, g) in groups {
            let shift = [kappa[0] / lambda, kappa[1] / lambda, kappa[2] / lambda];
            total += spectral::sobolev_sq_shifted(&f.grid, &g, s, shift);
        }
    }
    total.sqrt()
}

impl Algebra for Osc {
    fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &o.terms {
            out.add_term(*k, v, C64::new(1.0, 0.0));
        }
        out
    }

    fn sub(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &o.terms {
            out.add_term(*k, v, C64::new(-1.0, 0.0));
        }
        out
    }

    fn mul(&self, o: &Self) -> Self {
        let mut out = Osc::zero(self.grid);
        for (ka, va) in &self.terms {
            for (kb, vb) in &o.terms {
                let prod: Vec<C64> = va.iter().zip(vb).map(|(a, b)| a * b).collect();
                out.add_term(ka.add(kb), &prod, C64::new(1.0, 0.0));
            }
        }
        out
    }

    fn conj(&self) -> Self {
        Osc {
            grid: self.grid,
            terms: self.terms.iter().map(|(k, v)| (k.neg(), v.iter().map(|z| z.conj()).collect())).collect(),
        }
    }

    fn scale(&self, c: C64) -> Self {
        Osc { grid: self.grid, terms: self.terms.iter().map(|(k, v)| (*k, v.iter().map(|z| z * c).collect())).collect() }
    }
}

/// Coefficient with its first and second time derivatives.
#[derive(Clone, Debug)]
pub struct Jet {
    /// Value.
    pub v: Vec<C64>,
    /// First time derivative.
    pub vt: Vec<C64>,
    /// Second time derivative.
    pub vtt: Vec<C64>,
}

impl Jet {
    /// Jet of a time-independent field.
    pub fn constant(v: Vec<C64>) -> Jet {
        let n = v.len();
        Jet { v, vt: zeros(n), vtt: zeros(n) }
    }

    /// Zero jet on `n` points.
    pub fn zero(n: usize) -> Jet {
        Jet { v: zeros(n), vt: zeros(n), vtt: zeros(n) }
    }

    /// Complex conjugate jet.
    pub fn conj(&self) -> Jet {
        let c = |x: &Vec<C64>| x.iter().map(|z| z.conj()).collect();
        Jet { v: c(&self.v), vt: c(&self.vt), vtt: c(&self.vtt) }
    }

    /// Jet multiplied by a constant.
    pub fn scale(&self, a: C64) -> Jet {
        let s = |x: &Vec<C64>| x.iter().map(|z| z * a).collect();
        Jet { v: s(&self.v), vt: s(&self.vt), vtt: s(&self.vtt) }
    }

    /// Product jet (Leibniz rule in time).
    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.v.len();
        let mut out = Jet::zero(n);
        for i in 0..n {
            out.v[i] = self.v[i] * o.v[i];
            out.vt[i] = self.vt[i] * o.v[i] + self.v[i] * o.vt[i];
            out.vtt[i] = self.vtt[i] * o.v[i] + 2.0 * self.vt[i] * o.vt[i] + self.v[i] * o.vtt[i];
        }
        out
    }

    /// `self + c·o`.
    pub fn plus(&self, o: &Jet, c: C64) -> Jet {
        let mut out = self.clone();
        out.add_scaled(o, c);
        out
    }

    fn add_scaled(&mut self, o: &Jet, c: C64) {
        for i in 0..self.v.len() {
            self.v[i] += c * o.v[i];
            self.vt[i] += c * o.vt[i];
            self.vtt[i] += c * o.vtt[i];
        }
    }
}

/// Oscillatory field whose coefficients carry time jets, so that spacetime
/// derivatives and the d'Alembertian can be formed symbolically.
#[derive(Clone, Debug)]
pub struct OscJet {
    /// Grid of the coefficients.
    pub grid: Grid,
    /// Coefficient jets per key.
    pub terms: BTreeMap<Key, Jet>,
}

impl OscJet {
    /// Zero field.
    pub fn zero(grid: Grid) -> OscJet {
        OscJet { grid, terms: BTreeMap::new() }
    }

    /// Add `c·jet` to the coefficient of `key`.
    pub fn add_term(&mut self, key: Key, jet: &Jet, c: C64) {
        let n = self.grid.npts();
        self.terms.entry(key).or_insert_with(|| Jet::zero(n)).add_scaled(jet, c);
    }

    /// Sum of two jets.
    pub fn add(&self, o: &OscJet) -> OscJet {
        let mut out = self.clone();
        for (k, j) in &o.terms {
            out.add_term(*k, j, C64::new(1.0, 0.0));
        }
        out
    }

    /// Complex conjugate.
    pub fn conj(&self) -> OscJet {
        OscJet { grid: self.grid, terms: self.terms.iter().map(|(k, j)| (k.neg(), j.conj())).collect() }
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: C64) -> OscJet {
        OscJet { grid: self.grid, terms: self.terms.iter().map(|(k, j)| (*k, j.scale(c))).collect() }
    }

    /// Real part `(f + conj f)/2`.
    pub fn re(&self) -> OscJet {
        self.add(&self.conj()).scale(C64::new(0.5, 0.0))
    }

    /// Product with Leibniz rule in time.
    pub fn mul(&self, o: &OscJet) -> OscJet {
        let mut out = OscJet::zero(self.grid);
        for (ka, ja) in &self.terms {
            for (kb, jb) in &o.terms {
                out.add_term(ka.add(kb), &ja.mul(jb), C64::new(1.0, 0.0));
            }
        }
        out
    }

    /// Values (drop the time derivatives).
    pub fn value(&self) -> Osc {
        Osc { grid: self.grid, terms: self.terms.iter().map(|(k, j)| (*k, j.v.clone())).collect() }
    }

    /// Lower-index derivative `∂_α f`: `∂_αc` at the same key plus
    /// `i ∂_αθ c` one power of λ lower.
    pub fn deriv(&self, frame: &PlaneFrame, alpha: usize) -> Osc {
        let mut out = Osc::zero(self.grid);
        for (key, jet) in &self.terms {
            let dc = if alpha == 0 { jet.vt.clone() } else { spectral::deriv(&self.grid, &jet.v, alpha - 1) };
            out.add_term(*key, &dc, C64::new(1.0, 0.0));
            if !key.is_smooth() {
                let cov = frame.covector(&key.n);
                if cov[alpha] != 0.0 {
                    out.add_term(key.shift(-2), &jet.v, C64::new(0.0, cov[alpha]));
                }
            }
        }
        out
    }

    /// All lower-index derivatives, α = 0..=dim.
    pub fn grad(&self, frame: &PlaneFrame) -> Vec<Osc> {
        (0..=self.grid.dim).map(|a| self.deriv(frame, a)).collect()
    }

    /// `□f` by the cascade identity (plane-wave phases have `□θ = 0`).
    pub fn dalembert(&self, frame: &PlaneFrame) -> Osc {
        let mut out = Osc::zero(self.grid);
        for (key, jet) in &self.terms {
            let lap = spectral::laplacian(&self.grid, &jet.v);
            let box_c: Vec<C64> = lap.iter().zip(&jet.vtt).map(|(l, tt)| l - tt).collect();
            out.add_term(*key, &box_c, C64::new(1.0, 0.0));
            if key.is_smooth() {
                continue;
            }
            let cov = frame.covector(&key.n);
            let eik = super::mdot(&cov, &cov);
            if eik != 0.0 {
                out.add_term(key.shift(-4), &jet.v, C64::new(-eik, 0.0));
            }
            // 2 ∂^αθ ∂_αc with ∂^0θ = −∂_0θ.
            let mut tr: Vec<C64> = jet.vt.iter().map(|v| -2.0 * cov[0] * v).collect();
            for a in 0..self.grid.dim {
                if cov[a + 1] != 0.0 {
                    let d = spectral::deriv(&self.grid, &jet.v, a);
                    for (t, v) in tr.iter_mut().zip(&d) {
                        *t += 2.0 * cov[a + 1] * v;
                    }
                }
            }
            out.add_term(key.shift(-2), &tr, C64::new(0.0, 1.0));
        }
        out
    }
}

/// Lorenz divergence `∂_α f^α` of an upper-index vector of jets.
pub fn divergence(f: &[OscJet], frame: &PlaneFrame) -> Osc {
    let mut out = f[0].deriv(frame, 0);
    for (a, c) in f.iter().enumerate().skip(1) {
        out = out.add(&c.deriv(frame, a));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> Grid {
        Grid::new(1, 64, 2.0 * PI, 0.1).unwrap()
    }

    #[test]
    fn conj_of_product_is_product_of_conj() {
        let g = grid1();
        let a = Osc::term(g, Key::single(0, 1, 1), (0..64).map(|i| C64::new(i as f64, 1.0)).collect());
        let b = Osc::term(g, Key::single(1, -1, -1), (0..64).map(|i| C64::new(1.0, -(i as f64))).collect());
        let lhs = a.mul(&b).conj();
        let rhs = a.conj().mul(&b.conj());
        for (k, v) in &lhs.terms {
            let w = &rhs.terms[k];
            assert!(v.iter().zip(w).all(|(x, y)| (x - y).norm() < 1e-12));
        }
    }

    #[test]
    fn plane_wave_dalembert_of_constant_amplitude_vanishes() {
        let g = grid1();
        let frame = PlaneFrame::new(1, vec![[1.0, 0.0, 0.0]]).unwrap();
        let mut f = OscJet::zero(g);
        f.add_term(Key::single(0, 1, 0), &Jet::constant(vec![C64::new(2.0, 0.5); 64]), C64::new(1.0, 0.0));
        let b = f.dalembert(&frame);
        assert!(b.terms.values().flatten().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn eval_matches_sampled_exponential() {
        let g = grid1();
        let frame = PlaneFrame::new(1, vec![[1.0, 0.0, 0.0]]).unwrap();
        let c = vec![C64::new(1.0, 0.0); 64];
        let f = Osc::term(g, Key::single(0, 1, 2), c);
        let lambda = 0.25;
        let v = f.eval(&frame, lambda, 0.3);
        for (i, x) in g.coords().iter().enumerate() {
            let want = lambda * C64::from_polar(1.0, (x[0] - 0.3) / lambda);
            assert!((v[i] - want).norm() < 1e-12);
        }
    }
}
