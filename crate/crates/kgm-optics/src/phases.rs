//! Characteristic phases: eikonal-data validation, ray tracing with caustic
//! detection, pairwise resonance classification and the uniform lower bound
//! η₀ on phase-gradient magnitudes and combined-phase norms.
//!
//! A phase is future directed and characteristic: `∂^αu ∂_αu = 0` with
//! `∂_t u < 0`. Plane waves `u = k·x − |k|t` are handled in closed form;
//! general data `v = k·x + v_per(x)` are traced along the rays
//! `χ(y, t) = y + tξ(y)`, `ξ = ∇v/|∇v|`, along which `u` is constant and
//! `∂u = |∇v(y)|(−1, ξ(y))` (lower index).

use serde::{Deserialize, Serialize};

use crate::fields::{mdot, spectral, FieldArray, Grid};
use crate::{Error, Result, C64};

/// Ray-Jacobian determinant below which tracing is truncated.
pub const CAUSTIC_THRESHOLD: f64 = 0.1;

/// Initial data of one phase: `v = k·x + v_per`, `v̇` and an optional
/// plane-wave tag.
#[derive(Clone, Debug)]
pub struct EikonalData {
    /// Linear part `k` of `v` (the periodic box cannot hold it as samples).
    pub linear: [f64; 3],
    /// Periodic remainder `v_per` (real scalar field).
    pub periodic: FieldArray,
    /// Initial time derivative `v̇` (real scalar field).
    pub vdot: FieldArray,
    /// Set when the data are exactly the plane wave `k·x`, `v̇ = −|k|`.
    pub plane: Option<[f64; 3]>,
}

impl EikonalData {
    /// Exact plane-wave data `v = k·x`, `v̇ = −|k|`.
    pub fn plane(grid: Grid, k: [f64; 3]) -> EikonalData {
        let w = norm(&k);
        EikonalData {
            linear: k,
            periodic: FieldArray::zeros(grid, 1),
            vdot: FieldArray::scalar(grid, vec![C64::new(-w, 0.0); grid.npts()]).expect("grid-sized"),
            plane: Some(k),
        }
    }

    /// Data `v = k·x + v_per` with the future-directed `v̇ = −|∇v|`.
    pub fn from_periodic(linear: [f64; 3], periodic: FieldArray) -> Result<EikonalData> {
        let grid = *periodic.grid();
        let grad = gradient_real(&grid, &linear, &periodic);
        let vdot = (0..grid.npts()).map(|p| C64::new(-grad_norm(&grad, p), 0.0)).collect();
        Ok(EikonalData { linear, vdot: FieldArray::scalar(grid, vdot)?, periodic, plane: None })
    }

    /// Grid of the data.
    pub fn grid(&self) -> &Grid {
        self.periodic.grid()
    }

    /// `∇v` per axis.
    pub fn gradient(&self) -> Vec<Vec<f64>> {
        gradient_real(self.grid(), &self.linear, &self.periodic)
    }
}

fn norm(k: &[f64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

fn grad_norm(grad: &[Vec<f64>], p: usize) -> f64 {
    grad.iter().map(|g| g[p] * g[p]).sum::<f64>().sqrt()
}

fn gradient_real(grid: &Grid, linear: &[f64; 3], periodic: &FieldArray) -> Vec<Vec<f64>> {
    spectral::gradient(grid, periodic.comp(0))
        .into_iter()
        .enumerate()
        .map(|(a, g)| g.iter().map(|v| v.re + linear[a]).collect())
        .collect()
}

/// Result of [`validate_eikonal_data`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EikonalReport {
    /// `max |v̇² − |∇v|²|`.
    pub eikonal_residual: f64,
    /// Grid index of the worst eikonal violation.
    pub eikonal_worst: usize,
    /// `min |∇v|`.
    pub min_gradient: f64,
    /// Grid index of the smallest gradient.
    pub gradient_worst: usize,
    /// `max v̇` (must be negative).
    pub max_vdot: f64,
    /// Whether `v̇² = |∇v|²` within tolerance.
    pub eikonal_ok: bool,
    /// Whether `∇v` stays away from zero.
    pub gradient_ok: bool,
    /// Whether `v̇ < 0` everywhere.
    pub future_directed: bool,
    /// All three checks pass.
    pub pass: bool,
}

/// Check the eikonal relation, non-degeneracy of `∇v` and future
/// directedness of initial phase data.
pub fn validate_eikonal_data(d: &EikonalData, tol: f64) -> EikonalReport {
    let grid = *d.grid();
    let grad = d.gradient();
    let mut rep = EikonalReport {
        eikonal_residual: 0.0,
        eikonal_worst: 0,
        min_gradient: f64::INFINITY,
        gradient_worst: 0,
        max_vdot: f64::NEG_INFINITY,
        eikonal_ok: false,
        gradient_ok: false,
        future_directed: false,
        pass: false,
    };
    for p in 0..grid.npts() {
        let g = grad_norm(&grad, p);
        let vd = d.vdot.comp(0)[p].re;
        let r = (vd * vd - g * g).abs();
        if r > rep.eikonal_residual {
            rep.eikonal_residual = r;
            rep.eikonal_worst = p;
        }
        if g < rep.min_gradient {
            rep.min_gradient = g;
            rep.gradient_worst = p;
        }
        rep.max_vdot = rep.max_vdot.max(vd);
    }
    rep.eikonal_ok = rep.eikonal_residual <= tol;
    rep.gradient_ok = rep.min_gradient > tol;
    rep.future_directed = rep.max_vdot < 0.0;
    rep.pass = rep.eikonal_ok && rep.gradient_ok && rep.future_directed;
    rep
}

/// Phase values and lower-index gradient at one time.
#[derive(Clone, Debug)]
pub struct PhaseSlice {
    /// Time of the slice.
    pub t: f64,
    /// `u(t, x)` per grid point.
    pub u: Vec<f64>,
    /// `∂_α u` per component α = 0..=dim.
    pub du: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
enum PhaseKind {
    Plane { k: [f64; 3] },
    Traced { linear: [f64; 3], h: f64, periodic: Vec<Vec<f64>>, du: Vec<Vec<Vec<f64>>> },
}

/// A characteristic phase on `[0, t_final]`.
#[derive(Clone, Debug)]
pub struct Phase {
    grid: Grid,
    kind: PhaseKind,
    /// End of the interval on which the phase is defined.
    pub t_final: f64,
    /// First caustic time if it occurs before the requested final time.
    pub caustic_time: Option<f64>,
}

impl Phase {
    /// Exact plane wave `u = k·x − |k|t` on `[0, t_final]`.
    pub fn plane(grid: Grid, k: [f64; 3], t_final: f64) -> Phase {
        Phase { grid, kind: PhaseKind::Plane { k }, t_final, caustic_time: None }
    }

    /// Grid of the phase.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Wavevector of a plane-wave phase.
    pub fn plane_k(&self) -> Option<[f64; 3]> {
        match self.kind {
            PhaseKind::Plane { k } => Some(k),
            PhaseKind::Traced { .. } => None,
        }
    }

    /// Times at which the phase is sampled (five points for plane waves).
    pub fn sample_times(&self) -> Vec<f64> {
        match &self.kind {
            PhaseKind::Plane { .. } => (0..5).map(|j| self.t_final * j as f64 / 4.0).collect(),
            PhaseKind::Traced { h, periodic, .. } => (0..periodic.len()).map(|j| j as f64 * h).collect(),
        }
    }

    fn index(&self, t: f64, h: f64, len: usize) -> Result<usize> {
        let j = (t / h).round();
        if j < 0.0 || j as usize >= len || (j * h - t).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Config(format!("traced phase has no sample at t = {t}")));
        }
        Ok(j as usize)
    }

    /// Values and gradient at time `t` (a sample time for traced phases).
    pub fn slice(&self, t: f64) -> Result<PhaseSlice> {
        let grid = self.grid;
        match &self.kind {
            PhaseKind::Plane { k } => {
                let w = norm(k);
                let u = grid.coords().iter().map(|x| k[0] * x[0] + k[1] * x[1] + k[2] * x[2] - w * t).collect();
                let mut du = vec![vec![-w; grid.npts()]];
                for a in 0..grid.dim {
                    du.push(vec![k[a]; grid.npts()]);
                }
                Ok(PhaseSlice { t, u, du })
            }
            PhaseKind::Traced { linear, h, periodic, du } => {
                let j = self.index(t, *h, periodic.len())?;
                let u = grid
                    .coords()
                    .iter()
                    .zip(&periodic[j])
                    .map(|(x, p)| linear[0] * x[0] + linear[1] * x[1] + linear[2] * x[2] + p)
                    .collect();
                Ok(PhaseSlice { t, u, du: du[j].clone() })
            }
        }
    }

    /// `□u` at time `t`: exactly zero for plane waves, a discrete
    /// d'Alembertian of the traced samples otherwise (interior samples only).
    pub fn box_u(&self, t: f64) -> Result<Vec<f64>> {
        match &self.kind {
            PhaseKind::Plane { .. } => Ok(vec![0.0; self.grid.npts()]),
            PhaseKind::Traced { h, periodic, .. } => {
                let j = self.index(t, *h, periodic.len())?;
                if j == 0 || j + 1 >= periodic.len() {
                    return Err(Error::Config("□u needs samples on both sides of t".into()));
                }
                let c: Vec<C64> = periodic[j].iter().map(|&v| C64::new(v, 0.0)).collect();
                let lap = spectral::laplacian(&self.grid, &c);
                Ok((0..self.grid.npts())
                    .map(|p| {
                        -(periodic[j + 1][p] - 2.0 * periodic[j][p] + periodic[j - 1][p]) / (h * h) + lap[p].re
                    })
                    .collect())
            }
        }
    }

    /// Eikonal residual `max |∂u·∂u|` at time `t`, using the stored
    /// ray gradient.
    pub fn eikonal_residual(&self, t: f64) -> Result<f64> {
        let s = self.slice(t)?;
        Ok((0..self.grid.npts())
            .map(|p| {
                let c: Vec<f64> = s.du.iter().map(|d| d[p]).collect();
                mdot(&c, &c).abs()
            })
            .fold(0.0, f64::max))
    }

    /// Eikonal residual with `∂u` recomputed from the traced samples
    /// (centred time differences, spectral space derivatives); measures the
    /// consistency of the traced values themselves.
    pub fn discrete_eikonal_residual(&self, t: f64) -> Result<f64> {
        let PhaseKind::Traced { linear, h, periodic, .. } = &self.kind else {
            return self.eikonal_residual(t);
        };
        let j = self.index(t, *h, periodic.len())?;
        if j == 0 || j + 1 >= periodic.len() {
            return Err(Error::Config("discrete residual needs samples on both sides of t".into()));
        }
        let c: Vec<C64> = periodic[j].iter().map(|&v| C64::new(v, 0.0)).collect();
        let grad = spectral::gradient(&self.grid, &c);
        Ok((0..self.grid.npts())
            .map(|p| {
                let ut = (periodic[j + 1][p] - periodic[j - 1][p]) / (2.0 * h);
                let g2: f64 = (0..self.grid.dim).map(|a| (linear[a] + grad[a][p].re).powi(2)).sum();
                (g2 - ut * ut).abs()
            })
            .fold(0.0, f64::max))
    }
}

/// Periodic 4-point (cubic Lagrange) tensor interpolation of a sampled field
/// at an arbitrary point.
pub fn interp_cubic(grid: &Grid, f: &[f64], y: &[f64; 3]) -> f64 {
    let n = grid.n as i64;
    let dx = grid.dx();
    let mut base = [0i64; 3];
    let mut w = [[0.0f64; 4]; 3];
    for a in 0..3 {
        if a >= grid.dim {
            w[a] = [0.0, 1.0, 0.0, 0.0];
            continue;
        }
        let s = (y[a] + 0.5 * grid.l) / dx;
        let i0 = s.floor();
        let r = s - i0;
        base[a] = i0 as i64 - 1;
        w[a] = [
            -r * (r - 1.0) * (r - 2.0) / 6.0,
            (r + 1.0) * (r - 1.0) * (r - 2.0) / 2.0,
            -(r + 1.0) * r * (r - 2.0) / 2.0,
            (r + 1.0) * r * (r - 1.0) / 6.0,
        ];
    }
    let idx = |a: usize, o: usize| -> usize {
        if a >= grid.dim {
            0
        } else {
            (base[a] + o as i64).rem_euclid(n) as usize
        }
    };
    let span = |a: usize| if a < grid.dim { 4 } else { 1 };
    let mut acc = 0.0;
    for i in 0..span(0) {
        for j in 0..span(1) {
            for k in 0..span(2) {
                let wt = w[0][i] * if grid.dim > 1 { w[1][j] } else { 1.0 } * if grid.dim > 2 { w[2][k] } else { 1.0 };
                if wt == 0.0 {
                    continue;
                }
                let mut flat = 0usize;
                for (a, o) in [(0, i), (1, j), (2, k)] {
                    if a < grid.dim {
                        flat = flat * grid.n + idx(a, o);
                    }
                }
                acc += wt * f[flat];
            }
        }
    }
    acc
}

/// Coefficients `[c0, c1, c2, c3]` of `det(I + tM) = Σ c_j t^j` for a
/// `dim × dim` matrix.
fn char_coeffs(m: &[[f64; 3]; 3], dim: usize) -> [f64; 4] {
    match dim {
        1 => [1.0, m[0][0], 0.0, 0.0],
        2 => [1.0, m[0][0] + m[1][1], m[0][0] * m[1][1] - m[0][1] * m[1][0], 0.0],
        _ => {
            let tr = m[0][0] + m[1][1] + m[2][2];
            let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
                + m[1][1] * m[2][2]
                - m[1][2] * m[2][1];
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            [1.0, tr, minors, det]
        }
    }
}

/// Earliest `t ∈ (0, t_max]` where the cubic `Σ c_j t^j` drops to `level`.
fn first_crossing(c: &[f64; 4], level: f64, t_max: f64) -> Option<f64> {
    let p = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3])) - level;
    if c[3] == 0.0 {
        // Quadratic (or linear) in closed form.
        let (a, b, cc) = (c[2], c[1], c[0] - level);
        let mut roots = Vec::new();
        if a.abs() < 1e-300 {
            if b != 0.0 {
                roots.push(-cc / b);
            }
        } else {
            let disc = b * b - 4.0 * a * cc;
            if disc >= 0.0 {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                roots.push(q / a);
                if q != 0.0 {
                    roots.push(cc / q);
                }
            }
        }
        return roots.into_iter().filter(|&t| t > 0.0 && t <= t_max).min_by(|a, b| a.total_cmp(b));
    }
    let steps = 4096;
    let h = t_max / steps as f64;
    let mut prev = p(0.0);
    for i in 1..=steps {
        let t = i as f64 * h;
        let cur = p(t);
        if prev > 0.0 && cur <= 0.0 {
            let (mut lo, mut hi) = (t - h, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if p(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        prev = cur;
    }
    None
}

/// Ray geometry of sampled eikonal data: gradient and Hessian fields.
struct RayField {
    grid: Grid,
    linear: [f64; 3],
    periodic: Vec<f64>,
    grad: Vec<Vec<f64>>,
    hess: Vec<Vec<Vec<f64>>>,
}

impl RayField {
    fn new(d: &EikonalData) -> RayField {
        let grid = *d.grid();
        let per = d.periodic.comp(0);
        let dper = spectral::gradient(&grid, per);
        let grad = d.gradient();
        let hess = (0..grid.dim)
            .map(|a| {
                let h = spectral::gradient(&grid, &dper[a]);
                h.iter().map(|c| c.iter().map(|v| v.re).collect()).collect()
            })
            .collect();
        RayField { grid, linear: d.linear, periodic: per.iter().map(|v| v.re).collect(), grad, hess }
    }

    /// `M = (I − ξξᵀ)H/|∇v|` and `∇v` at a point given by sampled values.
    fn m_matrix(g: &[f64; 3], h: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let xi = [g[0] / gn, g[1] / gn, g[2] / gn];
        let mut m = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                let mut s = 0.0;
                for k in 0..dim {
                    let p = if i == k { 1.0 } else { 0.0 } - xi[i] * xi[k];
                    s += p * h[k][j];
                }
                m[i][j] = s / gn;
            }
        }
        m
    }

    fn at_grid(&self, p: usize) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for a in 0..self.grid.dim {
            g[a] = self.grad[a][p];
            for b in 0..self.grid.dim {
                h[a][b] = self.hess[a][b][p];
            }
        }
        (g, h)
    }

    fn at_point(&self, y: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 3], f64) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for a in 0..self.grid.dim {
            g[a] = interp_cubic(&self.grid, &self.grad[a], y);
            for b in 0..self.grid.dim {
                h[a][b] = interp_cubic(&self.grid, &self.hess[a][b], y);
            }
        }
        let v = interp_cubic(&self.grid, &self.periodic, y)
            + self.linear[0] * y[0]
            + self.linear[1] * y[1]
            + self.linear[2] * y[2];
        (g, h, v)
    }

    /// Earliest caustic time over all rays starting at grid points.
    fn caustic_time(&self, t_max: f64) -> Option<f64> {
        (0..self.grid.npts())
            .filter_map(|p| {
                let (g, h) = self.at_grid(p);
                let m = RayField::m_matrix(&g, &h, self.grid.dim);
                first_crossing(&char_coeffs(&m, self.grid.dim), CAUSTIC_THRESHOLD, t_max)
            })
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Earliest time at which the ray-map Jacobian `det(I + tM)` of the data
/// falls below [`CAUSTIC_THRESHOLD`], if it does so before `t_max`.
pub fn caustic_time(d: &EikonalData, t_max: f64) -> Option<f64> {
    if d.plane.is_some() {
        return None;
    }
    RayField::new(d).caustic_time(t_max)
}

fn solve_small(j: &[[f64; 3]; 3], r: &[f64; 3], dim: usize) -> [f64; 3] {
    match dim {
        1 => [r[0] / j[0][0], 0.0, 0.0],
        2 => {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (j[0][0] * r[1] - j[1][0] * r[0]) / det, 0.0]
        }
        _ => {
            let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
            let mut out = [0.0; 3];
            for c in 0..3 {
                let mut m = *j;
                for row in 0..3 {
                    m[row][c] = r[row];
                }
                out[c] = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                    / det;
            }
            out
        }
    }
}

/// Trace a characteristic phase on `[0, t_final]`, sampled every grid time
/// step. Plane-wave data short-circuit to the closed form. If a caustic
/// occurs first, the phase is truncated there and `caustic_time` is set.
pub fn trace_phase(d: &EikonalData, t_final: f64) -> Result<Phase> {
    let grid = *d.grid();
    if let Some(k) = d.plane {
        return Ok(Phase::plane(grid, k, t_final));
    }
    let rep = validate_eikonal_data(d, 1e-8);
    if !rep.pass {
        return Err(Error::PhaseSet(format!("invalid eikonal data: {rep:?}")));
    }
    let rays = RayField::new(d);
    let caustic = rays.caustic_time(t_final);
    let t_end = caustic.unwrap_or(t_final);
    let h = grid.dt;
    let steps = (t_end / h).floor() as usize;
    let coords = grid.coords();
    let dim = grid.dim;
    let mut guess: Vec<[f64; 3]> = coords.clone();
    let mut periodic = Vec::with_capacity(steps + 1);
    let mut dus = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let t = j as f64 * h;
        let mut per = vec![0.0; grid.npts()];
        let mut du = vec![vec![0.0; grid.npts()]; dim + 1];
        for (p, x) in coords.iter().enumerate() {
            let mut y = guess[p];
            let mut converged = false;
            let mut last = (rays.at_point(&y), 0.0);
            for _ in 0..50 {
                let (g, hs, v) = rays.at_point(&y);
                let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                let mut res = [0.0; 3];
                for a in 0..dim {
                    res[a] = y[a] + t * g[a] / gn - x[a];
                }
                let rn = res.iter().map(|r| r * r).sum::<f64>().sqrt();
                last = ((g, hs, v), gn);
                if rn < 1e-13 * (1.0 + grid.l) {
                    converged = true;
                    break;
                }
                let m = RayField::m_matrix(&g, &hs, dim);
                let mut jac = [[0.0; 3]; 3];
                for a in 0..dim {
                    for b in 0..dim {
                        jac[a][b] = if a == b { 1.0 } else { 0.0 } + t * m[a][b];
                    }
                }
                let step = solve_small(&jac, &res, dim);
                for a in 0..dim {
                    y[a] -= step[a];
                }
            }
            if !converged {
                return Err(Error::NonConvergence(format!("ray inversion at t = {t}, point {p}")));
            }
            guess[p] = y;
            let ((g, _, v), gn) = last;
            per[p] = v - (d.linear[0] * x[0] + d.linear[1] * x[1] + d.linear[2] * x[2]);
            du[0][p] = -gn;
            for a in 0..dim {
                du[a + 1][p] = g[a];
            }
        }
        periodic.push(per);
        dus.push(du);
    }
    Ok(Phase {
        grid,
        kind: PhaseKind::Traced { linear: d.linear, h, periodic, du: dus },
        t_final: steps as f64 * h,
        caustic_time: caustic,
    })
}

/// Pairwise interaction class of two phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairClass {
    /// `∂u_A·∂u_B ≡ 0`: parallel, same orientation.
    Resonant,
    /// `|∂u_A·∂u_B|` bounded away from zero.
    Separated,
    /// Neither — strong coherence is violated.
    Incoherent,
}

/// Extremes of `|∂u_A·∂u_B|` over the grid and the common sample times.
fn dot_range(a: &Phase, b: &Phase) -> Result<(f64, f64)> {
    let times = if a.plane_k().is_none() { a.sample_times() } else { b.sample_times() };
    let t_end = a.t_final.min(b.t_final);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for t in times.into_iter().filter(|&t| t <= t_end + 1e-12) {
        let (sa, sb) = (a.slice(t)?, b.slice(t)?);
        for p in 0..a.grid.npts() {
            let ca: Vec<f64> = sa.du.iter().map(|d| d[p]).collect();
            let cb: Vec<f64> = sb.du.iter().map(|d| d[p]).collect();
            let v = mdot(&ca, &cb).abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}

/// Classify a phase pair by the spacetime product `∂u_A·∂u_B`.
pub fn classify_pair(a: &Phase, b: &Phase, tol: f64) -> Result<PairClass> {
    let (lo, hi) = dot_range(a, b)?;
    Ok(if hi <= tol {
        PairClass::Resonant
    } else if lo >= tol {
        PairClass::Separated
    } else {
        PairClass::Incoherent
    })
}

/// Classification data of one unordered pair `A < B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairInfo {
    /// Index of the first phase.
    pub a: usize,
    /// Index of the second phase.
    pub b: usize,
    /// Interaction class.
    pub class: PairClass,
    /// `min |∂u_A·∂u_B|` over grid × times.
    pub min_dot: f64,
    /// `max |∂u_A·∂u_B|` over grid × times.
    pub max_dot: f64,
    /// Spatial gradients anti-parallel (possible in 1D); classed Separated.
    pub anti_parallel: bool,
}

/// Pair classification of a whole phase set together with η₀.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionTable {
    /// One entry per unordered pair in declaration order.
    pub pairs: Vec<PairInfo>,
    /// Uniform lower bound η₀.
    pub eta0: f64,
}

impl InteractionTable {
    /// Pairs of a given class.
    pub fn of_class(&self, class: PairClass) -> impl Iterator<Item = &PairInfo> {
        self.pairs.iter().filter(move |p| p.class == class)
    }
}

/// Classify every pair, reject incoherent or identical phases, and compute
/// η₀. Declaration order defines the total order on the phases.
pub fn build_interaction_table(phases: &[Phase], tol: f64) -> Result<InteractionTable> {
    let mut pairs = Vec::new();
    for a in 0..phases.len() {
        for b in a + 1..phases.len() {
            let (lo, hi) = dot_range(&phases[a], &phases[b])?;
            let class = if hi <= tol {
                PairClass::Resonant
            } else if lo >= tol {
                PairClass::Separated
            } else {
                PairClass::Incoherent
            };
            if class == PairClass::Incoherent {
                return Err(Error::PhaseSet(format!(
                    "phases {a} and {b} are neither resonant nor separated (|∂u_A·∂u_B| ∈ [{lo:e}, {hi:e}])"
                )));
            }
            let (sa, sb) = (phases[a].slice(0.0)?, phases[b].slice(0.0)?);
            let dim = phases[a].grid.dim;
            let mut min_diff = f64::INFINITY;
            let mut anti = true;
            for p in 0..phases[a].grid.npts() {
                let d2: f64 = (1..=dim).map(|i| (sa.du[i][p] - sb.du[i][p]).powi(2)).sum();
                min_diff = min_diff.min(d2.sqrt());
                let dot: f64 = (1..=dim).map(|i| sa.du[i][p] * sb.du[i][p]).sum();
                let na: f64 = (1..=dim).map(|i| sa.du[i][p].powi(2)).sum::<f64>().sqrt();
                let nb: f64 = (1..=dim).map(|i| sb.du[i][p].powi(2)).sum::<f64>().sqrt();
                anti &= (dot + na * nb).abs() <= 1e-12 * na * nb;
            }
            if min_diff <= tol {
                return Err(Error::PhaseSet(format!("phases {a} and {b} have identical gradients somewhere")));
            }
            pairs.push(PairInfo { a, b, class, min_dot: lo, max_dot: hi, anti_parallel: anti });
        }
    }
    let mut table = InteractionTable { pairs, eta0: 0.0 };
    table.eta0 = eta0(phases, &table)?;
    Ok(table)
}

/// Uniform lower bound: the minimum over grid × sample times of `|∂⁰u_A|`,
/// `|∇u_A|`, `|∂(u_A±u_B)·∂(u_A±u_B)|` and `|∇(u_A±u_B)|²` for separated
/// pairs, and `|∇(u_A±u_B)|²` for resonant pairs. Combined phases of
/// anti-parallel pairs whose spatial gradient vanishes identically only
/// contribute their spacetime norm.
pub fn eta0(phases: &[Phase], table: &InteractionTable) -> Result<f64> {
    let mut m = f64::INFINITY;
    for ph in phases {
        for t in ph.sample_times() {
            let s = ph.slice(t)?;
            for p in 0..ph.grid.npts() {
                m = m.min(s.du[0][p].abs());
                let g: f64 = s.du[1..].iter().map(|d| d[p] * d[p]).sum::<f64>().sqrt();
                m = m.min(g);
            }
        }
    }
    for pair in &table.pairs {
        let (pa, pb) = (&phases[pair.a], &phases[pair.b]);
        let times = if pa.plane_k().is_none() { pa.sample_times() } else { pb.sample_times() };
        let t_end = pa.t_final.min(pb.t_final);
        // A combined phase of an anti-parallel pair may be spatially constant
        // (1D, k and −k); its spatial bound is then void and skipped.
        let spatially_void = |sign: f64| -> Result<bool> {
            let (sa, sb) = (pa.slice(0.0)?, pb.slice(0.0)?);
            Ok(pair.anti_parallel
                && (0..pa.grid.npts())
                    .all(|p| (1..sa.du.len()).all(|i| (sa.du[i][p] + sign * sb.du[i][p]).abs() <= 1e-12)))
        };
        let void = [spatially_void(1.0)?, spatially_void(-1.0)?];
        for t in times.into_iter().filter(|&t| t <= t_end + 1e-12) {
            let (sa, sb) = (pa.slice(t)?, pb.slice(t)?);
            for p in 0..pa.grid.npts() {
                for (si, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let c: Vec<f64> = sa.du.iter().zip(&sb.du).map(|(x, y)| x[p] + sign * y[p]).collect();
                    let g2: f64 = c[1..].iter().map(|v| v * v).sum();
                    if !void[si] {
                        m = m.min(g2);
                    }
                    if pair.class == PairClass::Separated {
                        m = m.min(mdot(&c, &c).abs());
                    }
                }
            }
        }
    }
    if !(m > 0.0) {
        return Err(Error::PhaseSet(format!("degenerate phase set: η₀ = {m}")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_relative_eq;

    use super::*;

    fn g2(n: usize) -> Grid {
        Grid::new(2, n, 2.0 * PI, 0.25).unwrap()
    }

    #[test]
    fn plane_wave_data_validate() {
        let g = g2(16);
        assert!(validate_eikonal_data(&EikonalData::plane(g, [1.0, 2.0, 0.0]), 1e-12).pass);
        let mut bad = EikonalData::plane(g, [1.0, 0.0, 0.0]);
        bad.vdot = FieldArray::scalar(g, vec![C64::new(1.0, 0.0); g.npts()]).unwrap();
        let r = validate_eikonal_data(&bad, 1e-12);
        assert!(r.eikonal_ok && !r.future_directed && !r.pass);
    }

    #[test]
    fn critical_point_fails_gradient_check() {
        let g = g2(32);
        let per = FieldArray::from_fn(g, 1, |x| vec![C64::new((-(x[0] * x[0] + x[1] * x[1])).exp(), 0.0)]).unwrap();
        let d = EikonalData::from_periodic([0.0; 3], per).unwrap();
        let r = validate_eikonal_data(&d, 1e-6);
        assert!(!r.gradient_ok && !r.pass);
    }

    #[test]
    fn plane_phase_is_exactly_characteristic() {
        let g = g2(16);
        let ph = trace_phase(&EikonalData::plane(g, [0.6, -0.8, 0.0]), 2.0).unwrap();
        for t in ph.sample_times() {
            assert!(ph.eikonal_residual(t).unwrap() <= 1e-15);
            assert!(ph.box_u(t).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn classification_examples() {
        let g = g2(8);
        let p = |k: [f64; 3]| Phase::plane(g, k, 1.0);
        assert_eq!(classify_pair(&p([1.0, 0.0, 0.0]), &p([2.0, 0.0, 0.0]), 1e-10).unwrap(), PairClass::Resonant);
        assert_eq!(classify_pair(&p([1.0, 0.0, 0.0]), &p([0.0, 1.0, 0.0]), 1e-10).unwrap(), PairClass::Separated);
        let g1 = Grid::new(1, 8, 2.0 * PI, 0.25).unwrap();
        let table =
            build_interaction_table(&[Phase::plane(g1, [1.0, 0.0, 0.0], 1.0), Phase::plane(g1, [-1.0, 0.0, 0.0], 1.0)], 1e-10)
                .unwrap();
        assert_eq!(table.pairs[0].class, PairClass::Separated);
        assert!(table.pairs[0].anti_parallel);
        assert_relative_eq!(table.pairs[0].min_dot, 2.0);
    }

    #[test]
    fn eta0_examples() {
        let g = g2(8);
        let ph = vec![Phase::plane(g, [1.0, 0.0, 0.0], 1.0), Phase::plane(g, [0.0, 1.0, 0.0], 1.0)];
        assert_relative_eq!(build_interaction_table(&ph, 1e-10).unwrap().eta0, 1.0, epsilon = 1e-14);
        let single = vec![Phase::plane(g, [2.0, 0.0, 0.0], 1.0)];
        assert_relative_eq!(build_interaction_table(&single, 1e-10).unwrap().eta0, 2.0, epsilon = 1e-14);
        let g1 = Grid::new(1, 8, 2.0 * PI, 0.25).unwrap();
        let res = vec![Phase::plane(g1, [1.0, 0.0, 0.0], 1.0), Phase::plane(g1, [2.0, 0.0, 0.0], 1.0)];
        assert_relative_eq!(build_interaction_table(&res, 1e-10).unwrap().eta0, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn separated_combined_phase_norm_identity() {
        let g = g2(8);
        let (a, b) = (Phase::plane(g, [1.0, 0.5, 0.0], 1.0), Phase::plane(g, [-0.3, 2.0, 0.0], 1.0));
        let (sa, sb) = (a.slice(0.3).unwrap(), b.slice(0.3).unwrap());
        let ca: Vec<f64> = sa.du.iter().map(|d| d[0]).collect();
        let cb: Vec<f64> = sb.du.iter().map(|d| d[0]).collect();
        for s in [1.0, -1.0] {
            let c: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x + s * y).collect();
            assert!((mdot(&c, &c).abs() - 2.0 * mdot(&ca, &cb).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn incoherent_pair_is_rejected() {
        let g = g2(32);
        let per = FieldArray::from_fn(g, 1, |x| vec![C64::new(0.3 * x[1].sin(), 0.0)]).unwrap();
        let curved = trace_phase(&EikonalData::from_periodic([1.0, 0.0, 0.0], per).unwrap(), 0.5).unwrap();
        let plane = Phase::plane(g, [1.0, 0.0, 0.0], 0.5);
        assert_eq!(classify_pair(&plane, &curved, 1e-8).unwrap(), PairClass::Incoherent);
        assert!(matches!(build_interaction_table(&[plane, curved], 1e-8), Err(Error::PhaseSet(_))));
    }

    fn curved(n: usize, a: f64, t: f64) -> Phase {
        let g = Grid::new(2, n, 2.0 * PI, 0.25).unwrap();
        let per = FieldArray::from_fn(g, 1, |x| vec![C64::new(a * x[1].sin(), 0.0)]).unwrap();
        trace_phase(&EikonalData::from_periodic([1.0, 0.0, 0.0], per).unwrap(), t).unwrap()
    }

    #[test]
    fn traced_phase_self_converges() {
        // Compare at a time that is a sample of both resolutions.
        let (c, f) = (curved(32, 0.1, 0.5), curved(64, 0.1, 0.5));
        let t = 4.0 * c.grid().dt;
        let (rc, rf) = (c.discrete_eikonal_residual(t).unwrap(), f.discrete_eikonal_residual(t).unwrap());
        assert!(rc < 1e-2, "coarse residual {rc}");
        assert!(rc / rf >= 4.0, "residual {rc} → {rf}");
        assert!(c.eikonal_residual(t).unwrap() < 1e-13);
    }

    #[test]
    fn caustic_matches_dense_ray_scan() {
        let n = 32;
        let g = Grid::new(2, n, 2.0 * PI, 0.25).unwrap();
        let a = 0.5;
        let per = FieldArray::from_fn(g, 1, |x| vec![C64::new(a * x[1].cos(), 0.0)]).unwrap();
        let d = EikonalData::from_periodic([1.0, 0.0, 0.0], per).unwrap();
        let traced = trace_phase(&d, 10.0).unwrap();
        let tc = traced.caustic_time.expect("focusing data must form a caustic");
        // Brute force: det(I + tM) along each ray on a fine time scan, using the
        // analytic gradient and Hessian of v = x₁ + a cos x₂.
        let mut best = f64::INFINITY;
        for x in g.coords() {
            let gv = [1.0, -a * x[1].sin(), 0.0];
            let h = [[0.0, 0.0, 0.0], [0.0, -a * x[1].cos(), 0.0], [0.0; 3]];
            let m = RayField::m_matrix(&gv, &h, 2);
            let mut t = 0.0;
            while t < 10.0 {
                let det = (1.0 + t * m[0][0]) * (1.0 + t * m[1][1]) - t * t * m[0][1] * m[1][0];
                if det < CAUSTIC_THRESHOLD {
                    best = best.min(t);
                    break;
                }
                t += 1e-5;
            }
        }
        assert!((tc - best).abs() < 2e-5, "caustic {tc} vs scan {best}");
        assert!(traced.t_final <= tc);
    }

    #[test]
    fn classification_persists_in_time() {
        let c = curved(32, 0.1, 0.3);
        let g = *c.grid();
        let other = Phase::plane(g, [0.0, 1.0, 0.0], 0.3);
        for t in c.sample_times() {
            let (sa, sb) = (c.slice(t).unwrap(), other.slice(t).unwrap());
            let lo = (0..g.npts())
                .map(|p| {
                    let ca: Vec<f64> = sa.du.iter().map(|d| d[p]).collect();
                    let cb: Vec<f64> = sb.du.iter().map(|d| d[p]).collect();
                    mdot(&ca, &cb).abs()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(lo > 0.5);
        }
    }
}
