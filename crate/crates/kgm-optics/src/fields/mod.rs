//! Periodic-grid field containers and the operators shared by every module:
//! spectral derivatives, Sobolev norms, frequency projectors, the discrete
//! d'Alembertian and the oscillatory d'Alembertian computed through the
//! cascade identity.

pub mod algebra;
pub mod osc;
pub mod spectral;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Uniform periodic grid on the box `[-L/2, L/2)^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Spatial dimension (1, 2 or 3).
    pub dim: usize,
    /// Points per axis (power of two).
    pub n: usize,
    /// Box length per axis.
    pub l: f64,
    /// Time step.
    pub dt: f64,
    /// CFL factor; `dt ≤ cfl · dx` with `cfl ≤ 0.5`.
    pub cfl: f64,
}

impl Grid {
    /// Build a grid whose time step is `cfl · dx`.
    pub fn new(dim: usize, n: usize, l: f64, cfl: f64) -> Result<Self> {
        let g = Grid { dim, n, l, dt: cfl * l / n as f64, cfl };
        g.validate()?;
        Ok(g)
    }

    /// Check the grid invariants.
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::Config(format!("points per axis must be a power of two ≥ 4, got {}", self.n)));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::Config(format!("box length must be positive, got {}", self.l)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::Config(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        if !(self.dt > 0.0 && self.dt <= self.cfl * self.dx() * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "time step {} violates dt ≤ cfl·dx = {}",
                self.dt,
                self.cfl * self.dx()
            )));
        }
        Ok(())
    }

    /// Grid spacing (identical on every axis).
    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Total number of grid points.
    pub fn npts(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Volume of the box.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.dim as i32)
    }

    /// Coordinates of a flat grid index (unused axes are zero).
    pub fn coord(&self, idx: usize) -> [f64; 3] {
        let m = spectral::unflatten(self, idx);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = -0.5 * self.l + m[axis] as f64 * self.dx();
        }
        x
    }

    /// All grid coordinates in flat order.
    pub fn coords(&self) -> Vec<[f64; 3]> {
        (0..self.npts()).map(|i| self.coord(i)).collect()
    }

    /// Same grid with a different CFL factor.
    pub fn with_cfl(&self, cfl: f64) -> Result<Self> {
        Grid::new(self.dim, self.n, self.l, cfl)
    }
}

/// Sampled real or complex field with one (scalar) or `dim+1` (spacetime
/// vector) components. Real fields are stored with zero imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldArray {
    grid: Grid,
    comps: Vec<Vec<C64>>,
}

impl FieldArray {
    /// Build from component samples, validating shapes.
    pub fn new(grid: Grid, comps: Vec<Vec<C64>>) -> Result<Self> {
        if comps.len() != 1 && comps.len() != grid.dim + 1 {
            return Err(Error::Config(format!(
                "a field has 1 or {} components, got {}",
                grid.dim + 1,
                comps.len()
            )));
        }
        if comps.iter().any(|c| c.len() != grid.npts()) {
            return Err(Error::Config("component length does not match the grid".into()));
        }
        Ok(FieldArray { grid, comps })
    }

    /// Scalar field from samples.
    pub fn scalar(grid: Grid, data: Vec<C64>) -> Result<Self> {
        FieldArray::new(grid, vec![data])
    }

    /// Real scalar field from samples.
    pub fn real_scalar(grid: Grid, data: &[f64]) -> Result<Self> {
        FieldArray::scalar(grid, data.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// Zero field with `ncomp` components.
    pub fn zeros(grid: Grid, ncomp: usize) -> Self {
        FieldArray { grid, comps: vec![vec![C64::new(0.0, 0.0); grid.npts()]; ncomp] }
    }

    /// Sample a function of position for every component.
    pub fn from_fn<F>(grid: Grid, ncomp: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64; 3]) -> Vec<C64>,
    {
        let mut comps = vec![Vec::with_capacity(grid.npts()); ncomp];
        for idx in 0..grid.npts() {
            let v = f(&grid.coord(idx));
            for (c, val) in comps.iter_mut().zip(v) {
                c.push(val);
            }
        }
        FieldArray::new(grid, comps)
    }

    /// Grid of the field.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of components.
    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    /// Samples of one component.
    pub fn comp(&self, i: usize) -> &[C64] {
        &self.comps[i]
    }

    /// Mutable samples of one component.
    pub fn comp_mut(&mut self, i: usize) -> &mut Vec<C64> {
        &mut self.comps[i]
    }

    /// All components.
    pub fn comps(&self) -> &[Vec<C64>] {
        &self.comps
    }

    /// Consume into components.
    pub fn into_comps(self) -> Vec<Vec<C64>> {
        self.comps
    }

    /// Error if any sample is NaN or infinite.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        for c in &self.comps {
            if let Some(pos) = c.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidField {
                    name: name.to_string(),
                    reason: format!("non-finite sample at index {pos}"),
                });
            }
        }
        Ok(())
    }

    /// Largest absolute imaginary part.
    pub fn max_imag(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Largest modulus over all samples and components.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Pointwise linear combination `self + a·other`.
    pub fn axpy(&self, a: C64, other: &FieldArray) -> Result<FieldArray> {
        same_grid(&self.grid, &other.grid)?;
        if self.ncomp() != other.ncomp() {
            return Err(Error::Config("component counts differ".into()));
        }
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + a * q).collect())
            .collect();
        FieldArray::new(self.grid, comps)
    }
}

/// Error unless two grids are identical.
pub fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::Config(format!("mismatched grids: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Three consecutive time slices `(t−dt, t, t+dt)` on one grid.
#[derive(Clone, Debug)]
pub struct FieldHistory {
    /// Slice at `t − dt`.
    pub prev: FieldArray,
    /// Slice at `t`.
    pub curr: FieldArray,
    /// Slice at `t + dt`.
    pub next: FieldArray,
    /// Time of the middle slice.
    pub t: f64,
}

impl FieldHistory {
    /// Bundle three slices, checking that they share one grid and shape.
    pub fn new(prev: FieldArray, curr: FieldArray, next: FieldArray, t: f64) -> Result<Self> {
        same_grid(prev.grid(), curr.grid())?;
        same_grid(curr.grid(), next.grid())?;
        if prev.ncomp() != curr.ncomp() || curr.ncomp() != next.ncomp() {
            return Err(Error::Config("history slices have different component counts".into()));
        }
        Ok(FieldHistory { prev, curr, next, t })
    }

    /// Sample `f(t, x)` at the three levels around `t`.
    pub fn from_fn<F>(grid: Grid, ncomp: usize, t: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64; 3]) -> Vec<C64>,
    {
        let slice = |s: f64| FieldArray::from_fn(grid, ncomp, |x| f(s, x));
        FieldHistory::new(slice(t - grid.dt)?, slice(t)?, slice(t + grid.dt)?, t)
    }

    /// Grid shared by the slices.
    pub fn grid(&self) -> &Grid {
        self.curr.grid()
    }

    /// Centred time derivative of component `i` at the middle level.
    pub fn dt_comp(&self, i: usize) -> Vec<C64> {
        let h = 0.5 / self.grid().dt;
        self.next.comp(i).iter().zip(self.prev.comp(i)).map(|(a, b)| (a - b) * h).collect()
    }

    /// Centred second time derivative of component `i`.
    pub fn dtt_comp(&self, i: usize) -> Vec<C64> {
        let h = 1.0 / (self.grid().dt * self.grid().dt);
        self.next
            .comp(i)
            .iter()
            .zip(self.curr.comp(i))
            .zip(self.prev.comp(i))
            .map(|((a, b), c)| (a - 2.0 * b + c) * h)
            .collect()
    }
}

/// Order of a Sobolev norm; the weight is carried as metadata only because
/// the periodic box has no unbounded-domain weight analogue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    /// Sobolev order `s`.
    pub s: f64,
    /// Decay weight of the unbounded-domain space (not used in evaluation).
    pub weight: Option<f64>,
}

impl NormSpec {
    /// Unweighted norm of order `s`.
    pub fn order(s: f64) -> Self {
        NormSpec { s, weight: None }
    }
}

/// `‖f‖_{H^s} = (Σ_ξ (1+|ξ|²)^s |f̂(ξ)|² · cell volume)^{1/2}`, summed over
/// components; `s = 0` gives the discrete L² norm.
pub fn sobolev_norm(f: &FieldArray, spec: NormSpec) -> Result<f64> {
    if !(-2.0..=3.0).contains(&spec.s) {
        return Err(Error::Config(format!("Sobolev order {} outside [-2, 3]", spec.s)));
    }
    f.check_finite("sobolev_norm input")?;
    Ok(f.comps().iter().map(|c| spectral::sobolev_sq(f.grid(), c, spec.s)).sum::<f64>().sqrt())
}

/// Discrete L² norm of raw samples.
pub fn l2_norm(grid: &Grid, f: &[C64]) -> f64 {
    (f.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt()
}

/// Discrete L² norm of a multi-component field given as raw slices.
pub fn l2_norm_comps(grid: &Grid, comps: &[Vec<C64>]) -> f64 {
    comps.iter().map(|c| l2_norm(grid, c).powi(2)).sum::<f64>().sqrt()
}

/// Cut-off wavenumber `λ^{-κ}` of the frequency projectors.
pub fn projector_cutoff(lambda: f64, kappa: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("λ must be positive, got {lambda}")));
    }
    if !(kappa > 0.0 && kappa < 0.25) {
        return Err(Error::Config(format!("κ must lie in (0, 1/4), got {kappa}")));
    }
    Ok(lambda.powf(-kappa))
}

/// Low-frequency projector `Π₋`: zero every mode with `|ξ| > λ^{-κ}`.
pub fn project_low(f: &FieldArray, lambda: f64, kappa: f64) -> Result<FieldArray> {
    f.check_finite("project_low input")?;
    let cut = projector_cutoff(lambda, kappa)?;
    let comps = f.comps().iter().map(|c| spectral::low_pass(f.grid(), c, cut)).collect();
    FieldArray::new(*f.grid(), comps)
}

/// High-frequency projector `Π₊ = identity − Π₋`.
pub fn project_high(f: &FieldArray, lambda: f64, kappa: f64) -> Result<FieldArray> {
    let low = project_low(f, lambda, kappa)?;
    f.axpy(C64::new(-1.0, 0.0), &low)
}

/// Discrete d'Alembertian `−(f(t+dt) − 2f(t) + f(t−dt))/dt² + Δf(t)`.
pub fn dalembert(h: &FieldHistory) -> Result<FieldArray> {
    let grid = *h.grid();
    let comps = (0..h.curr.ncomp())
        .map(|i| {
            let lap = spectral::laplacian(&grid, h.curr.comp(i));
            h.dtt_comp(i).iter().zip(&lap).map(|(a, b)| -a + b).collect()
        })
        .collect();
    let out = FieldArray::new(grid, comps)?;
    out.check_finite("dalembert output")?;
    Ok(out)
}

/// Samples of a phase `u = k·x − ωt + u_per(t, x)` at three time levels:
/// the affine part is exact, the periodic remainder is sampled.
#[derive(Clone, Debug)]
pub struct PhaseHistory {
    /// Spatial wavevector of the affine part.
    pub k: [f64; 3],
    /// Temporal frequency of the affine part.
    pub omega: f64,
    /// Periodic remainder (real scalar history).
    pub periodic: FieldHistory,
}

/// Pointwise data of a phase at the middle level of a history.
struct PhaseJet {
    u: Vec<f64>,
    /// Lower-index gradient `∂_α u`, α = 0..=dim.
    du: Vec<Vec<f64>>,
    box_u: Vec<f64>,
}

impl PhaseHistory {
    /// Exact plane wave `u = k·x − |k| t` (zero periodic part).
    pub fn plane(grid: Grid, k: [f64; 3], t: f64) -> Result<Self> {
        let omega = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        let z = FieldArray::zeros(grid, 1);
        Ok(PhaseHistory { k, omega, periodic: FieldHistory::new(z.clone(), z.clone(), z, t)? })
    }

    fn jet(&self) -> PhaseJet {
        let grid = *self.periodic.grid();
        let t = self.periodic.t;
        let per = self.periodic.curr.comp(0);
        let grad = spectral::gradient(&grid, per);
        let lap = spectral::laplacian(&grid, per);
        let pt = self.periodic.dt_comp(0);
        let ptt = self.periodic.dtt_comp(0);
        let mut u = Vec::with_capacity(grid.npts());
        let mut du = vec![Vec::with_capacity(grid.npts()); grid.dim + 1];
        let mut box_u = Vec::with_capacity(grid.npts());
        for idx in 0..grid.npts() {
            let x = grid.coord(idx);
            let lin: f64 = (0..grid.dim).map(|a| self.k[a] * x[a]).sum();
            u.push(lin - self.omega * t + per[idx].re);
            du[0].push(-self.omega + pt[idx].re);
            for a in 0..grid.dim {
                du[a + 1].push(self.k[a] + grad[a][idx].re);
            }
            box_u.push(-ptt[idx].re + lap[idx].re);
        }
        PhaseJet { u, du, box_u }
    }
}

/// Smooth bracket of the cascade identity,
/// `−λ^{-2}(∂u·∂u)F + iλ^{-1}(2∂^αu ∂_αF + □u F) + □F`, so that
/// `□(e^{iu/λ}F) = e^{iu/λ} · bracket`.
pub fn cascade_bracket(f: &FieldHistory, u: &PhaseHistory, lambda: f64) -> Result<FieldArray> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("λ must be positive, got {lambda}")));
    }
    same_grid(f.grid(), u.periodic.grid())?;
    let grid = *f.grid();
    let jet = u.jet();
    let box_f = dalembert(f)?;
    let inv = 1.0 / lambda;
    let comps = (0..f.curr.ncomp())
        .map(|i| {
            let fc = f.curr.comp(i);
            let ft = f.dt_comp(i);
            let grad = spectral::gradient(&grid, fc);
            (0..grid.npts())
                .map(|p| {
                    let du0 = jet.du[0][p];
                    let mut eik = -du0 * du0;
                    // 2 ∂^α u ∂_α F with ∂^0 u = −∂_t u.
                    let mut transport = -2.0 * du0 * ft[p];
                    for a in 0..grid.dim {
                        let g = jet.du[a + 1][p];
                        eik += g * g;
                        transport += 2.0 * g * grad[a][p];
                    }
                    -(inv * inv) * eik * fc[p]
                        + C64::new(0.0, inv) * (transport + jet.box_u[p] * fc[p])
                        + box_f.comp(i)[p]
                })
                .collect()
        })
        .collect();
    FieldArray::new(grid, comps)
}

/// `□(e^{iu/λ}F)` evaluated through the cascade identity; the oscillatory
/// factor is never differentiated numerically.
pub fn oscillatory_dalembert(f: &FieldHistory, u: &PhaseHistory, lambda: f64) -> Result<FieldArray> {
    let bracket = cascade_bracket(f, u, lambda)?;
    let jet = u.jet();
    let grid = *f.grid();
    let comps = bracket
        .comps()
        .iter()
        .map(|c| c.iter().zip(&jet.u).map(|(v, ph)| v * C64::from_polar(1.0, ph / lambda)).collect())
        .collect();
    let out = FieldArray::new(grid, comps)?;
    out.check_finite("oscillatory_dalembert output")?;
    Ok(out)
}

/// Sidecar header of a field snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub components: usize,
    pub time: f64,
    pub name: String,
    /// Whether samples are stored as interleaved (re, im) pairs.
    pub complex: bool,
}

/// Write `<stem>.bin` (row-major little-endian f64, component-major) and the
/// JSON sidecar `<stem>.json`. Returns the binary path.
pub fn write_snapshot(stem: &Path, f: &FieldArray, time: f64, name: &str) -> Result<PathBuf> {
    let complex = f.max_imag() > 0.0;
    let mut bytes = Vec::with_capacity(f.ncomp() * f.grid().npts() * if complex { 16 } else { 8 });
    for c in f.comps() {
        for v in c {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            if complex {
                bytes.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    let bin = stem.with_extension("bin");
    fs::write(&bin, bytes)?;
    let header = SnapshotHeader {
        dim: f.grid().dim,
        n: f.grid().n,
        l: f.grid().l,
        components: f.ncomp(),
        time,
        name: name.to_string(),
        complex,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(stem.with_extension("json"), json)?;
    Ok(bin)
}

/// Read a snapshot written by [`write_snapshot`]; the time step of the
/// returned grid is `cfl · dx` for the given `cfl`.
pub fn read_snapshot(stem: &Path, cfl: f64) -> Result<(SnapshotHeader, FieldArray)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)
        .map_err(|e| Error::Serde(e.to_string()))?;
    let grid = Grid::new(header.dim, header.n, header.l, cfl)?;
    let bytes = fs::read(stem.with_extension("bin"))?;
    let width = if header.complex { 16 } else { 8 };
    if bytes.len() != header.components * grid.npts() * width {
        return Err(Error::Serde("snapshot size does not match its header".into()));
    }
    let read = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8-byte slice"));
    let comps = (0..header.components)
        .map(|c| {
            (0..grid.npts())
                .map(|i| {
                    let o = (c * grid.npts() + i) * width;
                    C64::new(read(o), if header.complex { read(o + 8) } else { 0.0 })
                })
                .collect()
        })
        .collect();
    let f = FieldArray::new(grid, comps)?;
    f.check_finite(&header.name)?;
    Ok((header, f))
}

/// Minkowski product of two lower- (or two upper-) index spacetime vectors.
pub fn mdot(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
}
