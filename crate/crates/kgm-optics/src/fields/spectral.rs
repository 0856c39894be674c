//! Fourier-space operators on the periodic box.
//!
//! All routines act on flat row-major sample arrays (axis 0 slowest) and use
//! the convention `f̂_k = Σ_j f_j e^{-iξ_k·x_j}` for the forward transform,
//! with the inverse carrying the `1/N^dim` normalisation. Transforms are
//! planned once per thread and length through [`rustfft::FftPlanner`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::Grid;
use crate::C64;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Transform every axis of `data` in place (unnormalised).
fn transform(grid: &Grid, data: &mut [C64], inverse: bool) {
    let n = grid.n;
    let dim = grid.dim;
    debug_assert_eq!(data.len(), grid.npts());
    let fft = plan(n, inverse);
    // Last axis: lines are contiguous, rustfft handles the batch directly.
    fft.process(data);
    if dim == 1 {
        return;
    }
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..dim - 1 {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Forward DFT over all axes (unnormalised).
pub fn forward(grid: &Grid, data: &mut [C64]) {
    transform(grid, data, false);
}

/// Inverse DFT over all axes, normalised so that `inverse(forward(f)) = f`.
pub fn inverse(grid: &Grid, data: &mut [C64]) {
    transform(grid, data, true);
    let scale = 1.0 / grid.npts() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Angular wavenumber of DFT index `j` on an axis with `n` points and
/// length `l`; the Nyquist index maps to `-π n / l`.
pub fn wavenumber(j: usize, n: usize, l: f64) -> f64 {
    let jj = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
    2.0 * PI * jj as f64 / l
}

/// Per-axis multi-index of a flat position.
pub fn unflatten(grid: &Grid, mut idx: usize) -> [usize; 3] {
    let mut out = [0usize; 3];
    for axis in (0..grid.dim).rev() {
        out[axis] = idx % grid.n;
        idx /= grid.n;
    }
    out
}

/// Wavevector and per-axis Nyquist flags of a flat spectral index.
pub fn wavevector(grid: &Grid, idx: usize) -> ([f64; 3], [bool; 3]) {
    let m = unflatten(grid, idx);
    let mut xi = [0.0; 3];
    let mut nyq = [false; 3];
    for axis in 0..grid.dim {
        xi[axis] = wavenumber(m[axis], grid.n, grid.l);
        nyq[axis] = m[axis] == grid.n / 2;
    }
    (xi, nyq)
}

/// Multiply the spectrum of `f` by `symbol(ξ, nyquist)` and transform back.
pub fn apply_symbol<S>(grid: &Grid, f: &[C64], symbol: S) -> Vec<C64>
where
    S: Fn(&[f64; 3], &[bool; 3]) -> C64,
{
    let mut spec = f.to_vec();
    forward(grid, &mut spec);
    for (idx, v) in spec.iter_mut().enumerate() {
        let (xi, nyq) = wavevector(grid, idx);
        *v *= symbol(&xi, &nyq);
    }
    inverse(grid, &mut spec);
    spec
}

/// Spectral partial derivative along `axis`; the Nyquist mode of that axis
/// is dropped, as is standard for odd-order derivatives.
pub fn deriv(grid: &Grid, f: &[C64], axis: usize) -> Vec<C64> {
    apply_symbol(grid, f, |xi, nyq| {
        if nyq[axis] {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, xi[axis])
        }
    })
}

/// Spatial gradient (one forward transform, `dim` inverse transforms).
pub fn gradient(grid: &Grid, f: &[C64]) -> Vec<Vec<C64>> {
    let mut spec = f.to_vec();
    forward(grid, &mut spec);
    (0..grid.dim)
        .map(|axis| {
            let mut d = spec.clone();
            for (idx, v) in d.iter_mut().enumerate() {
                let (xi, nyq) = wavevector(grid, idx);
                *v *= if nyq[axis] {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, xi[axis])
                };
            }
            inverse(grid, &mut d);
            d
        })
        .collect()
}

/// Spectral Laplacian `Δf` (symbol `-|ξ|²`, Nyquist included).
pub fn laplacian(grid: &Grid, f: &[C64]) -> Vec<C64> {
    apply_symbol(grid, f, |xi, _| C64::new(-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0))
}

/// Squared `H^s` norm with the spectrum shifted by `shift`:
/// `Σ_ξ (1+|ξ+shift|²)^s |f̂(ξ)|² · cell volume / N^dim`.
pub fn sobolev_sq_shifted(grid: &Grid, f: &[C64], s: f64, shift: [f64; 3]) -> f64 {
    let mut spec = f.to_vec();
    forward(grid, &mut spec);
    let scale = grid.cell_volume() / grid.npts() as f64;
    let mut acc = 0.0;
    for (idx, v) in spec.iter().enumerate() {
        let (xi, _) = wavevector(grid, idx);
        let q = (xi[0] + shift[0]).powi(2) + (xi[1] + shift[1]).powi(2) + (xi[2] + shift[2]).powi(2);
        let w = if s == 0.0 { 1.0 } else { (1.0 + q).powf(s) };
        acc += w * v.norm_sqr();
    }
    acc * scale
}

/// Squared `H^s` norm of a sampled field.
pub fn sobolev_sq(grid: &Grid, f: &[C64], s: f64) -> f64 {
    sobolev_sq_shifted(grid, f, s, [0.0; 3])
}

/// Zero every Fourier mode with `|ξ| > cutoff`.
pub fn low_pass(grid: &Grid, f: &[C64], cutoff: f64) -> Vec<C64> {
    let c2 = cutoff * cutoff;
    apply_symbol(grid, f, |xi, _| {
        if xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] > c2 {
            C64::new(0.0, 0.0)
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

/// Translate a periodic field: returns `g(x) = f(x − s)`.
pub fn translate(grid: &Grid, f: &[C64], s: [f64; 3]) -> Vec<C64> {
    apply_symbol(grid, f, |xi, nyq| {
        let mut phase = 0.0;
        for axis in 0..3 {
            if !nyq[axis] {
                phase -= xi[axis] * s[axis];
            }
        }
        C64::from_polar(1.0, phase)
    })
}

/// Two-thirds-rule dealiasing (diagnostic option).
pub fn dealias(grid: &Grid, f: &[C64]) -> Vec<C64> {
    let kmax = (2.0 / 3.0) * PI * grid.n as f64 / grid.l;
    apply_symbol(grid, f, |xi, _| {
        if xi.iter().any(|k| k.abs() > kmax) {
            C64::new(0.0, 0.0)
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

/// Band-limited interpolation onto a grid refined by the factor `r`
/// (a power of two). The coarse Nyquist mode is discarded.
pub fn refine(grid: &Grid, f: &[C64], r: usize) -> (Grid, Vec<C64>) {
    let fine = Grid { n: grid.n * r, ..*grid };
    if r == 1 {
        return (fine, f.to_vec());
    }
    let mut spec = f.to_vec();
    forward(grid, &mut spec);
    let mut out = vec![C64::new(0.0, 0.0); fine.npts()];
    let n = grid.n;
    let nf = fine.n;
    let gain = (r as f64).powi(grid.dim as i32);
    'outer: for (idx, v) in spec.iter().enumerate() {
        let m = unflatten(grid, idx);
        let mut flat = 0usize;
        for axis in 0..grid.dim {
            let j = m[axis];
            let jf = if j < n / 2 {
                j
            } else if j == n / 2 {
                continue 'outer;
            } else {
                j + nf - n
            };
            flat = flat * nf + jf;
        }
        out[flat] = *v * gain;
    }
    inverse(&fine, &mut out);
    (fine, out)
}
