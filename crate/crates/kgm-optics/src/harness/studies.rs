//! Refinement studies: observed convergence orders of the quantities that
//! should vanish with the discretisation.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::run_error;
use crate::background::{background_diagnostics, evolve_background};
use crate::fields::{spectral, Grid};
use crate::parametrix::{cascade_ledger, first_order_at, symbolic_residual, SlotNorm};
use crate::{Error, Result, C64};

/// Values of one quantity along a refinement sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Refinement {
    /// Resolution parameter per level (points per axis, or the CFL factor).
    pub levels: Vec<f64>,
    /// Measured values.
    pub values: Vec<f64>,
    /// `log₂(v_i / v_{i+1})` for successive levels (each level halves the
    /// step).
    pub orders: Vec<f64>,
}

impl Refinement {
    fn new(levels: Vec<f64>, values: Vec<f64>) -> Self {
        let orders = values.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        Refinement { levels, values, orders }
    }

    /// Smallest observed order, treating levels already at or below `floor`
    /// as converged (their order is not limited by the discretisation).
    pub fn min_order(&self, floor: f64) -> f64 {
        self.values
            .windows(2)
            .zip(&self.orders)
            .filter(|(w, _)| w[0] > floor && w[1] > floor)
            .map(|(_, &o)| o)
            .fold(f64::INFINITY, f64::min)
    }
}

fn at_n(cfg: &ExperimentConfig, n: usize) -> Result<Grid> {
    Grid::new(cfg.grid.dim, n, cfg.grid.length, cfg.grid.cfl)
}

/// Largest relative cascade-slot residual at `T/2` for each grid size.
pub fn cascade_refinement(cfg: &ExperimentConfig, ns: &[usize]) -> Result<(Refinement, Vec<Vec<SlotNorm>>)> {
    let ks = cfg.plane_ks()?;
    let t = 0.5 * cfg.t_final;
    let mut values = Vec::new();
    let mut ledgers = Vec::new();
    for &n in ns {
        let d = cfg.background.build(at_n(cfg, n)?, &ks)?;
        let bg = evolve_background(&d, cfg.t_final, &[t])?;
        let rows = cascade_ledger(&symbolic_residual(&first_order_at(&bg, t)?));
        values.push(rows.iter().map(SlotNorm::relative).fold(0.0, f64::max));
        ledgers.push(rows);
    }
    Ok((Refinement::new(ns.iter().map(|&n| n as f64).collect(), values), ledgers))
}

/// Largest backreaction error `‖D − Σ∂u|Ψ|²‖/‖Σ∂u|Ψ|²‖` (absolute `‖D‖`
/// without charge) over `T/2` and `T`, per grid size.
pub fn backreaction_refinement(cfg: &ExperimentConfig, ns: &[usize]) -> Result<Refinement> {
    let ks = cfg.plane_ks()?;
    let mut values = Vec::new();
    for &n in ns {
        let d = cfg.background.build(at_n(cfg, n)?, &ks)?;
        let bg = evolve_background(&d, cfg.t_final, &[0.5 * cfg.t_final, cfg.t_final])?;
        values.push(background_diagnostics(&bg).iter().map(|r| r.defect_flux_error).fold(0.0, f64::max));
    }
    Ok(Refinement::new(ns.iter().map(|&n| n as f64).collect(), values))
}

/// Auxiliary consistency `‖G⁺ − □F⁺‖/‖G⁺‖` at `T/2` for a sequence of CFL
/// factors at one λ (grid size fixed by the configuration).
pub fn auxiliary_refinement(cfg: &ExperimentConfig, lambda: f64, cfls: &[f64]) -> Result<Refinement> {
    let ks = cfg.plane_ks()?;
    let mut values = Vec::new();
    for &cfl in cfls {
        let mut c = cfg.clone();
        c.grid.cfl = cfl;
        values.push(run_error(&c, &ks, lambda)?.0.auxiliary.relative);
    }
    Ok(Refinement::new(cfls.to_vec(), values))
}

/// Transport checks of the background amplitudes at time `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayTransport {
    /// `max |(|Ψ_A(t, x)|) − |Ψ_A(0, x − k̂t)||` over phases and points.
    pub modulus: f64,
    /// Largest relative drift of `∫|Ψ_A|²` over the recorded steps.
    pub charge: f64,
}

/// Compare `|Ψ_A|` at time `t` with its initial profile shifted along the
/// rays of the plane phase.
pub fn ray_transport(cfg: &ExperimentConfig, t: f64) -> Result<RayTransport> {
    let ks = cfg.plane_ks()?;
    let grid = cfg.grid.base()?;
    let d = cfg.background.build(grid, &ks)?;
    let bg = evolve_background(&d, cfg.t_final, &[t])?;
    let level = bg.window_at(t)?.center();
    let mut modulus = 0.0f64;
    for (a, k) in ks.iter().enumerate() {
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Config("zero wave vector".into()));
        }
        let shift = [k[0] / norm * level.t, k[1] / norm * level.t, k[2] / norm * level.t];
        let abs0: Vec<C64> = d.psi[a].comp(0).iter().map(|v| C64::new(v.norm(), 0.0)).collect();
        let expect = spectral::translate(&grid, &abs0, shift);
        let err = level.psi[a].iter().zip(&expect).map(|(x, y)| (x.norm() - y.re).abs()).fold(0.0, f64::max);
        modulus = modulus.max(err);
    }
    let mut charge = 0.0f64;
    for a in 0..ks.len() {
        let q0 = bg.series[0].psi_charge[a];
        for r in &bg.series {
            charge = charge.max(if q0 > 0.0 { (r.psi_charge[a] - q0).abs() / q0 } else { r.psi_charge[a].abs() });
        }
    }
    Ok(RayTransport { modulus, charge })
}
