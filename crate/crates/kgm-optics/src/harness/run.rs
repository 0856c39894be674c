//! The experiment pipeline: phases → background → parametrix → error data →
//! coupled error evolution → diagnostics, gates, slope fits and reports.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fit::{fit_slope, SlopeFit};
use crate::background::{
    background_diagnostics, check_background_constraints, evolve_background, BackgroundInitialData, BgState,
    ConstraintReport, DiagnosticRow,
};
use crate::error_evolution::{
    error_norms, evolve_coupled, gauge_divergence, gauge_divergence_monitor, monitor_bootstrap, total_charge,
    verify_auxiliary, AuxiliaryReport, CoupledOptions, CoupledSystem, CoupledTrajectory,
};
use crate::fields::osc::osc_sobolev_norm;
use crate::fields::{l2_norm, write_snapshot, FieldArray, Grid};
use crate::init_data::{
    assemble_error_initial, neutralize_charge, reassembly_error, split_parameters, ConstraintSolveReport,
};
use crate::parametrix::{
    build_e_ell, cascade_ledger, first_order_at, interaction_terms_at, k_class_defects, residual_decompose,
    symbolic_residual, Decomposition, KClassReport, SlotNorm,
};
use crate::phases::{build_interaction_table, InteractionTable, PairClass, Phase};
use crate::{Error, Result, C64};

/// One named pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// Gate name.
    pub name: String,
    /// Outcome.
    pub pass: bool,
    /// Measured value(s) and threshold.
    pub detail: String,
}

impl Gate {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Gate { name: name.into(), pass, detail }
    }

    fn below(name: &str, value: f64, tol: f64) -> Self {
        Gate::new(name, value <= tol, format!("{value:.3e} ≤ {tol:.1e}"))
    }
}

/// One ledger line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    /// Wavelength parameter (0 for λ-independent metrics).
    pub lambda: f64,
    /// Time of the measurement.
    pub t: f64,
    /// Metric name.
    pub metric: String,
    /// Value.
    pub value: f64,
}

/// Fitted slope of one metric across the sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricFit {
    /// Metric name.
    pub metric: String,
    /// `(λ, value)` series.
    pub points: Vec<(f64, f64)>,
    /// Fit, if the series admits one.
    pub fit: Option<SlopeFit>,
    /// Expected exponent.
    pub target: f64,
    /// Half-width of the pass window.
    pub window: f64,
    /// Minimum R², if required.
    pub min_r2: Option<f64>,
    /// Outcome.
    pub pass: bool,
}

/// Slope fits of a sweep.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SweepReport {
    /// One entry per fitted metric.
    pub fits: Vec<MetricFit>,
}

impl SweepReport {
    /// Fit of a metric by name.
    pub fn get(&self, metric: &str) -> Option<&MetricFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }
}

/// Coupled-evolution results at one λ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorRun {
    /// Points per axis of the evolution grid.
    pub n: usize,
    /// Constraint solve of the error initial data.
    pub constraints: ConstraintSolveReport,
    /// Net-charge shift applied to `ζ̇` (0 when not neutralised).
    pub neutralize_shift: f64,
    /// `split_parameters` reassembly error.
    pub reassembly: f64,
    /// `‖Z(T/2)‖` in `L²`, `H^{1/2}`, `H¹`.
    pub norms: [f64; 3],
    /// Auxiliary consistency at `T/2`.
    pub auxiliary: AuxiliaryReport,
    /// Fitted bootstrap constants.
    pub c1: Option<f64>,
    /// Fitted bootstrap rate.
    pub c2: Option<f64>,
    /// Largest bundle excursion over the fitted envelope.
    pub max_excursion: f64,
    /// `‖∂_αA_λ^α(0)‖ / ‖∂_αA₁^α(0)‖`.
    pub gauge_initial: f64,
    /// Largest `‖∂_αA_λ^α‖ / ‖∂_αA₁^α‖` over the checkpoints.
    pub gauge_growth: f64,
    /// Largest drift of the total charge relative to `∫|ρ|`.
    pub charge_drift: f64,
    /// Largest out-of-support mass fraction met.
    pub support_leak: f64,
    /// Per-checkpoint `(t, L², H^{1/2}, H¹, ‖∂_αA_λ^α‖, bundle N(t))`.
    pub series: Vec<[f64; 6]>,
}

/// Results at one λ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaReport {
    /// Wavelength parameter.
    pub lambda: f64,
    /// Residual split at `T/2`.
    pub decomposition: Decomposition,
    /// `‖E^ell‖_{L²}` and its inversion defect, when separated pairs exist.
    pub e_ell: Option<(f64, f64)>,
    /// Coupled error evolution, when enabled.
    pub error: Option<ErrorRun>,
}

/// Everything a run measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    /// The configuration that produced the report.
    pub config: ExperimentConfig,
    /// Classified pairs and η₀.
    pub table: InteractionTable,
    /// First caustic time per phase.
    pub caustic_times: Vec<Option<f64>>,
    /// Largest `|∂u·∂u|` over phases, grid points and sample times.
    pub eikonal: f64,
    /// Background constraints.
    pub background: ConstraintReport,
    /// Background diagnostics at `T/2` and `T`.
    pub backreaction: Vec<DiagnosticRow>,
    /// Cascade ledger at `T/2`.
    pub cascade: Vec<SlotNorm>,
    /// Resonant-pair identities at `T/2`.
    pub k_class: KClassReport,
    /// Per-λ results, in the order of the λ list.
    pub lambdas: Vec<LambdaReport>,
    /// Slope fits (with ≥ 3 λ values).
    pub sweep: Option<SweepReport>,
    /// Every gate, in evaluation order.
    pub gates: Vec<Gate>,
    /// All gates passed.
    pub pass: bool,
    /// Name of the first failing gate.
    pub first_failure: Option<String>,
    /// Largest λ whose per-λ gates all pass.
    pub lambda0: Option<f64>,
    /// Ledger rows.
    #[serde(skip)]
    pub ledger: Vec<LedgerRow>,
}

impl RunReport {
    /// Gate by name.
    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }
}

/// Phase-stage data shared by every λ.
struct Stage0 {
    ks: Vec<[f64; 3]>,
    table: InteractionTable,
    caustic_times: Vec<Option<f64>>,
    eikonal: f64,
}

fn phase_stage(cfg: &ExperimentConfig, grid: Grid) -> Result<(Vec<Phase>, Stage0)> {
    let phases: Vec<Phase> = cfg.phases.iter().map(|p| p.build(grid, cfg.t_final)).collect::<Result<_>>()?;
    // Coherence is decided before anything is solved.
    let table = build_interaction_table(&phases, cfg.tolerances.coherence)?;
    let mut eikonal = 0.0f64;
    for ph in &phases {
        for t in ph.sample_times() {
            eikonal = eikonal.max(ph.eikonal_residual(t)?);
        }
    }
    let caustic_times = phases.iter().map(|p| p.caustic_time).collect();
    let ks = cfg.plane_ks()?;
    Ok((phases, Stage0 { ks, table, caustic_times, eikonal }))
}

fn plane_table(grid: Grid, ks: &[[f64; 3]], t_final: f64, tol: f64) -> Result<InteractionTable> {
    let phases: Vec<Phase> = ks.iter().map(|k| Phase::plane(grid, *k, t_final)).collect();
    build_interaction_table(&phases, tol)
}

/// Total charge and `∫|ρ|` of `(A₁ + Z, Φ₁ + Z_Φ)` at a checkpoint.
fn charges(grid: &Grid, f: &crate::error_evolution::StageFields) -> (f64, f64) {
    let a0: Vec<C64> = f.a1[0].iter().zip(&f.z[0]).map(|(a, b)| a + b).collect();
    let phi: Vec<C64> = f.phi1.iter().zip(&f.zeta).map(|(a, b)| a + b).collect();
    let phit: Vec<C64> = f.phi1_t.iter().zip(&f.zeta_t).map(|(a, b)| a + b).collect();
    let abs: f64 = (0..phi.len())
        .map(|p| ((phi[p] * phit[p].conj()).im + a0[p].re * phi[p].norm_sqr()).abs())
        .sum::<f64>()
        * grid.cell_volume();
    (total_charge(grid, &a0, &phi, &phit), abs)
}

fn ratio(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else {
        x
    }
}

/// Build, solve and evolve the error at one λ.
pub fn run_error(cfg: &ExperimentConfig, ks: &[[f64; 3]], lambda: f64) -> Result<(ErrorRun, CoupledTrajectory)> {
    let grid = cfg.grid.for_lambda(lambda, cfg.kmax())?;
    let bd = cfg.background.build(grid, ks).map_err(|e| e.at("background data"))?;
    let table = plane_table(grid, ks, cfg.t_final, cfg.tolerances.coherence)?;
    let mut free = cfg.free_data.build(grid, lambda).map_err(|e| e.at("free data"))?;
    let mut shift = 0.0;
    if cfg.error.neutralize {
        let (f, a) = neutralize_charge(&free, &bd).map_err(|e| e.at("neutralize"))?;
        free = f;
        shift = a;
    }
    let (mut data, constraints) =
        assemble_error_initial(&free, &bd, &table, cfg.tolerances.solver).map_err(|e| e.at("constraint solve"))?;
    if cfg.error.violate_gauge {
        data.zdot[0].iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    }
    let sys = CoupledSystem::new(grid, ks, &table, lambda, cfg.kappa).map_err(|e| e.at("coupled system"))?;
    let init = split_parameters(&data, &bd, &sys).map_err(|e| e.at("split parameters"))?;
    let reassembly = reassembly_error(&data, &init, &bd, &sys)?;
    let m = cfg.error.intervals;
    let checkpoints: Vec<f64> = (1..m).map(|i| i as f64 * cfg.t_final / m as f64).collect();
    let opts = CoupledOptions { t_final: cfg.t_final, checkpoints, blowup: cfg.error.blowup };
    let traj = evolve_coupled(&bd, &init, &sys, &opts).map_err(|e| e.at("coupled evolution"))?;
    let mid = &traj.checkpoints[m / 2 - 1];
    let start = sys.evaluate(&BgState::from_initial(&bd), &init.state, 0.0)?.fields;
    let sum = |x: &[Vec<C64>], y: &[Vec<C64>]| -> Vec<Vec<C64>> {
        x.iter().zip(y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
    };
    let div0 = l2_norm(&grid, &gauge_divergence(&grid, &sum(&start.a1, &start.z), &sum(&start.a1_t, &start.z_t)));
    let div0_first = l2_norm(&grid, &gauge_divergence(&grid, &start.a1, &start.a1_t));
    let gauge = gauge_divergence_monitor(&traj);
    let boot = monitor_bootstrap(&traj);
    let (q0, s0) = charges(&grid, &start);
    let mut charge_drift = 0.0f64;
    let mut scale = s0;
    let mut series = Vec::new();
    for (cp, g) in traj.checkpoints.iter().zip(&gauge) {
        let (q, s) = charges(&grid, &cp.fields);
        scale = scale.max(s);
        charge_drift = charge_drift.max((q - q0).abs());
        let n = error_norms(&grid, &cp.fields);
        let bundle = boot.rows.iter().find(|r| (r.t - cp.t).abs() < 1e-12).map_or(f64::NAN, |r| r.combined);
        series.push([cp.t, n[0], n[1], n[2], g.divergence, bundle]);
    }
    let run = ErrorRun {
        n: grid.n,
        constraints,
        neutralize_shift: shift,
        reassembly,
        norms: error_norms(&grid, &mid.fields),
        auxiliary: verify_auxiliary(mid, &grid),
        c1: boot.c1,
        c2: boot.c2,
        max_excursion: boot.max_excursion,
        gauge_initial: ratio(div0, div0_first),
        gauge_growth: gauge.iter().map(|g| ratio(g.divergence, g.first_order)).fold(0.0, f64::max),
        charge_drift: ratio(charge_drift, scale),
        support_leak: traj.checkpoints.iter().map(|c| c.support_leak).fold(0.0, f64::max),
        series,
    };
    Ok((run, traj))
}

fn write_error_snapshots(dir: &Path, lambda: f64, traj: &CoupledTrajectory, mid: usize) -> Result<()> {
    let cp = &traj.checkpoints[mid];
    let grid = traj.system.grid;
    let stem = dir.join(format!("error_lambda_{lambda}"));
    let mut comps = cp.fields.z.clone();
    comps.push(cp.fields.zeta.clone());
    // Vector components then the scalar, stored as one multi-component field
    // when the shapes allow it, otherwise as two files.
    if comps.len() == grid.dim + 1 {
        write_snapshot(&stem, &FieldArray::new(grid, comps)?, cp.t, "Z")?;
    } else {
        write_snapshot(&stem.with_file_name(format!("error_a_lambda_{lambda}")), &FieldArray::new(grid, cp.fields.z.clone())?, cp.t, "Z_A")?;
        write_snapshot(
            &stem.with_file_name(format!("error_phi_lambda_{lambda}")),
            &FieldArray::scalar(grid, cp.fields.zeta.clone())?,
            cp.t,
            "Z_Phi",
        )?;
    }
    Ok(())
}

fn lambda_stage(
    cfg: &ExperimentConfig,
    s0: &Stage0,
    sym: &Symbolic,
    lambda: f64,
) -> Result<(LambdaReport, Option<CoupledTrajectory>)> {
    let decomposition = residual_decompose(&sym.residual, &sym.terms, lambda);
    let e_ell = sym.e_ell.as_ref().map(|e| {
        let f = &sym.frame;
        (
            osc_sobolev_norm(&e.values(), f, lambda, sym.t, 0.0),
            osc_sobolev_norm(&e.defect(&sym.terms, f), f, lambda, sym.t, 0.0),
        )
    });
    let (error, traj) = if cfg.error.enabled {
        let (r, t) = run_error(cfg, &s0.ks, lambda).map_err(|e| e.at(format!("λ = {lambda}")))?;
        (Some(r), Some(t))
    } else {
        (None, None)
    };
    Ok((LambdaReport { lambda, decomposition, e_ell, error }, traj))
}

struct Symbolic {
    t: f64,
    frame: crate::fields::osc::PlaneFrame,
    residual: crate::parametrix::SymbolicResidual,
    terms: crate::parametrix::InteractionTerms,
    e_ell: Option<crate::parametrix::EllipticCorrection>,
}

fn fit_metric(metric: &str, lambdas: &[LambdaReport], value: impl Fn(&LambdaReport) -> Option<f64>, target: f64, window: f64, min_r2: Option<f64>) -> Option<MetricFit> {
    let points: Vec<(f64, f64)> = lambdas.iter().filter_map(|l| value(l).map(|v| (l.lambda, v))).collect();
    if points.len() < 3 {
        return None;
    }
    let fit = fit_slope(&points).ok();
    let pass = fit.is_some_and(|f| (f.slope - target).abs() <= window && min_r2.map_or(true, |r| f.r2 >= r));
    Some(MetricFit { metric: metric.into(), points, fit, target, window, min_r2, pass })
}

/// Fit every λ-scaling the run measured against its expected exponent.
pub fn sweep_fits(cfg: &ExperimentConfig, lambdas: &[LambdaReport]) -> SweepReport {
    let s = &cfg.slopes;
    let r2 = Some(s.min_r2);
    let fits = [
        fit_metric("remainder", lambdas, |l| Some(l.decomposition.remainder), 0.5, s.window, r2),
        fit_metric("gauge_residual", lambdas, |l| Some(l.decomposition.gauge), 0.5, s.window, r2),
        fit_metric("e_ell", lambdas, |l| l.e_ell.map(|e| e.0), 2.0, s.ell_window, None),
        fit_metric("e_ell_defect", lambdas, |l| l.e_ell.map(|e| e.1), 1.0, s.ell_window, None),
        fit_metric("error_l2", lambdas, |l| l.error.as_ref().map(|e| e.norms[0]), 0.5, s.error_window, None),
        fit_metric("error_h_half", lambdas, |l| l.error.as_ref().map(|e| e.norms[1]), 0.5, s.error_window, None),
        fit_metric("error_h1", lambdas, |l| l.error.as_ref().map(|e| e.norms[2]), 0.0, s.error_window, None),
    ];
    // A metric that is identically zero (e.g. no interactions) has no slope.
    SweepReport { fits: fits.into_iter().flatten().filter(|f| f.points.iter().any(|p| p.1 > 0.0)).collect() }
}

fn ledger_rows(report: &RunReport, t_mid: f64) -> Vec<LedgerRow> {
    let mut rows = Vec::new();
    let mut push = |lambda: f64, t: f64, metric: &str, value: f64| rows.push(LedgerRow { lambda, t, metric: metric.into(), value });
    push(0.0, 0.0, "eta0", report.table.eta0);
    push(0.0, 0.0, "eikonal", report.eikonal);
    push(0.0, 0.0, "background_maxwell", report.background.maxwell);
    push(0.0, 0.0, "background_lorenz", report.background.lorenz);
    for c in &report.cascade {
        push(0.0, t_mid, &format!("cascade_{}_{:?}", c.equation, c.slot).to_lowercase(), c.relative());
    }
    push(0.0, t_mid, "k_class", report.k_class.relative());
    for d in &report.backreaction {
        push(0.0, d.t, "defect_flux_error", d.defect_flux_error);
        push(0.0, d.t, "maxwell_defect", d.maxwell_defect);
        push(0.0, d.t, "flux", d.flux_norm);
    }
    for l in &report.lambdas {
        let lam = l.lambda;
        push(lam, t_mid, "remainder", l.decomposition.remainder);
        push(lam, t_mid, "interaction", l.decomposition.interaction);
        push(lam, t_mid, "gauge_residual", l.decomposition.gauge);
        if let Some((n, d)) = l.e_ell {
            push(lam, t_mid, "e_ell", n);
            push(lam, t_mid, "e_ell_defect", d);
        }
        if let Some(e) = &l.error {
            push(lam, 0.0, "constraint_maxwell", e.constraints.maxwell);
            push(lam, 0.0, "constraint_lorenz", e.constraints.lorenz);
            push(lam, 0.0, "reassembly", e.reassembly);
            push(lam, 0.0, "gauge_initial", e.gauge_initial);
            for s in &e.series {
                push(lam, s[0], "error_l2", s[1]);
                push(lam, s[0], "error_h_half", s[2]);
                push(lam, s[0], "error_h1", s[3]);
                push(lam, s[0], "gauge_divergence", s[4]);
                push(lam, s[0], "bundle", s[5]);
            }
            push(lam, t_mid, "auxiliary", e.auxiliary.relative);
            push(lam, t_mid, "charge_drift", e.charge_drift);
            push(lam, t_mid, "c1", e.c1.unwrap_or(f64::NAN));
            push(lam, t_mid, "c2", e.c2.unwrap_or(f64::NAN));
            push(lam, t_mid, "max_excursion", e.max_excursion);
        }
    }
    rows
}

fn lambda_gates(cfg: &ExperimentConfig, l: &LambdaReport) -> Vec<Gate> {
    let tol = &cfg.tolerances;
    let mut g = Vec::new();
    if let Some(e) = &l.error {
        let c = &e.constraints;
        g.push(Gate::below("error_constraints", c.maxwell.max(c.lorenz), tol.constraint));
        g.push(Gate::below("reassembly", e.reassembly, tol.reassembly));
        g.push(Gate::below("gauge_initial", e.gauge_initial, tol.gauge_initial));
        g.push(Gate::below("gauge_growth", e.gauge_growth, tol.gauge_growth));
        g.push(Gate::below("charge", e.charge_drift, tol.charge));
        if let Some(a) = tol.auxiliary {
            g.push(Gate::below("auxiliary", e.auxiliary.relative, a));
        }
    }
    for x in &mut g {
        x.name = format!("{} (λ = {})", x.name, l.lambda);
    }
    g
}

fn bootstrap_gate(cfg: &ExperimentConfig, lambdas: &[LambdaReport]) -> Option<Gate> {
    let runs: Vec<(f64, &ErrorRun)> = lambdas.iter().filter_map(|l| l.error.as_ref().map(|e| (l.lambda, e))).collect();
    if runs.is_empty() || runs.iter().all(|(_, e)| e.c1.is_none()) {
        return None;
    }
    let tol = &cfg.tolerances;
    let mut worst = 0.0f64;
    for w in runs.windows(2) {
        for (x, y) in [(w[0].1.c1, w[1].1.c1), (w[0].1.c2, w[1].1.c2)] {
            worst = worst.max(match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE),
                _ => f64::INFINITY,
            });
        }
    }
    let exc = runs.iter().map(|(_, e)| e.max_excursion).fold(0.0, f64::max);
    Some(Gate::new(
        "bootstrap",
        worst <= tol.bootstrap_variation && exc <= tol.bootstrap_excursion,
        format!("c₁/c₂ variation {worst:.3} ≤ {}, excursion {exc:.3} ≤ {}", tol.bootstrap_variation, tol.bootstrap_excursion),
    ))
}

/// Execute the pipeline for every λ of the configuration.
///
/// λ instances run concurrently on `workers` threads; results are merged in
/// λ order, so reports and ledgers do not depend on scheduling. When
/// `config.output` is set, `ledger.csv`, `summary.json` and snapshots of the
/// error at `T/2` are written there.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let grid = cfg.grid.base()?;
    let (_, s0) = phase_stage(cfg, grid).map_err(|e| e.at("phases"))?;
    let tol = &cfg.tolerances;
    let t_mid = 0.5 * cfg.t_final;
    let bd: BackgroundInitialData = cfg.background.build(grid, &s0.ks).map_err(|e| e.at("background data"))?;
    let background = check_background_constraints(&bd, tol.constraint, cfg.t_final);
    let bg = evolve_background(&bd, cfg.t_final, &[t_mid, cfg.t_final]).map_err(|e| e.at("background evolution"))?;
    let backreaction = background_diagnostics(&bg);
    let fo = first_order_at(&bg, t_mid).map_err(|e| e.at("parametrix"))?;
    let residual = symbolic_residual(&fo);
    let cascade = cascade_ledger(&residual);
    let terms = interaction_terms_at(&bg, &s0.table, t_mid).map_err(|e| e.at("interaction terms"))?;
    let frame = bg.frame();
    let k_class = k_class_defects(&terms, &frame);
    let e_ell = if s0.table.of_class(PairClass::Separated).next().is_some() {
        Some(build_e_ell(&terms, &s0.table, &frame).map_err(|e| e.at("elliptic correction"))?)
    } else {
        None
    };
    let sym = Symbolic { t: t_mid, frame, residual, terms, e_ell };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(LambdaReport, Option<CoupledTrajectory>)>> =
        pool.install(|| cfg.lambdas.par_iter().map(|&l| lambda_stage(cfg, &s0, &sym, l)).collect());
    let mut lambdas = Vec::with_capacity(results.len());
    let mut trajectories = Vec::new();
    for r in results {
        let (rep, traj) = r?;
        if let Some(t) = traj {
            trajectories.push((rep.lambda, t));
        }
        lambdas.push(rep);
    }

    let mut gates = vec![
        Gate::new("coherence", true, format!("{} pairs, η₀ = {:.3e}", s0.table.pairs.len(), s0.table.eta0)),
        Gate::below("eikonal", s0.eikonal, tol.eikonal),
        Gate::new("background_constraints", background.pass, format!("{background:?}")),
    ];
    let cascade_max = cascade.iter().map(SlotNorm::relative).fold(0.0, f64::max);
    gates.push(Gate::below("cascade", cascade_max, tol.cascade));
    gates.push(Gate::below("k_class", k_class.relative(), tol.k_class));
    let br = backreaction.iter().map(|d| d.defect_flux_error).fold(0.0, f64::max);
    gates.push(Gate::below("backreaction", br, tol.backreaction));
    let mut lambda0 = None;
    for l in &lambdas {
        let g = lambda_gates(cfg, l);
        if lambda0.is_none() && g.iter().all(|x| x.pass) {
            lambda0 = Some(l.lambda);
        }
        gates.extend(g);
    }
    gates.extend(bootstrap_gate(cfg, &lambdas));
    let sweep = (cfg.lambdas.len() >= 3).then(|| sweep_fits(cfg, &lambdas));
    if let Some(s) = &sweep {
        for f in &s.fits {
            let detail = match f.fit {
                Some(x) => format!("slope {:.4} (target {} ± {}), R² {:.4}", x.slope, f.target, f.window, x.r2),
                None => "no fit".into(),
            };
            gates.push(Gate::new(&format!("slope_{}", f.metric), f.pass, detail));
        }
    }
    let first_failure = gates.iter().find(|g| !g.pass).map(|g| g.name.clone());
    let mut report = RunReport {
        config: cfg.clone(),
        table: s0.table,
        caustic_times: s0.caustic_times,
        eikonal: s0.eikonal,
        background,
        backreaction,
        cascade,
        k_class,
        lambdas,
        sweep,
        pass: first_failure.is_none(),
        gates,
        first_failure,
        lambda0,
        ledger: Vec::new(),
    };
    report.ledger = ledger_rows(&report, t_mid);
    if let Some(dir) = &cfg.output {
        write_outputs(dir, &report)?;
        for (lambda, traj) in &trajectories {
            write_error_snapshots(dir, *lambda, traj, cfg.error.intervals / 2 - 1)?;
        }
    }
    Ok(report)
}

/// Like [`run`], but requires a λ list fit for slope fitting.
pub fn sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.lambdas.len() < 3 {
        return Err(Error::Config(format!("a sweep needs at least 3 λ values, got {}", cfg.lambdas.len())));
    }
    run(cfg)
}

/// Constraint residuals of background and error initial data per λ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// Background constraints.
    pub background: ConstraintReport,
    /// Error-data constraint solves, one per λ.
    pub error: Vec<ConstraintSolveReport>,
    /// Reassembly error of `split_parameters`, one per λ.
    pub reassembly: Vec<f64>,
    /// All residuals within tolerance.
    pub pass: bool,
}

/// Solve and check every constraint without evolving anything.
pub fn check_constraints(cfg: &ExperimentConfig) -> Result<ConstraintCheck> {
    cfg.validate()?;
    let grid = cfg.grid.base()?;
    let (_, s0) = phase_stage(cfg, grid).map_err(|e| e.at("phases"))?;
    let tol = &cfg.tolerances;
    let bd = cfg.background.build(grid, &s0.ks).map_err(|e| e.at("background data"))?;
    let background = check_background_constraints(&bd, tol.constraint, cfg.t_final);
    let mut error = Vec::new();
    let mut reassembly = Vec::new();
    for &lambda in &cfg.lambdas {
        let stage = |e: Error| e.at(format!("constraints at λ = {lambda}"));
        let grid = cfg.grid.for_lambda(lambda, cfg.kmax()).map_err(stage)?;
        let bd = cfg.background.build(grid, &s0.ks).map_err(stage)?;
        let mut free = cfg.free_data.build(grid, lambda).map_err(stage)?;
        if cfg.error.neutralize {
            free = neutralize_charge(&free, &bd).map_err(stage)?.0;
        }
        let table = plane_table(grid, &s0.ks, cfg.t_final, tol.coherence).map_err(stage)?;
        let (data, rep) = assemble_error_initial(&free, &bd, &table, tol.solver).map_err(stage)?;
        let sys = CoupledSystem::new(grid, &s0.ks, &table, lambda, cfg.kappa).map_err(stage)?;
        let init = split_parameters(&data, &bd, &sys).map_err(stage)?;
        reassembly.push(reassembly_error(&data, &init, &bd, &sys).map_err(stage)?);
        error.push(rep);
    }
    let pass = background.pass
        && error.iter().all(|r| r.maxwell <= tol.constraint && r.lorenz <= tol.constraint)
        && reassembly.iter().all(|&r| r <= tol.reassembly);
    Ok(ConstraintCheck { background, error, reassembly, pass })
}

/// Write `ledger.csv` (λ, t, metric, value) through a single appender and
/// `summary.json`.
pub fn write_outputs(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ledger.csv")).map_err(|e| Error::Serde(e.to_string()))?;
    for row in &report.ledger {
        w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(dir.join("summary.json"), json)?;
    Ok(())
}
