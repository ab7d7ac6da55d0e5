//! End-to-end synthetic experiment: true model, noisy data, baseline full
//! inversion and inversions in the requested modes.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use faer::Mat;
use msfv_core::forward::forward_full;
use msfv_core::inversion::{add_noise, compute_relative_error, projected_gauss_newton};
use msfv_core::{
    BoundaryConditionSet, CoarsePartition, FineSolver, ForwardModel, GnConfig, InversionTrace, Objective,
    SensitivityMode, Survey, TensorMesh, WorkerPool,
};

use crate::config::ExperimentConfig;
use crate::export::{export_model_vtk, export_trace_csv};
use crate::layout::surface_survey;
use crate::model::{generate_block_model, generate_salt_model, Anomaly};

/// Everything built from a config before any inversion runs.
pub struct Setup {
    pub mesh: TensorMesh,
    pub partition: Arc<CoarsePartition>,
    pub survey: Arc<Survey>,
    pub truth: Vec<f64>,
    pub m_ref: Vec<f64>,
    pub clean: Mat<f64>,
    pub observed: Mat<f64>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mesh = TensorMesh::new(cfg.cells, cfg.widths)?;
        let partition = Arc::new(CoarsePartition::new(&mesh, cfg.block)?);
        let survey = Arc::new(surface_survey(&mesh, cfg.sources, cfg.receivers)?);
        let truth = true_model(cfg, &mesh)?;
        let clean = forward_full(&mesh, &truth, &survey, FineSolver::Direct)?.data;
        let observed = add_noise(clean.as_ref(), cfg.noise, cfg.seed)?;
        let m_ref = vec![cfg.background.ln(); mesh.num_cells()];
        Ok(Self { mesh, partition, survey, truth, m_ref, clean, observed })
    }

    pub fn boundary_conditions(&self, cfg: &ExperimentConfig) -> Result<Arc<BoundaryConditionSet>> {
        let spec = cfg.basis_spec()?;
        let bcs = BoundaryConditionSet::generate(&spec, &self.partition, &self.m_ref, self.survey.sources.as_ref())?;
        Ok(Arc::new(bcs))
    }

    /// Forward model for `mode`. The multiscale modes share `bcs`.
    pub fn simulation(
        &self,
        mode: SensitivityMode,
        bcs: &Arc<BoundaryConditionSet>,
        solver: FineSolver,
        workers: &WorkerPool,
    ) -> Result<ForwardModel> {
        Ok(match mode {
            SensitivityMode::Full => ForwardModel::full(&self.mesh, Arc::clone(&self.survey), solver),
            SensitivityMode::Fixed => ForwardModel::fixed(
                Arc::clone(&self.partition),
                Arc::clone(bcs),
                Arc::clone(&self.survey),
                &self.m_ref,
                workers.clone(),
            )?,
            SensitivityMode::Adaptive => ForwardModel::adaptive(
                Arc::clone(&self.partition),
                Arc::clone(bcs),
                Arc::clone(&self.survey),
                workers.clone(),
            ),
        })
    }
}

pub fn true_model(cfg: &ExperimentConfig, mesh: &TensorMesh) -> Result<Vec<f64>> {
    match cfg.model.as_str() {
        "salt" => generate_salt_model(mesh, cfg.background),
        _ => {
            let anomalies = cfg.anomalies.iter().map(Anomaly::from_row).collect::<Result<Vec<_>>>()?;
            generate_block_model(mesh, &anomalies, cfg.background)
        }
    }
}

pub fn gn_config(cfg: &ExperimentConfig, n: usize) -> GnConfig {
    let mut gn = GnConfig::new(n, cfg.lower, cfg.upper);
    gn.max_iter = cfg.gn_iters;
    gn.max_cg = cfg.cg_iters;
    gn
}

#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: SensitivityMode,
    /// Basis size, `None` for the fine model.
    pub k: Option<usize>,
    pub model: Vec<f64>,
    pub trace: InversionTrace,
    /// Relative distance to the baseline reconstruction.
    pub relative_error: f64,
    /// Relative distance to the true model.
    pub truth_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub baseline: ModeResult,
    pub modes: Vec<ModeResult>,
}

impl ExperimentSummary {
    pub fn mode(&self, mode: SensitivityMode) -> Option<&ModeResult> {
        self.modes.iter().find(|r| r.mode == mode)
    }
}

fn invert(
    setup: &Setup,
    sim: &ForwardModel,
    objective: &Objective,
    gn: &GnConfig,
) -> Result<(Vec<f64>, InversionTrace, f64)> {
    let start = Instant::now();
    let (m, trace) = projected_gauss_newton(sim, objective, setup.observed.as_ref(), &setup.m_ref, gn)?;
    Ok((m, trace, start.elapsed().as_secs_f64()))
}

/// FNV-1a, stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Runs the experiment without touching the disk. The baseline is always
/// the fine model with a direct solver.
pub fn run_inversions(cfg: &ExperimentConfig) -> Result<(Setup, ExperimentSummary)> {
    let setup = Setup::new(cfg)?;
    let workers = WorkerPool::new(cfg.workers)?;
    let modes = cfg.sensitivity_modes()?;
    let n = setup.mesh.num_cells();
    let objective = Objective::new(&setup.mesh, cfg.alpha, setup.m_ref.clone())?;
    let gn = gn_config(cfg, n);

    let full = ForwardModel::full(&setup.mesh, Arc::clone(&setup.survey), FineSolver::Direct);
    let (m_base, trace, seconds) = invert(&setup, &full, &objective, &gn).context("baseline inversion")?;
    let baseline = ModeResult {
        mode: SensitivityMode::Full,
        k: None,
        truth_error: compute_relative_error(&m_base, &setup.truth)?,
        relative_error: 0.0,
        model: m_base,
        trace,
        seconds,
    };

    let bcs = if modes.iter().any(|&m| m != SensitivityMode::Full) { Some(setup.boundary_conditions(cfg)?) } else { None };
    let mut results = Vec::with_capacity(modes.len());
    for &mode in &modes {
        if mode == SensitivityMode::Full {
            results.push(baseline.clone());
            continue;
        }
        let bcs = bcs.as_ref().expect("boundary conditions built for multiscale modes");
        let start = Instant::now();
        let sim = setup.simulation(mode, bcs, FineSolver::Direct, &workers)?;
        let setup_secs = start.elapsed().as_secs_f64();
        let (m, trace, seconds) = invert(&setup, &sim, &objective, &gn).with_context(|| format!("{} inversion", mode.name()))?;
        results.push(ModeResult {
            mode,
            k: sim.basis_size(),
            relative_error: compute_relative_error(&m, &baseline.model)?,
            truth_error: compute_relative_error(&m, &setup.truth)?,
            model: m,
            trace,
            seconds: seconds + setup_secs,
        });
    }
    Ok((setup, ExperimentSummary { baseline, modes: results }))
}

/// Deterministic metrics text: config echo, provenance and per-mode numbers.
pub fn metrics_text(cfg: &ExperimentConfig, setup: &Setup, summary: &ExperimentSummary) -> String {
    let echo = cfg.to_toml();
    let mut s = String::new();
    let _ = writeln!(s, "# provenance: {} {} config-fnv1a {:016x}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), fnv1a(echo.as_bytes()));
    for line in echo.lines() {
        let _ = writeln!(s, "# config: {line}");
    }
    let _ = writeln!(s, "cells {}", setup.mesh.num_cells());
    let _ = writeln!(s, "sources {}", setup.survey.num_sources());
    let _ = writeln!(s, "receivers {}", setup.survey.num_receivers());
    let _ = writeln!(s, "clean_data_norm {:e}", setup.clean.norm_l2());
    let rows = std::iter::once(("baseline", &summary.baseline)).chain(summary.modes.iter().map(|r| (r.mode.name(), r)));
    for (name, r) in rows {
        let last = r.trace.rows.last();
        let _ = writeln!(s, "[{name}]");
        let _ = writeln!(s, "k {}", r.k.map_or("fine".to_string(), |k| k.to_string()));
        let _ = writeln!(s, "relative_error {:e}", r.relative_error);
        let _ = writeln!(s, "truth_error {:e}", r.truth_error);
        let _ = writeln!(s, "iterations {}", r.trace.rows.len().saturating_sub(1));
        let _ = writeln!(s, "final_phi {:e}", last.map_or(f64::NAN, |t| t.phi));
        let _ = writeln!(s, "final_total {:e}", last.map_or(f64::NAN, |t| t.total));
        let _ = writeln!(s, "objective_non_increasing {}", r.trace.objective_non_increasing());
        let _ = writeln!(s, "line_search_failed {}", r.trace.line_search_failed);
        let _ = writeln!(s, "converged {}", r.trace.converged);
    }
    s
}

/// Runs the experiment and writes `metrics.txt`, `timing.txt`, one trace CSV
/// and one VTK model per mode, plus the true model, into `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let (setup, summary) = run_inversions(cfg)?;
    write_outputs(cfg, &setup, &summary, &cfg.out)?;
    Ok(summary)
}

pub fn write_outputs(cfg: &ExperimentConfig, setup: &Setup, summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join("metrics.txt"), metrics_text(cfg, setup, summary))?;
    let mut timing = String::from("mode seconds\n");
    let _ = writeln!(timing, "baseline {:.3}", summary.baseline.seconds);
    export_model_vtk(&setup.truth, &setup.mesh, &dir.join("model_true.vtk"))?;
    export_model_vtk(&summary.baseline.model, &setup.mesh, &dir.join("model_baseline.vtk"))?;
    export_trace_csv(&summary.baseline.trace, &dir.join("trace_baseline.csv"))?;
    for r in &summary.modes {
        let name = r.mode.name();
        let _ = writeln!(timing, "{name} {:.3}", r.seconds);
        export_model_vtk(&r.model, &setup.mesh, &dir.join(format!("model_{name}.vtk")))?;
        export_trace_csv(&r.trace, &dir.join(format!("trace_{name}.csv")))?;
    }
    std::fs::write(dir.join("timing.txt"), timing)?;
    Ok(())
}

/// Simulated data at the true model in one mode, written as whitespace
/// separated rows (one per receiver).
pub fn run_forward(cfg: &ExperimentConfig, mode: SensitivityMode) -> Result<Mat<f64>> {
    let setup = Setup::new(cfg)?;
    let workers = WorkerPool::new(cfg.workers)?;
    let data = match mode {
        SensitivityMode::Full => forward_full(&setup.mesh, &setup.truth, &setup.survey, cfg.fine_solver()?)?.data,
        _ => {
            use msfv_core::Simulation;
            let bcs = setup.boundary_conditions(cfg)?;
            let sim = setup.simulation(mode, &bcs, cfg.fine_solver()?, &workers)?;
            sim.predicted(&sim.simulate(&setup.truth)?).clone()
        }
    };
    std::fs::create_dir_all(&cfg.out)?;
    let mut text = String::new();
    for i in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols()).map(|j| format!("{:e}", data[(i, j)])).collect();
        let _ = writeln!(text, "{}", row.join(" "));
    }
    std::fs::write(cfg.out.join(format!("data_{}.txt", mode.name())), text)?;
    export_model_vtk(&setup.truth, &setup.mesh, &cfg.out.join("model_true.vtk"))?;
    Ok(data)
}
