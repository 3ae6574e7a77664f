//! Ready-made studies: the manufactured-solution convergence run, the
//! channel-vs-oracle comparison, the CPU-scaling measurement, and desk-scale
//! demo setups for the showcase geometries.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::algebra::{Mat2, Vec2};
use crate::bc::{ResolvedBcs, SideBc};
use crate::config::ConfigError;
use crate::material::{
    assemble_material, build_anisotropy, AnisotropySpec, MaterialError, MaterialField,
    MaterialSpec, ProfileKind, TlGeometry, TransitionLayerSpec,
};
use crate::mesh::TriMesh;
use crate::meshgen::{
    generate_rect_mesh, generate_verification_mesh, rect_side_tag, GenError, Rect, RefineBand,
    Sizing, VerificationKind,
};
use crate::output::{
    sample_profile, write_profile_csv, write_summary, write_vtk, DiagnosticsLog, OutputError,
    RunSummary,
};
use crate::rt0::FlowState;
use crate::timeloop::{cfl_max, detect_steady, SimulationConfig, Solver, SolverError, StepDiagnostics};
use crate::verification::{
    convergence_rate, cpu_scaling_fit, l2_error, solve_channel_oracle, ManufacturedSolution,
    VerificationError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Other(String),
}

/// Options shared by the study drivers.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// VTK cadence in steps (0: final snapshot only, when out_dir is set).
    pub output_every: usize,
    pub max_steps: Option<usize>,
    pub quiet: bool,
}

/// Outcome of driving one simulation to its end (t_end, steady state or the
/// step cap, whichever comes first).
pub struct RunOutcome {
    pub state: FlowState,
    pub summary: RunSummary,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Run a configured solver to completion, writing logs when requested.
pub fn run_to_end(
    mesh: &TriMesh,
    material: &MaterialField,
    config: &SimulationConfig,
    opts: &RunOptions,
) -> Result<RunOutcome, HarnessError> {
    let mut solver = Solver::new(mesh, material, config)?;
    let mut state = solver.initialize()?;
    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(OutputError::Io)?;
            Some(DiagnosticsLog::create(&dir.join("diagnostics.csv"))?)
        }
        None => None,
    };

    let n_steps_cap = opts
        .max_steps
        .unwrap_or(usize::MAX)
        .min((config.t_end / config.dt).ceil() as usize);
    let mut diagnostics = Vec::new();
    let mut steady = false;
    let wall_start = std::time::Instant::now();
    for _ in 0..n_steps_cap {
        let d = solver.step(&mut state)?;
        if let Some(log) = &mut log {
            log.append(&d)?;
        }
        let stop = match config.steady_tol {
            Some(tol) => detect_steady(&d, tol),
            None => false,
        };
        diagnostics.push(d);
        if let (Some(dir), true) = (&opts.out_dir, opts.output_every > 0) {
            if state.step % opts.output_every == 0 {
                snapshot(&solver, &state, dir, state.step)?;
            }
        }
        if stop {
            steady = true;
            break;
        }
    }
    let wall = wall_start.elapsed().as_secs_f64();

    let n = diagnostics.len().max(1) as f64;
    let mean = |f: fn(&StepDiagnostics) -> f64| diagnostics.iter().map(f).sum::<f64>() / n;
    let summary = RunSummary {
        n_cells: mesh.n_cells(),
        n_nodes: mesh.n_nodes(),
        steps: diagnostics.len(),
        final_time: state.time,
        final_cfl: cfl_max(&state, mesh, config.dt),
        final_mass_residual: diagnostics.last().map(|d| d.max_flux_imbalance).unwrap_or(0.0),
        final_max_divergence: diagnostics.last().map(|d| d.max_divergence).unwrap_or(0.0),
        steady_reached: steady,
        seconds_per_step_rank: mean(|d| d.seconds_rank),
        seconds_per_step_predictor: mean(|d| d.seconds_predictor),
        seconds_per_step_cp1: mean(|d| d.seconds_cp1),
        seconds_per_step_flux_avg: mean(|d| d.seconds_flux_avg),
        seconds_per_step_cp2: mean(|d| d.seconds_cp2),
        seconds_per_step_total: wall / n,
    };
    if let Some(dir) = &opts.out_dir {
        snapshot(&solver, &state, dir, state.step)?;
        write_summary(&summary, &dir.join("summary.json"))?;
    }
    Ok(RunOutcome { state, summary, diagnostics })
}

fn snapshot(
    solver: &Solver,
    state: &FlowState,
    dir: &Path,
    step: usize,
) -> Result<(), HarnessError> {
    let nodal_psi = solver.nodal_pressure(state)?;
    let eta = vec![0.0; solver.mesh.n_cells()];
    write_vtk(
        solver.mesh,
        solver.material,
        state,
        &eta,
        &nodal_psi,
        &dir.join(format!("state_{step:06}.vtk")),
    )?;
    Ok(())
}

// ----- Convergence study (manufactured anisotropic field) -----

pub const BLOCK_MIN: f64 = 0.5;
pub const BLOCK_MAX: f64 = 1.5;
pub const TL_WIDTH: f64 = 0.04; // block side / 25

/// Bulk anisotropy of the convergence study.
pub fn study_anisotropy() -> AnisotropySpec {
    AnisotropySpec { k: 1e-6, beta: 100.0, alpha: -std::f64::consts::FRAC_PI_4 }
}

/// Manufactured field: quadratic pressure with the dimensionless principal
/// structure of the study's permeability tensor.
pub fn study_manufactured() -> ManufacturedSolution {
    let spec = study_anisotropy();
    let r = Mat2::rotation(spec.alpha);
    let tensor = r.mul_mat(Mat2::diag(1.0 / spec.beta, 1.0)).mul_mat(r.transpose());
    ManufacturedSolution::new([5e-4, -3.2e-3, -1.95e-3, 1.5e-3, -8e-4, 4e-3], tensor)
        .expect("study field is divergence-free by construction")
}

/// Porous-block material with a tanh transition layer just inside the block
/// contour.
pub fn study_material(theta: f64) -> MaterialSpec {
    let bulk = build_anisotropy(&study_anisotropy()).expect("valid anisotropy");
    let half = TL_WIDTH / 2.0;
    MaterialSpec {
        nu: 1.5e-5,
        regions: vec![TransitionLayerSpec {
            geometry: TlGeometry::RectContour {
                min: Vec2::new(BLOCK_MIN + half, BLOCK_MIN + half),
                max: Vec2::new(BLOCK_MAX - half, BLOCK_MAX - half),
            },
            d_tl: TL_WIDTH,
            d_eps: 0.0,
            d_k: 0.0,
            theta_eps: theta,
            theta_k: theta,
            eps0: 0.4,
            inv_perm0: bulk.inverse,
            kind: ProfileKind::Tanh,
        }],
    }
}

pub fn study_refine_band() -> RefineBand {
    let half = TL_WIDTH / 2.0;
    RefineBand::RectContour {
        min: Vec2::new(BLOCK_MIN + half, BLOCK_MIN + half),
        max: Vec2::new(BLOCK_MAX - half, BLOCK_MAX - half),
        half_width: TL_WIDTH,
    }
}

/// Inflow sides take the exact velocity, the rest the exact pressure.
pub fn study_bcs(mesh: &TriMesh, sol: &ManufacturedSolution) -> ResolvedBcs {
    let sides: Vec<Option<SideBc>> = mesh
        .sides
        .iter()
        .map(|side| {
            side.boundary.map(|_| {
                let u = sol.velocity(side.midpoint);
                if u.dot(side.normal) < 0.0 {
                    SideBc::Essential { velocity: u }
                } else {
                    SideBc::Natural { psi: sol.psi(side.midpoint) }
                }
            })
        })
        .collect();
    ResolvedBcs { sides }
}

/// Momentum source making the manufactured field a steady solution.
pub fn study_body_force(
    mesh: &TriMesh,
    sol: &ManufacturedSolution,
    material: &MaterialSpec,
) -> Vec<Vec2> {
    mesh.centroids.iter().map(|&c| sol.body_force(material, c)).collect()
}

/// Per-level study outcome.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConvergenceLevel {
    pub level: usize,
    pub delta0: f64,
    pub delta_tl: f64,
    pub dt: f64,
    pub n_cells: usize,
    pub n_nodes: usize,
    /// Effective mesh size sqrt(area / n_cells).
    pub h_eff: f64,
    pub err_u: f64,
    pub err_v: f64,
    pub err_psi: f64,
    pub steps: usize,
    pub steady: bool,
    pub cfl_max: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// (rate_u, rate_v, rate_psi) between consecutive levels.
    pub rates: Vec<(f64, f64, f64)>,
}

/// Per-level overrides for the convergence study.
#[derive(Clone, Debug)]
pub struct ConvergenceOptions {
    /// Time step of level 0; deeper levels keep it (the steady comparison
    /// is insensitive to dt, and the convective limit stays far away).
    pub dt: f64,
    pub steady_tol: f64,
    pub t_end: f64,
    pub theta: f64,
    pub seed: u64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions { dt: 0.225, steady_tol: 2e-5, t_end: 4000.0, theta: 200.0, seed: 42 }
    }
}

/// Run one refinement level of the convergence study.
pub fn run_convergence_level(
    level: usize,
    opts: &ConvergenceOptions,
    run: &RunOptions,
) -> Result<ConvergenceLevel, HarnessError> {
    let delta0 = 0.025 / (1 << level) as f64;
    let delta_tl = if level == 0 { 0.02 } else { delta0 };
    let mesh = generate_verification_mesh(
        VerificationKind::SquareWithBlock,
        delta0,
        delta_tl,
        study_refine_band(),
        opts.seed,
    )?;
    let sol = study_manufactured();
    let spec = study_material(opts.theta);
    let material = assemble_material(&mesh, &spec, opts.dt)?;
    let mut config = SimulationConfig::new(study_bcs(&mesh, &sol), opts.dt, opts.t_end);
    config.body_force = Some(study_body_force(&mesh, &sol, &spec));
    config.steady_tol = Some(opts.steady_tol);
    config.datum_point = Vec2::new(2.0, 2.0);
    config.datum_value = sol.psi(Vec2::new(2.0, 2.0));

    let wall = std::time::Instant::now();
    let outcome = run_to_end(&mesh, &material, &config, run)?;
    let wall_seconds = wall.elapsed().as_secs_f64();

    // Velocity errors at the circumcenters, area-weighted.
    let exact_u: Vec<f64> =
        mesh.circumcenters.iter().map(|&c| sol.velocity(c).x).collect();
    let exact_v: Vec<f64> =
        mesh.circumcenters.iter().map(|&c| sol.velocity(c).y).collect();
    let num_u: Vec<f64> = outcome.state.cell_vel.iter().map(|u| u.x).collect();
    let num_v: Vec<f64> = outcome.state.cell_vel.iter().map(|u| u.y).collect();
    let err_u = l2_error(&num_u, &exact_u, &mesh.areas);
    let err_v = l2_error(&num_v, &exact_v, &mesh.areas);

    // Nodal pressure error with the barycentric node weights.
    let solver = Solver::new(&mesh, &material, &config)?;
    let nodal = solver.nodal_pressure(&outcome.state)?;
    let exact_psi: Vec<f64> = mesh.nodes.iter().map(|&p| sol.psi(p)).collect();
    let err_psi = l2_error(&nodal, &exact_psi, &mesh.node_weights);

    Ok(ConvergenceLevel {
        level,
        delta0,
        delta_tl,
        dt: opts.dt,
        n_cells: mesh.n_cells(),
        n_nodes: mesh.n_nodes(),
        h_eff: (mesh.total_area() / mesh.n_cells() as f64).sqrt(),
        err_u,
        err_v,
        err_psi,
        steps: outcome.summary.steps,
        steady: outcome.summary.steady_reached,
        cfl_max: outcome.diagnostics.iter().map(|d| d.cfl_max).fold(0.0, f64::max),
        wall_seconds,
    })
}

/// Run `levels` refinements and compute the rates.
pub fn verify_convergence(
    levels: usize,
    opts: &ConvergenceOptions,
    out_dir: Option<&Path>,
) -> Result<ConvergenceReport, HarnessError> {
    let mut report = ConvergenceReport { levels: Vec::new(), rates: Vec::new() };
    for level in 0..levels {
        let run = RunOptions {
            out_dir: out_dir.map(|d| d.join(format!("level{level}"))),
            ..Default::default()
        };
        let lvl = run_convergence_level(level, opts, &run)?;
        if !run.quiet {
            eprintln!(
                "level {level}: N_T={} err_u={:.3e} err_v={:.3e} err_psi={:.3e} steps={} steady={}",
                lvl.n_cells, lvl.err_u, lvl.err_v, lvl.err_psi, lvl.steps, lvl.steady
            );
        }
        report.levels.push(lvl);
    }
    for pair in report.levels.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        report.rates.push((
            convergence_rate(a.err_u, b.err_u, a.h_eff, b.h_eff),
            convergence_rate(a.err_v, b.err_v, a.h_eff, b.h_eff),
            convergence_rate(a.err_psi, b.err_psi, a.h_eff, b.h_eff),
        ));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(OutputError::Io)?;
        let mut csv = String::from(
            "level,delta0,delta_tl,n_cells,n_nodes,h_eff,err_u,err_v,err_psi,rate_u,rate_v,rate_psi\n",
        );
        for (i, l) in report.levels.iter().enumerate() {
            let rates = if i == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                report.rates[i - 1]
            };
            csv.push_str(&format!(
                "{},{:.6e},{:.6e},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.4},{:.4},{:.4}\n",
                l.level,
                l.delta0,
                l.delta_tl,
                l.n_cells,
                l.n_nodes,
                l.h_eff,
                l.err_u,
                l.err_v,
                l.err_psi,
                rates.0,
                rates.1,
                rates.2
            ));
        }
        std::fs::write(dir.join("convergence.csv"), csv).map_err(OutputError::Io)?;
    }
    Ok(report)
}

// ----- Channel study (Stokes-Brinkman three-layer flow) -----

pub const CHANNEL_HEIGHT: f64 = 0.5;
pub const CHANNEL_LENGTH: f64 = 0.5;
pub const CHANNEL_PRESSURE_DROP: f64 = 5e-7;
pub const CHANNEL_NU: f64 = 1.5e-5;

/// Channel layer geometry: thin or fat transition band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelCase {
    /// zeta = 1/3, xi = 2/3.
    Fat,
    /// zeta = 1/3, xi = 1.006/3.
    Thin,
}

impl ChannelCase {
    pub fn zeta(self) -> f64 {
        1.0 / 3.0
    }

    pub fn xi(self) -> f64 {
        match self {
            ChannelCase::Fat => 2.0 / 3.0,
            ChannelCase::Thin => 1.006 / 3.0,
        }
    }
}

/// Porous top layer with a linear inverse-permeability ramp.
pub fn channel_material(case: ChannelCase, da: f64) -> MaterialSpec {
    let h = CHANNEL_HEIGHT;
    let k0 = da * h * h;
    let (a, b) = (case.zeta() * h, case.xi() * h);
    MaterialSpec {
        nu: CHANNEL_NU,
        regions: vec![TransitionLayerSpec {
            geometry: TlGeometry::HorizontalLine { level: 0.5 * (a + b), fluid_below: true },
            d_tl: b - a,
            d_eps: 0.0,
            d_k: 0.0,
            theta_eps: 1.0,
            theta_k: 1.0,
            eps0: 1.0,
            inv_perm0: Mat2::diag(1.0 / k0, 1.0 / k0),
            kind: ProfileKind::Linear,
        }],
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ChannelReport {
    pub case_name: String,
    pub da: f64,
    pub n_cells: usize,
    pub steps: usize,
    pub steady: bool,
    pub cfl_max: f64,
    /// Relative L2 mismatch of the mid-channel u(y) profile vs the oracle.
    pub mismatch: f64,
    pub wall_seconds: f64,
}

/// Run the channel to steady state and compare against the 1D oracle.
pub fn verify_channel(
    case: ChannelCase,
    da: f64,
    run: &RunOptions,
) -> Result<ChannelReport, HarnessError> {
    let h = CHANNEL_HEIGHT;
    let (a, b) = (case.zeta() * h, case.xi() * h);
    let (delta0, delta_tl) = match case {
        ChannelCase::Fat => (5e-3, 5e-3),
        // Desk-scale stand-in for the paper-scale thin-layer meshes.
        ChannelCase::Thin => (5e-3, 1.2e-3),
    };
    let band = RefineBand::Strip { y0: a, y1: b };
    let mesh =
        generate_verification_mesh(VerificationKind::Channel3Layer, delta0, delta_tl, band, 42)?;
    let spec = channel_material(case, da);
    let dt = 10.0;
    let material = assemble_material(&mesh, &spec, dt)?;

    let mesh_ref = &mesh;
    let bcs = ResolvedBcs::resolve(mesh_ref, |_, tag| match tag {
        "left" => SideBc::Natural { psi: CHANNEL_PRESSURE_DROP },
        "right" => SideBc::Natural { psi: 0.0 },
        _ => SideBc::Essential { velocity: Vec2::ZERO },
    });
    let mut config = SimulationConfig::new(bcs, dt, 60_000.0);
    config.steady_tol = Some(1e-8);
    config.datum_point = Vec2::new(CHANNEL_LENGTH, 0.0);

    let wall = std::time::Instant::now();
    let outcome = run_to_end(&mesh, &material, &config, run)?;
    let wall_seconds = wall.elapsed().as_secs_f64();

    // Mid-channel profile vs the oracle.
    let g = CHANNEL_PRESSURE_DROP / CHANNEL_LENGTH;
    let k0 = da * h * h;
    let oracle = solve_channel_oracle(h, case.zeta(), case.xi(), k0, g, CHANNEL_NU, 20_000)?;
    let solver = Solver::new(&mesh, &material, &config)?;
    let nodal = solver.nodal_pressure(&outcome.state)?;
    let x_mid = CHANNEL_LENGTH / 2.0;
    let n_samples = 201;
    let rows = sample_profile(
        &mesh,
        &outcome.state,
        &nodal,
        Vec2::new(x_mid, 1e-6),
        Vec2::new(x_mid, h - 1e-6),
        n_samples,
    );
    let mut num = Vec::new();
    let mut exact = Vec::new();
    for r in &rows {
        if let Some(u) = r.u {
            num.push(u);
            exact.push(oracle.sample(r.y));
        }
    }
    let weights = vec![1.0; num.len()];
    let zeros = vec![0.0; num.len()];
    let mismatch = l2_error(&num, &exact, &weights) / l2_error(&exact, &zeros, &weights);

    if let Some(dir) = &run.out_dir {
        write_profile_csv(&rows, &dir.join("midchannel_profile.csv"))?;
        let mut csv = String::from("y,u_oracle\n");
        for i in 0..=200 {
            let y = h * i as f64 / 200.0;
            csv.push_str(&format!("{y:.8e},{:.8e}\n", oracle.sample(y)));
        }
        std::fs::write(dir.join("oracle_profile.csv"), csv).map_err(OutputError::Io)?;
    }

    Ok(ChannelReport {
        case_name: match case {
            ChannelCase::Fat => "ftl".into(),
            ChannelCase::Thin => "ttl".into(),
        },
        da,
        n_cells: mesh.n_cells(),
        steps: outcome.summary.steps,
        steady: outcome.summary.steady_reached,
        cfl_max: outcome.diagnostics.iter().map(|d| d.cfl_max).fold(0.0, f64::max),
        mismatch,
        wall_seconds,
    })
}

// ----- CPU scaling -----

#[derive(Clone, Debug, serde::Serialize)]
pub struct TimingSample {
    pub n_cells: usize,
    pub sec_rank: f64,
    pub sec_predictor: f64,
    pub sec_cp1: f64,
    pub sec_cp2: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TimingReport {
    pub samples: Vec<TimingSample>,
    /// (c, omega, r2) fits per stage.
    pub fit_predictor: (f64, f64, f64),
    pub fit_cp1: (f64, f64, f64),
    pub fit_cp2: (f64, f64, f64),
    pub fit_rank: (f64, f64, f64),
}

/// Time the solver stages on a sequence of refinements of the convergence
/// geometry (steps of the startup transient, mean seconds per iteration).
pub fn timing_study(
    levels: usize,
    steps: usize,
    out_dir: Option<&Path>,
) -> Result<TimingReport, HarnessError> {
    assert!(levels >= 3, "scaling fit needs at least three levels");
    let mut samples = Vec::new();
    for level in 0..levels {
        let delta0 = 0.05 / (1 << level) as f64;
        let delta_tl = delta0.min(0.02);
        let mesh = generate_verification_mesh(
            VerificationKind::SquareWithBlock,
            delta0,
            delta_tl,
            study_refine_band(),
            42,
        )?;
        let sol = study_manufactured();
        let spec = study_material(200.0);
        let dt = 0.225;
        let material = assemble_material(&mesh, &spec, dt)?;
        let mut config = SimulationConfig::new(study_bcs(&mesh, &sol), dt, 1e9);
        config.body_force = Some(study_body_force(&mesh, &sol, &spec));
        config.datum_point = Vec2::new(2.0, 2.0);
        config.datum_value = sol.psi(Vec2::new(2.0, 2.0));
        let opts = RunOptions { max_steps: Some(steps), ..Default::default() };
        let outcome = run_to_end(&mesh, &material, &config, &opts)?;
        samples.push(TimingSample {
            n_cells: mesh.n_cells(),
            sec_rank: outcome.summary.seconds_per_step_rank,
            sec_predictor: outcome.summary.seconds_per_step_predictor,
            sec_cp1: outcome.summary.seconds_per_step_cp1,
            sec_cp2: outcome.summary.seconds_per_step_cp2,
        });
    }
    let pick = |f: fn(&TimingSample) -> f64| -> Vec<(f64, f64)> {
        samples.iter().map(|s| (s.n_cells as f64, f(s).max(1e-9))).collect()
    };
    let report = TimingReport {
        fit_predictor: cpu_scaling_fit(&pick(|s| s.sec_predictor))?,
        fit_cp1: cpu_scaling_fit(&pick(|s| s.sec_cp1))?,
        fit_cp2: cpu_scaling_fit(&pick(|s| s.sec_cp2))?,
        fit_rank: cpu_scaling_fit(&pick(|s| s.sec_rank))?,
        samples,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(OutputError::Io)?;
        let mut csv = String::from("n_cells,sec_rank,sec_predictor,sec_cp1,sec_cp2\n");
        for s in &report.samples {
            csv.push_str(&format!(
                "{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                s.n_cells, s.sec_rank, s.sec_predictor, s.sec_cp1, s.sec_cp2
            ));
        }
        std::fs::write(dir.join("timing.csv"), csv).map_err(OutputError::Io)?;
        std::fs::write(
            dir.join("scaling_fit.csv"),
            format!(
                "stage,c,omega,r2\npredictor,{:.4},{:.4},{:.4}\ncp1,{:.4},{:.4},{:.4}\ncp2,{:.4},{:.4},{:.4}\nrank,{:.4},{:.4},{:.4}\n",
                report.fit_predictor.0,
                report.fit_predictor.1,
                report.fit_predictor.2,
                report.fit_cp1.0,
                report.fit_cp1.1,
                report.fit_cp1.2,
                report.fit_cp2.0,
                report.fit_cp2.1,
                report.fit_cp2.2,
                report.fit_rank.0,
                report.fit_rank.1,
                report.fit_rank.2
            ),
        )
        .map_err(OutputError::Io)?;
    }
    Ok(report)
}

// ----- Showcase demos (desk-scale geometries with transition layers) -----

/// A fully assembled demo setup ready to run.
pub struct DemoSetup {
    pub name: &'static str,
    pub mesh: TriMesh,
    pub spec: MaterialSpec,
    pub material: MaterialField,
    pub config: SimulationConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoKind {
    /// Inflow over a porous bed: filtration / exfiltration.
    Filtration,
    /// Lid-driven cavity over an orthotropic fibrous layer.
    LidCavity,
    /// Pressure-driven flow past an anisotropic porous obstacle.
    PorousObstacle,
}

/// Build a desk-scale demo (coarsened relative to the production studies so
/// it runs in seconds).
pub fn demo_setup(kind: DemoKind, dt: f64) -> Result<DemoSetup, HarnessError> {
    match kind {
        DemoKind::Filtration => {
            // Domain 10.25 mm x 6 mm, porous bed below y = 5 mm.
            let rect = Rect::new(0.0, 0.0, 10.25e-3, 6e-3);
            let gamma = 5e-3;
            let d_si = 2.5e-4; // solid inclusion size
            let band = RefineBand::Strip { y0: gamma - 1.5 * d_si, y1: gamma + 0.5 * d_si };
            let sizing =
                Sizing { coarse: 4.5e-4, fine: 2.2e-4, bands: vec![band], grading: 0.3 };
            let mesh = generate_rect_mesh(rect, &sizing, rect_side_tag, 42)?;
            let spec = MaterialSpec {
                nu: 1e-6,
                regions: vec![TransitionLayerSpec {
                    geometry: TlGeometry::HorizontalLine {
                        level: gamma - d_si / 2.0,
                        fluid_below: false,
                    },
                    d_tl: 2.0 * d_si,
                    d_eps: 0.0,
                    d_k: 3e-5,
                    theta_eps: 4.7e4,
                    theta_k: 4.7e4,
                    eps0: 0.75,
                    inv_perm0: Mat2::diag(1.0 / 3.45e-9, 1.0 / 3.45e-9),
                    kind: ProfileKind::Tanh,
                }],
            };
            let material = assemble_material(&mesh, &spec, dt)?;
            let mesh_ref = &mesh;
            let bcs = ResolvedBcs::resolve(mesh_ref, |s, tag| {
                let mid = mesh_ref.sides[s].midpoint;
                match tag {
                    // Sine-bell inflow on part of the lid.
                    "top" if (1.5e-3..=4.5e-3).contains(&mid.x) => SideBc::Essential {
                        velocity: Vec2::new(
                            0.0,
                            -1e-3 * (1000.0 / 3.0 * std::f64::consts::PI * mid.x).sin(),
                        ),
                    },
                    // Open outlet high on the right wall.
                    "right" if mid.y >= 5.5e-3 => SideBc::Natural { psi: 0.0 },
                    _ => SideBc::Essential { velocity: Vec2::ZERO },
                }
            });
            let mut config = SimulationConfig::new(bcs, dt, 1e9);
            config.datum_point = Vec2::new(10.25e-3, 6e-3);
            Ok(DemoSetup { name: "filtration", mesh, spec, material, config })
        }
        DemoKind::LidCavity => {
            let rect = Rect::new(0.0, 0.0, 1.0, 1.0);
            let gamma = 1.0 / 3.0;
            let d_tl = 0.02;
            let band = RefineBand::Strip { y0: gamma - d_tl, y1: gamma + d_tl };
            let sizing = Sizing { coarse: 0.05, fine: 0.015, bands: vec![band], grading: 0.3 };
            let mesh = generate_rect_mesh(rect, &sizing, rect_side_tag, 42)?;
            let spec = MaterialSpec {
                nu: 1e-2, // Re = 100 with a unit lid speed
                regions: vec![TransitionLayerSpec {
                    // Middle transition position around the bed top.
                    geometry: TlGeometry::HorizontalLine { level: gamma, fluid_below: false },
                    d_tl,
                    d_eps: 0.0,
                    d_k: 0.0,
                    theta_eps: 1.0,
                    theta_k: 1.0,
                    eps0: 0.8,
                    inv_perm0: Mat2::diag(1.0 / 1.05e-5, 1.0 / 2.196e-2),
                    kind: ProfileKind::Linear,
                }],
            };
            let material = assemble_material(&mesh, &spec, dt)?;
            let bcs = ResolvedBcs::resolve(&mesh, |_, tag| match tag {
                "top" => SideBc::Essential { velocity: Vec2::new(1.0, 0.0) },
                _ => SideBc::Essential { velocity: Vec2::ZERO },
            });
            let mut config = SimulationConfig::new(bcs, dt, 1e9);
            config.datum_point = Vec2::new(0.5, 0.5);
            Ok(DemoSetup { name: "lid_cavity", mesh, spec, material, config })
        }
        DemoKind::PorousObstacle => {
            let rect = Rect::new(0.0, 0.0, 0.75, 0.25);
            let block = (Vec2::new(0.25, -0.1), Vec2::new(0.5, 0.2));
            let d_tl = 2e-3;
            let half = d_tl / 2.0;
            let band = RefineBand::RectContour {
                min: block.0 + Vec2::new(half, half),
                max: block.1 - Vec2::new(half, half),
                half_width: d_tl,
            };
            let sizing = Sizing { coarse: 0.012, fine: 2e-3, bands: vec![band], grading: 0.3 };
            let mesh = generate_rect_mesh(rect, &sizing, rect_side_tag, 42)?;
            let bulk = build_anisotropy(&AnisotropySpec {
                k: 1e-6,
                beta: 100.0,
                alpha: std::f64::consts::FRAC_PI_4,
            })?;
            let spec = MaterialSpec {
                nu: 1.5e-5,
                regions: vec![TransitionLayerSpec {
                    geometry: TlGeometry::RectContour {
                        min: block.0 + Vec2::new(half, half),
                        max: block.1 - Vec2::new(half, half),
                    },
                    d_tl,
                    d_eps: 0.0,
                    d_k: 0.0,
                    theta_eps: 8000.0,
                    theta_k: 8000.0,
                    eps0: 0.4,
                    inv_perm0: bulk.inverse,
                    kind: ProfileKind::Tanh,
                }],
            };
            let material = assemble_material(&mesh, &spec, dt)?;
            let bcs = ResolvedBcs::resolve(&mesh, |_, tag| match tag {
                "left" => SideBc::Natural { psi: 1e-6 },
                "right" => SideBc::Natural { psi: 0.0 },
                _ => SideBc::Essential { velocity: Vec2::ZERO },
            });
            let mut config = SimulationConfig::new(bcs, dt, 1e9);
            config.datum_point = Vec2::new(0.75, 0.25);
            Ok(DemoSetup { name: "porous_obstacle", mesh, spec, material, config })
        }
    }
}
