//! Time-step orchestration: ranking, predictor sweeps, viscous correction,
//! flux averaging, continuity correction and the force updates, in a fixed
//! order with phase assertions, plus initialization and steady-state
//! detection.

use thiserror::Error;

use crate::algebra::Vec2;
use crate::bc::ResolvedBcs;
use crate::corrector::{
    assemble_cp1, assemble_cp2, average_interface_fluxes, conormal_geometry, solve_cp1,
    solve_cp2, update_pressure_gradient, viscous_force_update, ConormalGeometry, CorrectorError,
    Cp1Matrices, Cp2Matrix,
};
use crate::material::MaterialField;
use crate::mesh::{rank_cells, TriMesh};
use crate::predictor::{mast_backward, mast_forward, OdeError, SweepContext};
use crate::rt0::FlowState;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("initial condition is not discretely divergence-free (max |div| = {max_div:.3e} 1/s)")]
    NonSolenoidalIC { max_div: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Solver tolerances; defaults follow the documented scheme contract.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Adaptive ODE tolerance of the predictor integration.
    pub ode_tol: f64,
    /// Relative PCG residual target.
    pub pcg_tol: f64,
    /// Viscous cross-coupling fixed-point tolerance.
    pub cp1_toll: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { ode_tol: 1e-8, pcg_tol: 1e-10, cp1_toll: 5e-4 }
    }
}

/// Full run configuration (boundary conditions already resolved per side).
pub struct SimulationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub tolerances: Tolerances,
    pub bcs: ResolvedBcs,
    /// Optional constant body force per cell [m/s^2] (verification source).
    pub body_force: Option<Vec<Vec2>>,
    /// Steady-state detector threshold (None disables early termination).
    pub steady_tol: Option<f64>,
    /// Point whose containing cell pins the continuity system when no
    /// natural side exists, and whose nearest node anchors the nodal
    /// pressure reconstruction.
    pub datum_point: Vec2,
    pub datum_value: f64,
    /// Initial velocity (must be discretely divergence-free).
    pub initial_velocity: InitialVelocity,
    /// Initial kinematic pressure and its gradient.
    pub initial_pressure: Option<InitialPressure>,
}

/// Initial velocity choices that are discretely divergence-free.
#[derive(Clone, Debug)]
pub enum InitialVelocity {
    Zero,
    Uniform(Vec2),
    /// Arbitrary per-side fluxes (validated at initialization).
    SideFluxes(Vec<f64>),
}

/// Initial pressure field with an analytic gradient.
pub struct InitialPressure {
    pub psi: Box<dyn Fn(Vec2) -> f64>,
    pub grad: Box<dyn Fn(Vec2) -> Vec2>,
}

impl SimulationConfig {
    pub fn new(bcs: ResolvedBcs, dt: f64, t_end: f64) -> Self {
        SimulationConfig {
            dt,
            t_end,
            tolerances: Tolerances::default(),
            bcs,
            body_force: None,
            steady_tol: None,
            datum_point: Vec2::ZERO,
            datum_value: 0.0,
            initial_velocity: InitialVelocity::Zero,
            initial_pressure: None,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0) {
            return Err(SolverError::Config("dt must be positive".into()));
        }
        if !(self.t_end >= 0.0) {
            return Err(SolverError::Config("t_end must be non-negative".into()));
        }
        Ok(())
    }
}

/// Immutable per-run assembly: corrector matrices are factorized once and
/// reused every step.
pub struct Solver<'a> {
    pub mesh: &'a TriMesh,
    pub material: &'a MaterialField,
    pub config: &'a SimulationConfig,
    cp1: Cp1Matrices,
    cp2: Cp2Matrix,
    geometry: ConormalGeometry,
    datum_cell: usize,
    /// Warm-start storage for the two continuity solves.
    eta_tilde_prev: Vec<f64>,
    eta_prev: Vec<f64>,
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub cfl_max: f64,
    pub cp1_iterations: usize,
    pub cp1_pcg_iterations: usize,
    pub cp2_pcg_iterations: usize,
    pub max_divergence: f64,
    pub max_flux_imbalance: f64,
    /// Largest averaged-flux magnitude (imbalance scale reference).
    pub max_flux_scale: f64,
    pub predictor_ode_steps: usize,
    /// Max relative velocity change per unit time (steady detector input).
    pub velocity_change_rate: f64,
    /// Wall-clock seconds per stage.
    pub seconds_rank: f64,
    pub seconds_predictor: f64,
    pub seconds_cp1: f64,
    pub seconds_flux_avg: f64,
    pub seconds_cp2: f64,
}

/// Pipeline phases; the step asserts their exact order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Start,
    Ranked,
    Forward,
    Backward,
    Viscous,
    Averaged,
    Projected,
    ForcesUpdated,
}

impl<'a> Solver<'a> {
    pub fn new(
        mesh: &'a TriMesh,
        material: &'a MaterialField,
        config: &'a SimulationConfig,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        if let Some(f) = &config.body_force {
            if f.len() != mesh.n_cells() {
                return Err(SolverError::Config("body force length mismatch".into()));
            }
        }
        let datum_cell = mesh.locate(config.datum_point).unwrap_or(0);
        let cp1 = assemble_cp1(mesh, material, &config.bcs)?;
        let geometry = conormal_geometry(mesh, material)?;
        let cp2 = assemble_cp2(mesh, &geometry, &config.bcs, datum_cell)?;
        Ok(Solver {
            mesh,
            material,
            config,
            cp1,
            cp2,
            geometry,
            datum_cell,
            eta_tilde_prev: vec![0.0; mesh.n_cells()],
            eta_prev: vec![0.0; mesh.n_cells()],
        })
    }

    pub fn datum_cell(&self) -> usize {
        self.datum_cell
    }

    pub fn cp1_non_spd_rows(&self) -> usize {
        self.cp1.non_spd_rows
    }

    pub fn cp2_non_spd_rows(&self) -> usize {
        self.cp2.non_spd_rows
    }

    /// Build the state at t = 0 and validate the divergence-free condition.
    pub fn initialize(&self) -> Result<FlowState, SolverError> {
        let mesh = self.mesh;
        let mut state = FlowState::zeros(mesh);
        match &self.config.initial_velocity {
            InitialVelocity::Zero => {}
            InitialVelocity::Uniform(u) => {
                for (s, side) in mesh.sides.iter().enumerate() {
                    state.side_flux[s] = u.dot(side.normal) * side.length;
                }
            }
            InitialVelocity::SideFluxes(q) => {
                if q.len() != mesh.sides.len() {
                    return Err(SolverError::Config("side flux length mismatch".into()));
                }
                state.side_flux.copy_from_slice(q);
            }
        }
        let max_div = state.max_divergence(mesh);
        if max_div > 1e-10 {
            return Err(SolverError::NonSolenoidalIC { max_div });
        }
        state.refresh_cell_velocities(mesh);
        if let Some(ic) = &self.config.initial_pressure {
            for e in 0..mesh.n_cells() {
                let x = mesh.circumcenters[e];
                state.cell_psi[e] = (ic.psi)(x);
                state.eps_grad_psi[e] =
                    (ic.grad)(mesh.centroids[e]).scale(self.material.cell_porosity[e]);
            }
        }
        Ok(state)
    }

    /// Advance one time step in place; returns the step diagnostics.
    pub fn step(&mut self, state: &mut FlowState) -> Result<StepDiagnostics, SolverError> {
        let mesh = self.mesh;
        let material = self.material;
        let tol = self.config.tolerances;
        let bcs = &self.config.bcs;
        let mut diag = StepDiagnostics {
            step: state.step,
            time: state.time,
            cfl_max: cfl_max(state, mesh, self.config.dt),
            ..Default::default()
        };
        let mut phase = Phase::Start;
        let mut advance = |from: Phase, to: Phase| {
            assert_eq!(phase, from, "step pipeline ran out of order");
            phase = to;
        };
        let now = std::time::Instant::now;
        let u_start = state.cell_vel.clone();

        // 1. Rank cells along the start-of-step fluxes.
        let t0 = now();
        let ranking =
            rank_cells(mesh, &state.side_flux, |s| bcs.flux_kind(mesh, s));
        diag.seconds_rank = t0.elapsed().as_secs_f64();
        advance(Phase::Start, Phase::Ranked);

        // 2./3. Predictor sweeps.
        let t0 = now();
        let boundary = |s: usize| bcs.predictor_bc(s);
        let ctx = SweepContext {
            mesh,
            material,
            ranking: &ranking,
            boundary: &boundary,
            dt: self.config.dt,
            ode_tol: tol.ode_tol,
        };
        let forward = mast_forward(
            &ctx,
            &state.cell_vel,
            &state.eps_grad_psi,
            &state.visc_force,
            self.config.body_force.as_deref(),
        )?;
        advance(Phase::Ranked, Phase::Forward);
        let backward = mast_backward(&ctx, &state.cell_vel, &forward)?;
        diag.predictor_ode_steps = forward.total_ode_steps + backward.total_ode_steps;
        diag.seconds_predictor = t0.elapsed().as_secs_f64();
        advance(Phase::Forward, Phase::Backward);
        let du_pred = backward.increment;

        // 4. Viscous correction on the accumulated increments.
        let t0 = now();
        let du_accum: Vec<Vec2> = du_pred
            .iter()
            .zip(&state.prev_correction)
            .map(|(a, b)| *a + *b)
            .collect();
        let cp1 = solve_cp1(
            mesh,
            material,
            bcs,
            &mut self.cp1,
            &du_accum,
            tol.cp1_toll,
            tol.pcg_tol,
        )?;
        diag.cp1_iterations = cp1.iterations;
        diag.cp1_pcg_iterations = cp1.pcg_iterations;
        for e in 0..mesh.n_cells() {
            state.cell_vel[e] += du_pred[e] + cp1.increment[e];
        }
        let u_visc = state.cell_vel.clone();
        diag.seconds_cp1 = t0.elapsed().as_secs_f64();
        advance(Phase::Backward, Phase::Viscous);

        // 5. Restore flux continuity by weighted averaging.
        let t0 = now();
        let fl_bar = average_interface_fluxes(mesh, &state.cell_vel, bcs);
        diag.max_flux_scale = fl_bar.iter().fold(0.0_f64, |m, q| m.max(q.abs()));
        diag.seconds_flux_avg = t0.elapsed().as_secs_f64();
        advance(Phase::Viscous, Phase::Averaged);

        // 6. Continuity correction.
        let t0 = now();
        let cp2 = solve_cp2(
            mesh,
            material,
            bcs,
            &self.geometry,
            &mut self.cp2,
            &fl_bar,
            &state.cell_psi,
            &state.eps_grad_psi,
            tol.pcg_tol,
            Some((&self.eta_tilde_prev, &self.eta_prev)),
        )?;
        diag.cp2_pcg_iterations = cp2.pcg_iterations;
        diag.max_flux_imbalance = cp2.max_imbalance;
        state.side_flux = cp2.side_flux;
        state.cell_vel = cp2.cell_vel;
        self.eta_tilde_prev = cp2.eta_tilde;
        diag.seconds_cp2 = t0.elapsed().as_secs_f64();
        advance(Phase::Averaged, Phase::Projected);

        // 7./8. Force updates for the next step.
        state.visc_force = viscous_force_update(mesh, material, bcs, &u_visc)?;
        update_pressure_gradient(
            material,
            &mut state.eps_grad_psi,
            &state.cell_vel,
            &u_visc,
        );
        for e in 0..mesh.n_cells() {
            state.cell_psi[e] += cp2.eta[e];
            state.prev_correction[e] = state.cell_vel[e] - u_visc[e];
        }
        self.eta_prev = cp2.eta;
        advance(Phase::Projected, Phase::ForcesUpdated);

        state.time += self.config.dt;
        state.step += 1;
        diag.max_divergence = state.max_divergence(mesh);
        diag.velocity_change_rate =
            velocity_change_rate(&u_start, &state.cell_vel, self.config.dt);
        Ok(diag)
    }

    /// Nodal pressure reconstruction anchored at the configured datum.
    pub fn nodal_pressure(&self, state: &FlowState) -> Result<Vec<f64>, SolverError> {
        let datum_node = nearest_node(self.mesh, self.config.datum_point);
        Ok(crate::corrector::reconstruct_nodal_pressure(
            self.mesh,
            &state.eps_grad_psi,
            &self.material.cell_porosity,
            datum_node,
            self.config.datum_value,
        )?)
    }
}

pub fn nearest_node(mesh: &TriMesh, p: Vec2) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, &q) in mesh.nodes.iter().enumerate() {
        let d = (q - p).norm_sq();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Max over cells of |u| dt / sqrt(A).
pub fn cfl_max(state: &FlowState, mesh: &TriMesh, dt: f64) -> f64 {
    state
        .cell_vel
        .iter()
        .zip(&mesh.areas)
        .map(|(u, a)| u.norm() * dt / a.sqrt())
        .fold(0.0, f64::max)
}

/// Max-cell relative velocity change per unit time.
fn velocity_change_rate(before: &[Vec2], after: &[Vec2], dt: f64) -> f64 {
    let umax = after.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let dmax = before
        .iter()
        .zip(after)
        .map(|(a, b)| (*b - *a).norm())
        .fold(0.0, f64::max);
    dmax / (dt * umax.max(f64::MIN_POSITIVE))
}

/// True when the last step's relative velocity change rate dropped below the
/// threshold.
pub fn detect_steady(diag: &StepDiagnostics, tol_rel: f64) -> bool {
    diag.velocity_change_rate <= tol_rel
}
