//! Lowest-order Raviart-Thomas velocity representation on triangles, plus
//! the per-step flow state.
//!
//! A cell's velocity is determined by its three side-normal fluxes
//! (positive outward). Fluxes are the primary storage; the piecewise-constant
//! cell velocities are caches refreshed at fixed points of the step pipeline.

use crate::algebra::Vec2;
use crate::mesh::TriMesh;

/// Velocity at `x` from the three outward side fluxes of cell `e`:
/// u(x) = sum_j Q_j (x - x_j) / (2 A_e), with x_j the node opposite side j.
pub fn velocity_at(mesh: &TriMesh, e: usize, fluxes: [f64; 3], x: Vec2) -> Vec2 {
    let inv = 1.0 / (2.0 * mesh.areas[e]);
    let mut u = Vec2::ZERO;
    for j in 0..3 {
        let xj = mesh.nodes[mesh.cells[e][j]];
        u += (x - xj).scale(fluxes[j] * inv);
    }
    u
}

/// Cell divergence: (sum of outward fluxes) / area, constant in the cell.
pub fn divergence(area: f64, fluxes: [f64; 3]) -> f64 {
    (fluxes[0] + fluxes[1] + fluxes[2]) / area
}

/// Outward side fluxes of the constant field `u`: Q_j = u . n_j l_j.
pub fn fluxes_from_cell_velocity(mesh: &TriMesh, e: usize, u: Vec2) -> [f64; 3] {
    let mut q = [0.0; 3];
    for j in 0..3 {
        q[j] = u.dot(mesh.cell_normals[e][j]) * mesh.cell_side_len[e][j];
    }
    q
}

/// Outward fluxes of cell `e` gathered from the shared per-side storage.
pub fn gather_cell_fluxes(mesh: &TriMesh, side_flux: &[f64], e: usize) -> [f64; 3] {
    let mut q = [0.0; 3];
    for j in 0..3 {
        let s = mesh.cell_sides[e][j];
        q[j] = side_flux[s] * mesh.side_sign(e, s);
    }
    q
}

/// Solver state between time steps.
///
/// At the start of a step the side fluxes are continuous across interior
/// sides and balance to zero in every cell; `cell_vel` holds the matching
/// piecewise-constant velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    /// Simulation clock [s].
    pub time: f64,
    pub step: usize,
    /// Per side: normal flux, oriented out of the side's owner cell [m^2/s].
    pub side_flux: Vec<f64>,
    /// Per cell: velocity [m/s].
    pub cell_vel: Vec<Vec2>,
    /// Per cell: kinematic pressure at the circumcenter [m^2/s^2].
    pub cell_psi: Vec<f64>,
    /// Per cell: porosity-weighted pressure gradient eps * grad(psi) [m/s^2].
    pub eps_grad_psi: Vec<Vec2>,
    /// Per cell: explicit viscous force accumulator from the previous
    /// viscous correction [m^3/s^2].
    pub visc_force: Vec<Vec2>,
    /// Per cell: velocity change of the previous step's flux averaging plus
    /// continuity correction [m/s].
    pub prev_correction: Vec<Vec2>,
}

impl FlowState {
    pub fn zeros(mesh: &TriMesh) -> Self {
        FlowState {
            time: 0.0,
            step: 0,
            side_flux: vec![0.0; mesh.sides.len()],
            cell_vel: vec![Vec2::ZERO; mesh.n_cells()],
            cell_psi: vec![0.0; mesh.n_cells()],
            eps_grad_psi: vec![Vec2::ZERO; mesh.n_cells()],
            visc_force: vec![Vec2::ZERO; mesh.n_cells()],
            prev_correction: vec![Vec2::ZERO; mesh.n_cells()],
        }
    }

    /// Refresh the cell-velocity cache from the side fluxes (evaluated at
    /// the centroid; exact for balanced fluxes where RT0 is constant).
    pub fn refresh_cell_velocities(&mut self, mesh: &TriMesh) {
        for e in 0..mesh.n_cells() {
            let q = gather_cell_fluxes(mesh, &self.side_flux, e);
            self.cell_vel[e] = velocity_at(mesh, e, q, mesh.centroids[e]);
        }
    }

    /// Largest per-cell divergence magnitude [1/s].
    pub fn max_divergence(&self, mesh: &TriMesh) -> f64 {
        (0..mesh.n_cells())
            .map(|e| divergence(mesh.areas[e], gather_cell_fluxes(mesh, &self.side_flux, e)).abs())
            .fold(0.0, f64::max)
    }
}
