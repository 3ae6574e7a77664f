//! The two corrector stages: an implicit viscous correction solved as a pair
//! of iteratively coupled scalar systems (CP1), and a continuity restoration
//! through a pressure-increment potential with anisotropy-aware two-point
//! fluxes (CP2), plus interface-flux averaging and the pressure updates.

use thiserror::Error;

use crate::algebra::Vec2;
use crate::bc::{ResolvedBcs, SideBc};
use crate::material::MaterialField;
use crate::mesh::TriMesh;
use crate::rt0::velocity_at;
use crate::sparse::{
    assemble_pattern, default_max_iter, pcg_solve_opts, LinalgError, PcgOptions, SparseSpd,
};

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("side {side}: degenerate dual distance, cannot form 1/d coefficient")]
    DegenerateDual { side: usize },
    #[error("viscous coupling iteration did not converge after {iters} iterations; error history {history:?}")]
    NoConvergence { iters: usize, history: Vec<f64> },
    #[error("nodal pressure reconstruction failed (disconnected mesh?): {0}")]
    SingularReconstruction(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

const DEGENERATE_REL: f64 = 1e-12;

fn checked_dual(mesh: &TriMesh, s: usize) -> Result<f64, CorrectorError> {
    let side = &mesh.sides[s];
    if side.dual_dist.abs() < DEGENERATE_REL * side.length {
        return Err(CorrectorError::DegenerateDual { side: s });
    }
    Ok(side.dual_dist)
}

/// True if the viscous stage exchanges fluxes through this side.
fn cp1_couples(bcs: &ResolvedBcs, s: usize) -> bool {
    match bcs.get(s) {
        None => true,
        Some(SideBc::Essential { .. }) => true,
        Some(SideBc::Natural { .. }) | Some(SideBc::FreeSlip) => false,
    }
}

/// Assembled viscous-correction systems (x and y components).
#[derive(Debug)]
pub struct Cp1Matrices {
    pub x: SparseSpd,
    pub y: SparseSpd,
    /// Rows whose diagonal lost strict dominance (non-Delaunay meshes).
    pub non_spd_rows: usize,
}

/// Matrix coefficients: diag = rate_xx(yy) * A_e + nu * sum(l/d),
/// off-diag = -nu * l / d over viscously coupled sides.
pub fn assemble_cp1(
    mesh: &TriMesh,
    material: &MaterialField,
    bcs: &ResolvedBcs,
) -> Result<Cp1Matrices, CorrectorError> {
    let nu = material.nu;
    let mut mx = assemble_pattern(mesh);
    let mut my = assemble_pattern(mesh);

    let mut diag_visc = vec![0.0; mesh.n_cells()];
    for (s, side) in mesh.sides.iter().enumerate() {
        if !cp1_couples(bcs, s) {
            continue;
        }
        let d = checked_dual(mesh, s)?;
        let w = nu * side.length / d;
        match side.neighbor {
            Some((ep, _)) => {
                let e = side.cell;
                diag_visc[e] += w;
                diag_visc[ep] += w;
                mx.add(e, ep, -w).unwrap();
                mx.add(ep, e, -w).unwrap();
                my.add(e, ep, -w).unwrap();
                my.add(ep, e, -w).unwrap();
            }
            None => diag_visc[side.cell] += w,
        }
    }

    let mut non_spd_rows = 0;
    for e in 0..mesh.n_cells() {
        let rate = material.cell_rate(e);
        let area = mesh.areas[e];
        let dx = rate.xx * area + diag_visc[e];
        let dy = rate.yy * area + diag_visc[e];
        if dx <= 0.0 || dy <= 0.0 {
            non_spd_rows += 1;
        }
        mx.add(e, e, dx).unwrap();
        my.add(e, e, dy).unwrap();
    }
    mx.ensure_factor()?;
    my.ensure_factor()?;
    Ok(Cp1Matrices { x: mx, y: my, non_spd_rows })
}

/// Viscous difference sums of a known per-cell field:
/// out[e] = nu * sum_j (w[ep] - w[e]) l / d, with zero ghosts on essential
/// sides and no exchange across natural/free-slip sides.
fn viscous_difference(
    mesh: &TriMesh,
    material: &MaterialField,
    bcs: &ResolvedBcs,
    field: &[Vec2],
) -> Result<Vec<Vec2>, CorrectorError> {
    let nu = material.nu;
    let mut out = vec![Vec2::ZERO; mesh.n_cells()];
    for (s, side) in mesh.sides.iter().enumerate() {
        if !cp1_couples(bcs, s) {
            continue;
        }
        let d = checked_dual(mesh, s)?;
        let w = nu * side.length / d;
        match side.neighbor {
            Some((ep, _)) => {
                let e = side.cell;
                let diff = (field[ep] - field[e]).scale(w);
                out[e] += diff;
                out[ep] -= diff;
            }
            None => {
                let e = side.cell;
                out[e] -= field[e].scale(w);
            }
        }
    }
    Ok(out)
}

/// Result of the viscous correction.
#[derive(Debug)]
pub struct Cp1Solution {
    /// Per-cell velocity increment.
    pub increment: Vec<Vec2>,
    /// Coupling iterations used (1 when the damping is diagonal).
    pub iterations: usize,
    pub pcg_iterations: usize,
}

/// Solve the coupled x/y systems by freezing the cross terms, Jacobi style.
///
/// `du_accum` is the sum of the predictor increment and the previous step's
/// averaging/projection correction.
pub fn solve_cp1(
    mesh: &TriMesh,
    material: &MaterialField,
    bcs: &ResolvedBcs,
    matrices: &mut Cp1Matrices,
    du_accum: &[Vec2],
    toll: f64,
    pcg_tol: f64,
) -> Result<Cp1Solution, CorrectorError> {
    let n = mesh.n_cells();
    let base = viscous_difference(mesh, material, bcs, du_accum)?;
    // rhs0 = -nu sum (du_accum_e - du_accum_ep) l/d  ==  +viscous_difference.
    let rhs0_x: Vec<f64> = base.iter().map(|v| v.x).collect();
    let rhs0_y: Vec<f64> = base.iter().map(|v| v.y).collect();

    let opts = PcgOptions { tol: pcg_tol, tol_inf: 0.0, max_iter: default_max_iter(n) };
    let mut pcg_iterations = 0;

    let mut ux = vec![0.0; n];
    let mut uy = vec![0.0; n];
    {
        let out = pcg_solve_opts(&mut matrices.x, &rhs0_x, &ux, opts)?;
        pcg_iterations += out.iterations;
        ux = out.x;
        let out = pcg_solve_opts(&mut matrices.y, &rhs0_y, &uy, opts)?;
        pcg_iterations += out.iterations;
        uy = out.x;
    }

    if !material.anisotropic_coupling {
        let increment = ux.iter().zip(&uy).map(|(&x, &y)| Vec2::new(x, y)).collect();
        return Ok(Cp1Solution { increment, iterations: 1, pcg_iterations });
    }

    let mut history = Vec::new();
    let mut rhs_x = vec![0.0; n];
    let mut rhs_y = vec![0.0; n];
    for it in 1..=50 {
        for e in 0..n {
            let rate = material.cell_rate(e);
            let a = mesh.areas[e];
            rhs_x[e] = rhs0_x[e] - rate.xy * a * uy[e];
            rhs_y[e] = rhs0_y[e] - rate.yx * a * ux[e];
        }
        let out_x = pcg_solve_opts(&mut matrices.x, &rhs_x, &ux, opts)?;
        pcg_iterations += out_x.iterations;
        let out_y = pcg_solve_opts(&mut matrices.y, &rhs_y, &uy, opts)?;
        pcg_iterations += out_y.iterations;

        let err_x = sqrt_norm_ratio(&out_x.x, &ux);
        let err_y = sqrt_norm_ratio(&out_y.x, &uy);
        ux = out_x.x;
        uy = out_y.x;
        let err = err_x.min(err_y);
        history.push(err);
        if err <= toll {
            let increment = ux.iter().zip(&uy).map(|(&x, &y)| Vec2::new(x, y)).collect();
            return Ok(Cp1Solution { increment, iterations: it, pcg_iterations });
        }
    }
    Err(CorrectorError::NoConvergence { iters: 50, history })
}

/// sqrt(|new - old|_2) / sqrt(|old|_2); zero when both vanish.
fn sqrt_norm_ratio(new: &[f64], old: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, b) in new.iter().zip(old) {
        diff += (a - b) * (a - b);
        norm += b * b;
    }
    let diff = diff.sqrt();
    let norm = norm.sqrt();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

/// Area-weighted mean of the one-sided fluxes, continuous by construction.
/// Boundary sides use the prescribed flux where one exists and the single
/// sided cell flux otherwise. Oriented out of the side's owner cell.
pub fn average_interface_fluxes(
    mesh: &TriMesh,
    cell_vel: &[Vec2],
    bcs: &ResolvedBcs,
) -> Vec<f64> {
    let mut fl = vec![0.0; mesh.sides.len()];
    for (s, side) in mesh.sides.iter().enumerate() {
        let e = side.cell;
        fl[s] = match side.neighbor {
            Some((ep, _)) => {
                let ae = mesh.areas[e];
                let aep = mesh.areas[ep];
                (cell_vel[e].dot(side.normal) * aep + cell_vel[ep].dot(side.normal) * ae)
                    * side.length
                    / (ae + aep)
            }
            None => match bcs.prescribed_flux(mesh, s) {
                Some(q) => q,
                None => cell_vel[e].dot(side.normal) * side.length,
            },
        };
    }
    fl
}

/// Explicit viscous force accumulator for the next predictor:
/// nu * sum_j (u_e - u_ep) l / d with essential-ghost boundary values.
pub fn viscous_force_update(
    mesh: &TriMesh,
    material: &MaterialField,
    bcs: &ResolvedBcs,
    cell_vel: &[Vec2],
) -> Result<Vec<Vec2>, CorrectorError> {
    let nu = material.nu;
    let mut out = vec![Vec2::ZERO; mesh.n_cells()];
    for (s, side) in mesh.sides.iter().enumerate() {
        match bcs.get(s) {
            None => {
                let d = checked_dual(mesh, s)?;
                let w = nu * side.length / d;
                let (e, ep) = (side.cell, side.neighbor.unwrap().0);
                let diff = (cell_vel[e] - cell_vel[ep]).scale(w);
                out[e] += diff;
                out[ep] -= diff;
            }
            Some(SideBc::Essential { velocity }) => {
                let d = checked_dual(mesh, s)?;
                let w = nu * side.length / d;
                let e = side.cell;
                out[e] += (cell_vel[e] - velocity).scale(w);
            }
            Some(SideBc::Natural { .. }) | Some(SideBc::FreeSlip) => {}
        }
    }
    Ok(out)
}

/// One flanking term of the tangential flux stencil.
#[derive(Clone, Copy, Debug)]
pub struct FlankTerm {
    /// Projection of the tangential conormal part onto the flanking normal.
    pub proj: f64,
    /// Orientation sign (+1 iff proj > 0).
    pub alpha: f64,
    /// Difference cells: coefficient multiplies eta[near] - eta[far].
    pub near: usize,
    pub far: usize,
    /// Signed dual distance between near and far.
    pub dual: f64,
}

/// Co-normal decomposition data of one side.
#[derive(Clone, Debug)]
pub struct ConormalSide {
    /// mobility_j * n_j (owner orientation).
    pub conormal: Vec2,
    /// Component along the side normal (invariant under owner swap).
    pub normal_part: f64,
    /// Tangential remainder vector.
    pub tangential: Vec2,
    /// Up to four flanking terms (two per adjacent cell); boundary-flanked
    /// terms are dropped.
    pub flank: Vec<FlankTerm>,
}

/// Per-side decomposition of the mobility conormal into a two-point normal
/// part and flanking tangential corrections.
#[derive(Debug)]
pub struct ConormalGeometry {
    pub sides: Vec<ConormalSide>,
}

pub fn conormal_geometry(
    mesh: &TriMesh,
    material: &MaterialField,
) -> Result<ConormalGeometry, CorrectorError> {
    let mut sides = Vec::with_capacity(mesh.sides.len());
    for (s, side) in mesh.sides.iter().enumerate() {
        let n_j = side.normal;
        let xi = material.side_mobility[s];
        let isotropic = xi.xy == 0.0 && xi.yx == 0.0 && xi.xx == xi.yy;
        let conormal = xi.mul_vec(n_j);
        // For an exactly isotropic tensor the conormal is exactly normal;
        // keep the tangential part identically zero rather than at rounding
        // level so the two-point scheme is bit-exact there.
        let normal_part = if isotropic { xi.xx } else { conormal.dot(n_j) };
        let tangential =
            if isotropic { Vec2::ZERO } else { conormal - n_j.scale(normal_part) };

        let mut flank = Vec::new();
        if side.neighbor.is_some() && tangential.norm() > 0.0 {
            let e = side.cell;
            let ep = side.neighbor.unwrap().0;
            for (owner, skip_local) in [(e, side.local), (ep, side.neighbor.unwrap().1)] {
                for j in 0..3 {
                    if j == skip_local {
                        continue;
                    }
                    let fs = mesh.cell_sides[owner][j];
                    let fside = &mesh.sides[fs];
                    if fside.neighbor.is_none() {
                        continue; // dropped boundary-flanked term
                    }
                    let far = if fside.cell == owner {
                        fside.neighbor.unwrap().0
                    } else {
                        fside.cell
                    };
                    let n_l = mesh.cell_normals[owner][j];
                    let proj = tangential.dot(n_l);
                    if proj == 0.0 {
                        continue;
                    }
                    let dual = checked_dual(mesh, fs)?;
                    flank.push(FlankTerm {
                        proj,
                        alpha: proj.signum(),
                        near: owner,
                        far,
                        dual,
                    });
                }
            }
        }
        sides.push(ConormalSide { conormal, normal_part, tangential, flank });
    }
    Ok(ConormalGeometry { sides })
}

/// Assembled continuity-correction system.
#[derive(Debug)]
pub struct Cp2Matrix {
    pub a: SparseSpd,
    /// Cell pinned to remove the nullspace when no natural side exists.
    pub pinned: Option<usize>,
    pub non_spd_rows: usize,
}

/// diag = sum_j (l/d) d_n, off-diag = -(l/d) d_n; natural boundary sides add
/// their ghost coefficient to the diagonal; prescribed-flux sides contribute
/// nothing. All-prescribed domains are pinned at `datum_cell`.
pub fn assemble_cp2(
    mesh: &TriMesh,
    geometry: &ConormalGeometry,
    bcs: &ResolvedBcs,
    datum_cell: usize,
) -> Result<Cp2Matrix, CorrectorError> {
    let mut a = assemble_pattern(mesh);
    let mut diag = vec![0.0; mesh.n_cells()];
    for (s, side) in mesh.sides.iter().enumerate() {
        let d_n = geometry.sides[s].normal_part;
        match side.neighbor {
            Some((ep, _)) => {
                let d = checked_dual(mesh, s)?;
                let w = side.length * d_n / d;
                let e = side.cell;
                diag[e] += w;
                diag[ep] += w;
                a.add(e, ep, -w).unwrap();
                a.add(ep, e, -w).unwrap();
            }
            None => {
                if matches!(bcs.get(s), Some(SideBc::Natural { .. })) {
                    let d = checked_dual(mesh, s)?;
                    diag[side.cell] += side.length * d_n / d;
                }
            }
        }
    }

    let pinned = if bcs.has_natural() { None } else { Some(datum_cell) };
    if let Some(pin) = pinned {
        // Symmetric pinning: identity row/column for the datum cell.
        for e in 0..mesh.n_cells() {
            if e != pin && a.get(e, pin) != 0.0 {
                a.set(e, pin, 0.0).unwrap();
                a.set(pin, e, 0.0).unwrap();
            }
        }
        diag[pin] = 1.0;
    }

    let mut non_spd_rows = 0;
    for (e, &d) in diag.iter().enumerate() {
        if d <= 0.0 {
            non_spd_rows += 1;
        }
        a.add(e, e, d).unwrap();
    }
    a.ensure_factor()?;
    Ok(Cp2Matrix { a, pinned, non_spd_rows })
}

/// Tangential flux component of side `s` for a frozen potential field.
fn tangential_flux(geometry: &ConormalGeometry, mesh: &TriMesh, s: usize, eta: &[f64]) -> f64 {
    let g = &geometry.sides[s];
    if g.flank.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in &g.flank {
        acc += t.proj * t.alpha * (eta[t.near] - eta[t.far]) / t.dual;
    }
    0.5 * acc * mesh.sides[s].length
}

/// Ghost potential value at a natural boundary side: the mismatch between the
/// prescribed pressure and the gradient-extrapolated cell pressure.
fn natural_ghost(
    mesh: &TriMesh,
    material: &MaterialField,
    s: usize,
    psi_b: f64,
    cell_psi: &[f64],
    eps_grad_psi: &[Vec2],
) -> f64 {
    let e = mesh.sides[s].cell;
    let grad = eps_grad_psi[e].scale(1.0 / material.cell_porosity[e]);
    let extrapolated = cell_psi[e] + grad.dot(mesh.sides[s].midpoint - mesh.circumcenters[e]);
    psi_b - extrapolated
}

/// Result of the continuity correction.
#[derive(Debug)]
pub struct Cp2Solution {
    /// Pressure-increment potential per cell.
    pub eta: Vec<f64>,
    /// Intermediate potential of the first pass.
    pub eta_tilde: Vec<f64>,
    /// Corrective flux per side (owner orientation).
    pub corrective_flux: Vec<f64>,
    /// Final continuous fluxes (averaged + corrective).
    pub side_flux: Vec<f64>,
    /// Final piecewise-constant cell velocities.
    pub cell_vel: Vec<Vec2>,
    pub pcg_iterations: usize,
    /// Largest per-cell flux imbalance after correction.
    pub max_imbalance: f64,
}

/// Two sequential solves on the same matrix: the first produces the
/// approximate potential that freezes the tangential corrections, the second
/// balances the corrected fluxes. Mass balance per cell then holds to solver
/// tolerance by construction.
#[allow(clippy::too_many_arguments)]
pub fn solve_cp2(
    mesh: &TriMesh,
    material: &MaterialField,
    bcs: &ResolvedBcs,
    geometry: &ConormalGeometry,
    matrix: &mut Cp2Matrix,
    fl_bar: &[f64],
    cell_psi: &[f64],
    eps_grad_psi: &[Vec2],
    pcg_tol: f64,
    warm_start: Option<(&[f64], &[f64])>,
) -> Result<Cp2Solution, CorrectorError> {
    let n = mesh.n_cells();

    // Ghost coefficients and values on natural sides.
    let mut ghost: Vec<Option<(f64, f64)>> = vec![None; mesh.sides.len()]; // (coef, value)
    for (s, side) in mesh.sides.iter().enumerate() {
        if let Some(SideBc::Natural { psi }) = bcs.get(s) {
            let d = checked_dual(mesh, s)?;
            let coef = side.length * geometry.sides[s].normal_part / d;
            let value = natural_ghost(mesh, material, s, psi, cell_psi, eps_grad_psi);
            ghost[s] = Some((coef, value));
        }
    }

    // rhs1 = -(sum of averaged fluxes) + ghost feed.
    let mut rhs1 = vec![0.0; n];
    for (s, side) in mesh.sides.iter().enumerate() {
        let q = fl_bar[s];
        rhs1[side.cell] -= q;
        if let Some((ep, _)) = side.neighbor {
            rhs1[ep] += q;
        }
        if let Some((coef, value)) = ghost[s] {
            rhs1[side.cell] += coef * value;
        }
    }
    if let Some(pin) = matrix.pinned {
        rhs1[pin] = 0.0;
    }

    let zeros = vec![0.0; n];
    let opts = PcgOptions { tol: pcg_tol, tol_inf: 10.0 * pcg_tol, max_iter: default_max_iter(n) };
    let (w1, w2) = match warm_start {
        Some((a, b)) => (a, b),
        None => (&zeros[..], &zeros[..]),
    };
    let out1 = pcg_solve_opts(&mut matrix.a, &rhs1, w1, opts)?;
    let eta_tilde = out1.x;
    let mut pcg_iterations = out1.iterations;

    // Freeze the tangential corrections built from the first pass.
    let mut tang = vec![0.0; mesh.sides.len()];
    let mut rhs2 = rhs1.clone();
    for (s, side) in mesh.sides.iter().enumerate() {
        if side.neighbor.is_some() {
            let t = tangential_flux(geometry, mesh, s, &eta_tilde);
            tang[s] = t;
            rhs2[side.cell] -= t;
            let ep = side.neighbor.unwrap().0;
            rhs2[ep] += t;
        }
    }
    if let Some(pin) = matrix.pinned {
        rhs2[pin] = 0.0;
    }
    let out2 = pcg_solve_opts(&mut matrix.a, &rhs2, w2, opts)?;
    let eta = out2.x;
    pcg_iterations += out2.iterations;

    // Corrective and final fluxes.
    let mut corrective = vec![0.0; mesh.sides.len()];
    let mut side_flux = vec![0.0; mesh.sides.len()];
    for (s, side) in mesh.sides.iter().enumerate() {
        let g = match side.neighbor {
            Some((ep, _)) => {
                let d = mesh.sides[s].dual_dist;
                side.length * geometry.sides[s].normal_part * (eta[side.cell] - eta[ep]) / d
                    + tang[s]
            }
            None => match ghost[s] {
                Some((coef, value)) => coef * (eta[side.cell] - value),
                None => 0.0,
            },
        };
        corrective[s] = g;
        side_flux[s] = fl_bar[s] + g;
    }

    let mut cell_vel = vec![Vec2::ZERO; n];
    let mut max_imbalance = 0.0_f64;
    for e in 0..n {
        let q = crate::rt0::gather_cell_fluxes(mesh, &side_flux, e);
        max_imbalance = max_imbalance.max((q[0] + q[1] + q[2]).abs());
        cell_vel[e] = velocity_at(mesh, e, q, mesh.centroids[e]);
    }

    Ok(Cp2Solution {
        eta,
        eta_tilde,
        corrective_flux: corrective,
        side_flux,
        cell_vel,
        pcg_iterations,
        max_imbalance,
    })
}

/// Pressure-gradient accumulator update:
/// eps * grad(psi)^{new} = eps * grad(psi)^{old} - rate * (u_final - u_visc).
///
/// The sign follows from the continuity correction defining
/// u_final = u_visc - mobility * grad(delta psi) / eps-scaling; the corrected
/// velocity increment and the pressure-increment gradient are antiparallel.
pub fn update_pressure_gradient(
    material: &MaterialField,
    eps_grad_psi: &mut [Vec2],
    u_final: &[Vec2],
    u_visc: &[Vec2],
) {
    for e in 0..eps_grad_psi.len() {
        let rate = material.cell_rate(e);
        eps_grad_psi[e] -= rate.mul_vec(u_final[e] - u_visc[e]);
    }
}

/// Weighted least-squares fit of nodal pressures whose piecewise-linear
/// gradient matches the stored per-cell gradients; the datum node is pinned
/// exactly.
pub fn reconstruct_nodal_pressure(
    mesh: &TriMesh,
    eps_grad_psi: &[Vec2],
    cell_porosity: &[f64],
    datum_node: usize,
    datum_value: f64,
) -> Result<Vec<f64>, CorrectorError> {
    let n = mesh.n_nodes();
    // Node-adjacency pattern.
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for tri in &mesh.cells {
        for &i in tri {
            for &j in tri {
                if i != j {
                    pattern[i].push(j);
                }
            }
        }
    }
    let mut a = SparseSpd::from_pattern(pattern);
    let mut rhs = vec![0.0; n];

    for (e, tri) in mesh.cells.iter().enumerate() {
        let area = mesh.areas[e];
        let [p0, p1, p2] = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let inv2a = 1.0 / (2.0 * area);
        // Gradients of the barycentric basis functions.
        let grads = [
            Vec2::new(p1.y - p2.y, p2.x - p1.x).scale(inv2a),
            Vec2::new(p2.y - p0.y, p0.x - p2.x).scale(inv2a),
            Vec2::new(p0.y - p1.y, p1.x - p0.x).scale(inv2a),
        ];
        let target = eps_grad_psi[e].scale(1.0 / cell_porosity[e]);
        for i in 0..3 {
            rhs[tri[i]] += area * grads[i].dot(target);
            for j in 0..3 {
                a.add(tri[i], tri[j], area * grads[i].dot(grads[j])).unwrap();
            }
        }
    }

    // Pin the datum node, moving its column to the right-hand side.
    for i in 0..n {
        if i != datum_node {
            let v = a.get(i, datum_node);
            if v != 0.0 {
                rhs[i] -= v * datum_value;
                a.set(i, datum_node, 0.0).unwrap();
                a.set(datum_node, i, 0.0).unwrap();
            }
        }
    }
    a.set(datum_node, datum_node, 1.0).unwrap();
    rhs[datum_node] = datum_value;

    let opts = PcgOptions { tol: 1e-12, tol_inf: 0.0, max_iter: default_max_iter(n) * 4 };
    let x0 = vec![0.0; n];
    match pcg_solve_opts(&mut a, &rhs, &x0, opts) {
        Ok(out) => Ok(out.x),
        Err(e) => Err(CorrectorError::SingularReconstruction(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{assemble_material, MaterialSpec, ProfileKind, TlGeometry, TransitionLayerSpec};
    use crate::mesh::test_meshes::{equilateral_pair, hexagon_patch, unit_right_triangle};
    use crate::mesh::{build_mesh, test_meshes::tag_all, TriMesh};
    use approx::assert_relative_eq;

    fn natural_bcs(mesh: &TriMesh) -> ResolvedBcs {
        ResolvedBcs::resolve(mesh, |_, _| SideBc::Natural { psi: 0.0 })
    }

    fn wall_bcs(mesh: &TriMesh) -> ResolvedBcs {
        ResolvedBcs::resolve(mesh, |_, _| SideBc::Essential { velocity: Vec2::ZERO })
    }

    /// Uniform porous material covering everything, with a given inverse
    /// permeability tensor.
    fn uniform_porous(inv_perm: crate::algebra::Mat2, eps0: f64, nu: f64) -> MaterialSpec {
        MaterialSpec {
            nu,
            regions: vec![TransitionLayerSpec {
                geometry: TlGeometry::RectContour {
                    min: Vec2::new(-1e3, -1e3),
                    max: Vec2::new(1e3, 1e3),
                },
                d_tl: 1.0,
                d_eps: 0.0,
                d_k: 0.0,
                theta_eps: 10.0,
                theta_k: 10.0,
                eps0,
                inv_perm0: inv_perm,
                kind: ProfileKind::Tanh,
            }],
        }
    }

    /// Two triangles of areas 1 and 2 sharing the unit vertical side x = 0
    /// with owner normal (1, 0).
    fn lopsided_pair() -> TriMesh {
        let nodes = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(-2.0, 0.5),
            Vec2::new(4.0, 0.5),
        ];
        let cells = vec![[0, 1, 2], [0, 3, 1]];
        let tags = tag_all(&[(0, 2), (1, 2), (0, 3), (1, 3)], "w");
        build_mesh(nodes, cells, &tags).unwrap()
    }

    #[test]
    fn cp1_coefficients_match_hand_formula() {
        let mesh = equilateral_pair();
        let dt = 0.1;
        let nu = 0.01;
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(nu), dt).unwrap();
        let bcs = natural_bcs(&mesh);
        let m = assemble_cp1(&mesh, &material, &bcs).unwrap();
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        let d = mesh.sides[shared].dual_dist;
        let l = mesh.sides[shared].length;
        // Natural boundaries carry no viscous closure, so the only coupling
        // is the shared side.
        let off = -nu * l / d;
        let area = mesh.areas[0];
        assert_relative_eq!(m.x.get(0, 1), off, max_relative = 1e-14);
        assert_relative_eq!(m.x.get(0, 0), area / dt - off, max_relative = 1e-14);
        // Free fluid: x and y systems identical.
        assert_eq!(m.x.values, m.y.values);
        assert_eq!(m.non_spd_rows, 0);
    }

    #[test]
    fn cp1_diagonal_damping_single_iteration() {
        let mesh = hexagon_patch();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.2).unwrap();
        let bcs = wall_bcs(&mesh);
        let mut m = assemble_cp1(&mesh, &material, &bcs).unwrap();
        let du: Vec<Vec2> =
            (0..mesh.n_cells()).map(|e| Vec2::new(e as f64 * 0.1, -(e as f64))).collect();
        let sol = solve_cp1(&mesh, &material, &bcs, &mut m, &du, 5e-4, 1e-12).unwrap();
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn cp1_uniform_increment_yields_zero_correction() {
        let mesh = hexagon_patch();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.2).unwrap();
        let bcs = natural_bcs(&mesh);
        let mut m = assemble_cp1(&mesh, &material, &bcs).unwrap();
        let du = vec![Vec2::new(0.3, -0.2); mesh.n_cells()];
        let sol = solve_cp1(&mesh, &material, &bcs, &mut m, &du, 5e-4, 1e-12).unwrap();
        for v in &sol.increment {
            assert!(v.norm() < 1e-14);
        }
    }

    #[test]
    fn cp1_two_cell_anisotropic_matches_dense_monolithic_solve() {
        let mesh = equilateral_pair();
        let dt = 0.25;
        let nu = 1e-2;
        let kk = crate::algebra::Mat2::new(40.0, 15.0, 15.0, 40.0);
        let material = assemble_material(&mesh, &uniform_porous(kk, 0.5, nu), dt).unwrap();
        assert!(material.anisotropic_coupling);
        let bcs = natural_bcs(&mesh);
        let mut m = assemble_cp1(&mesh, &material, &bcs).unwrap();
        let du = vec![Vec2::new(0.1, 0.02), Vec2::new(-0.05, 0.07)];
        let toll = 1e-7;
        let sol = solve_cp1(&mesh, &material, &bcs, &mut m, &du, toll, 1e-13).unwrap();

        // Dense oracle of the unsplit coupled system:
        // rate * du_visc * A + nu * sum (du_visc_e - du_visc_ep) l/d = rhs.
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        let w = nu * mesh.sides[shared].length / mesh.sides[shared].dual_dist;
        let mut a = nalgebra::DMatrix::<f64>::zeros(4, 4);
        let mut b = nalgebra::DVector::<f64>::zeros(4);
        for e in 0..2 {
            let rate = material.cell_rate(e);
            let area = mesh.areas[e];
            let (ix, iy) = (2 * e, 2 * e + 1);
            a[(ix, ix)] = rate.xx * area + w;
            a[(ix, iy)] = rate.xy * area;
            a[(iy, ix)] = rate.yx * area;
            a[(iy, iy)] = rate.yy * area + w;
            let (jx, jy) = (2 * (1 - e), 2 * (1 - e) + 1);
            a[(ix, jx)] = -w;
            a[(iy, jy)] = -w;
            let rhs = (du[1 - e] - du[e]).scale(w);
            b[ix] = rhs.x;
            b[iy] = rhs.y;
        }
        let x = a.lu().solve(&b).unwrap();
        for e in 0..2 {
            let scale = x.amax().max(1e-30);
            assert!(
                (sol.increment[e].x - x[2 * e]).abs() <= 20.0 * toll * scale,
                "x component differs beyond the coupling tolerance"
            );
            assert!((sol.increment[e].y - x[2 * e + 1]).abs() <= 20.0 * toll * scale);
        }
    }

    #[test]
    fn flux_average_uniform_field() {
        let mesh = equilateral_pair();
        let bcs = natural_bcs(&mesh);
        let u = Vec2::new(0.3, -0.8);
        let vel = vec![u; mesh.n_cells()];
        let fl = average_interface_fluxes(&mesh, &vel, &bcs);
        for (s, side) in mesh.sides.iter().enumerate() {
            assert_relative_eq!(
                fl[s],
                u.dot(side.normal) * side.length,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn flux_average_area_weighting() {
        let mesh = lopsided_pair();
        assert_relative_eq!(mesh.areas[0], 1.0, max_relative = 1e-13);
        assert_relative_eq!(mesh.areas[1], 2.0, max_relative = 1e-13);
        let bcs = natural_bcs(&mesh);
        let vel = vec![Vec2::new(1.0, 0.0), Vec2::ZERO];
        let fl = average_interface_fluxes(&mesh, &vel, &bcs);
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        assert_eq!(mesh.sides[shared].normal, Vec2::new(1.0, 0.0));
        // [(u_e.n) A_ep + (u_ep.n) A_e] l / (A_e + A_ep) = 2/3.
        assert_relative_eq!(fl[shared], 2.0 / 3.0, max_relative = 1e-13);
        // Antisymmetry is structural: one stored value per side.
    }

    #[test]
    fn viscous_force_zero_for_uniform_field() {
        let mesh = hexagon_patch();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-2), 0.1).unwrap();
        let u = Vec2::new(0.4, 0.1);
        let bcs = ResolvedBcs::resolve(&mesh, |_, _| SideBc::Essential { velocity: u });
        let vel = vec![u; mesh.n_cells()];
        let out = viscous_force_update(&mesh, &material, &bcs, &vel).unwrap();
        for v in &out {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn viscous_force_vanishes_for_linear_shear_at_center() {
        // u = (y, 0): the two-point differences of a linear field cancel on
        // the symmetric hexagon stencil when boundary ghosts sample the
        // exact field at the side midpoints.
        let mesh = hexagon_patch();
        let nu = 1e-2;
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(nu), 0.1).unwrap();
        let shear = |p: Vec2| Vec2::new(p.y, 0.0);
        let mesh2 = hexagon_patch();
        let bcs = ResolvedBcs::resolve(&mesh2, |s, _| SideBc::Essential {
            velocity: shear(mesh2.sides[s].midpoint),
        });
        let vel: Vec<Vec2> = mesh.centroids.iter().map(|&c| shear(c)).collect();
        let out = viscous_force_update(&mesh, &material, &bcs, &vel).unwrap();
        for (e, v) in out.iter().enumerate() {
            assert!(v.norm() < 1e-14 * nu.max(1.0), "cell {e} force {v:?}");
        }
    }

    #[test]
    fn viscous_force_zero_viscosity_scaling() {
        // Force scales linearly with nu.
        let mesh = hexagon_patch();
        let bcs = natural_bcs(&mesh);
        let vel: Vec<Vec2> =
            (0..mesh.n_cells()).map(|e| Vec2::new((e as f64).sin(), 0.2 * e as f64)).collect();
        let m1 = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.1).unwrap();
        let m2 = assemble_material(&mesh, &MaterialSpec::free_fluid(2e-3), 0.1).unwrap();
        let f1 = viscous_force_update(&mesh, &m1, &bcs, &vel).unwrap();
        let f2 = viscous_force_update(&mesh, &m2, &bcs, &vel).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_relative_eq!(b.x, 2.0 * a.x, max_relative = 1e-12);
            assert_relative_eq!(b.y, 2.0 * a.y, max_relative = 1e-12);
        }
    }

    #[test]
    fn conormal_isotropic_has_no_tangential_part() {
        let mesh = equilateral_pair();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.3).unwrap();
        let g = conormal_geometry(&mesh, &material).unwrap();
        for (s, cs) in g.sides.iter().enumerate() {
            assert_eq!(cs.tangential, Vec2::ZERO);
            assert!(cs.flank.is_empty());
            assert_relative_eq!(cs.normal_part, 0.3, max_relative = 1e-14);
            let _ = s;
        }
    }

    #[test]
    fn conormal_decomposition_example_tensor() {
        let mesh = lopsided_pair();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 1.0).unwrap();
        let mut material = material;
        // Impose the example mobility on every side.
        let xi = crate::algebra::Mat2::new(2.0, 1.0, 1.0, 2.0);
        for m in &mut material.side_mobility {
            *m = xi;
        }
        let g = conormal_geometry(&mesh, &material).unwrap();
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        let cs = &g.sides[shared];
        // n = (1,0): d = (2,1), normal part 2, tangential (0,1).
        assert_relative_eq!(cs.normal_part, 2.0, max_relative = 1e-14);
        assert_relative_eq!(cs.tangential.y, 1.0, max_relative = 1e-14);
        assert!(cs.tangential.x.abs() < 1e-14);
        // Four flanking terms (both cells interior-flanked? boundary flanks
        // are dropped; here all flanking sides are boundary, so none).
        assert!(cs.flank.is_empty());
        // Projections verified on a mesh with interior flanks below.
    }

    #[test]
    fn conormal_flank_projections_on_interior_mesh() {
        let mesh = hexagon_patch();
        let mut material =
            assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 1.0).unwrap();
        let xi = crate::algebra::Mat2::new(2.0, 1.0, 1.0, 2.0);
        for m in &mut material.side_mobility {
            *m = xi;
        }
        let g = conormal_geometry(&mesh, &material).unwrap();
        for (s, side) in mesh.sides.iter().enumerate() {
            if side.neighbor.is_none() {
                continue;
            }
            let cs = &g.sides[s];
            let expect = xi.mul_vec(side.normal);
            assert_relative_eq!(cs.conormal.x, expect.x, max_relative = 1e-13);
            assert_relative_eq!(cs.conormal.y, expect.y, max_relative = 1e-13);
            assert_relative_eq!(cs.normal_part, expect.dot(side.normal), max_relative = 1e-13);
            // Each spoke side has one interior flank per adjacent cell
            // (the other flank is the hexagon boundary, dropped).
            assert_eq!(cs.flank.len(), 2);
            for t in &cs.flank {
                assert_eq!(t.alpha, t.proj.signum());
                assert!(t.dual > 0.0);
                // Projection magnitude bounded by |tangential|.
                assert!(t.proj.abs() <= cs.tangential.norm() + 1e-14);
            }
        }
    }

    #[test]
    fn cp2_matrix_coefficients_and_row_sums() {
        let mesh = hexagon_patch();
        let dt = 0.3;
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), dt).unwrap();
        let bcs = natural_bcs(&mesh);
        let g = conormal_geometry(&mesh, &material).unwrap();
        let m = assemble_cp2(&mesh, &g, &bcs, 0).unwrap();
        assert!(m.pinned.is_none());
        assert_eq!(m.non_spd_rows, 0);
        for (s, side) in mesh.sides.iter().enumerate() {
            if let Some((ep, _)) = side.neighbor {
                let w = side.length * dt / side.dual_dist;
                assert_relative_eq!(m.a.get(side.cell, ep), -w, max_relative = 1e-13);
                let _ = s;
            }
        }
        // Interior-only operator has zero row sums; the natural boundary
        // closure adds a positive ghost coefficient on the diagonal.
        for e in 0..mesh.n_cells() {
            let mut row_sum = 0.0;
            for j in 0..mesh.n_cells() {
                row_sum += m.a.get(e, j);
            }
            let bnd: f64 = (0..3)
                .map(|j| {
                    let s = mesh.cell_sides[e][j];
                    if mesh.sides[s].boundary.is_some() {
                        mesh.sides[s].length * dt / mesh.sides[s].dual_dist
                    } else {
                        0.0
                    }
                })
                .sum();
            assert_relative_eq!(row_sum, bnd, max_relative = 1e-12);
        }
    }

    #[test]
    fn cp2_balanced_fluxes_give_zero_correction() {
        let mesh = hexagon_patch();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.1).unwrap();
        let bcs = wall_bcs(&mesh);
        let g = conormal_geometry(&mesh, &material).unwrap();
        let mut m = assemble_cp2(&mesh, &g, &bcs, 0).unwrap();
        assert_eq!(m.pinned, Some(0));
        // Balanced: all fluxes zero (walls prescribe zero).
        let fl = vec![0.0; mesh.sides.len()];
        let psi = vec![0.0; mesh.n_cells()];
        let grads = vec![Vec2::ZERO; mesh.n_cells()];
        let sol = solve_cp2(&mesh, &material, &bcs, &g, &mut m, &fl, &psi, &grads, 1e-12, None)
            .unwrap();
        for e in 0..mesh.n_cells() {
            assert_eq!(sol.eta[e], 0.0);
            assert_eq!(sol.cell_vel[e], Vec2::ZERO);
        }
        assert_eq!(sol.max_imbalance, 0.0);
    }

    #[test]
    fn cp2_redistributes_single_imbalance() {
        let mesh = hexagon_patch();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.1).unwrap();
        let bcs = natural_bcs(&mesh);
        let g = conormal_geometry(&mesh, &material).unwrap();
        let mut m = assemble_cp2(&mesh, &g, &bcs, 0).unwrap();
        // One interior side carries flux; every other flux is zero, so the
        // two adjacent cells are imbalanced.
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        let mut fl = vec![0.0; mesh.sides.len()];
        fl[shared] = 1e-3;
        let psi = vec![0.0; mesh.n_cells()];
        let grads = vec![Vec2::ZERO; mesh.n_cells()];
        let sol = solve_cp2(&mesh, &material, &bcs, &g, &mut m, &fl, &psi, &grads, 1e-12, None)
            .unwrap();
        assert!(sol.max_imbalance <= 1e-10 * 1e-3, "imbalance {}", sol.max_imbalance);
        // Corrections flow somewhere: eta is not identically zero.
        assert!(sol.eta.iter().any(|&v| v.abs() > 0.0));
    }

    #[test]
    fn cp2_natural_ghost_drives_flow() {
        // Pressure difference across a two-cell strip must push fluid from
        // the high-psi side to the low-psi side.
        let mesh = lopsided_pair();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.1).unwrap();
        let mesh2 = lopsided_pair();
        let bcs = ResolvedBcs::resolve(&mesh2, |s, _| {
            let mid = mesh2.sides[s].midpoint;
            if mid.x < 0.0 {
                SideBc::Natural { psi: 1.0 }
            } else {
                SideBc::Natural { psi: 0.0 }
            }
        });
        let g = conormal_geometry(&mesh, &material).unwrap();
        let mut m = assemble_cp2(&mesh, &g, &bcs, 0).unwrap();
        let fl = vec![0.0; mesh.sides.len()];
        let psi = vec![0.0; mesh.n_cells()];
        let grads = vec![Vec2::ZERO; mesh.n_cells()];
        let sol = solve_cp2(&mesh, &material, &bcs, &g, &mut m, &fl, &psi, &grads, 1e-12, None)
            .unwrap();
        // Flow through the shared side toward +x (owner cell 0 is left).
        let shared = mesh.sides.iter().position(|s| s.neighbor.is_some()).unwrap();
        assert!(sol.side_flux[shared] > 0.0, "flux {}", sol.side_flux[shared]);
        assert!(sol.max_imbalance < 1e-12);
    }

    #[test]
    fn pressure_gradient_update_sign_and_arithmetic() {
        // rate = I/dt; increment (0.1, 0) gives a gradient change of
        // -(0.1/dt, 0): the corrected velocity rises where the accumulated
        // pressure gradient falls.
        let mesh = equilateral_pair();
        let dt = 0.2;
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), dt).unwrap();
        let mut grads = vec![Vec2::ZERO; mesh.n_cells()];
        let u_new = vec![Vec2::new(0.1, 0.0); mesh.n_cells()];
        let u_old = vec![Vec2::ZERO; mesh.n_cells()];
        update_pressure_gradient(&material, &mut grads, &u_new, &u_old);
        for g in &grads {
            assert_relative_eq!(g.x, -0.1 / dt, max_relative = 1e-13);
            assert_eq!(g.y, 0.0);
        }
        // No change when the velocities agree.
        let mut grads2 = vec![Vec2::new(3.0, 4.0); mesh.n_cells()];
        update_pressure_gradient(&material, &mut grads2, &u_new, &u_new);
        for g in &grads2 {
            assert_eq!(*g, Vec2::new(3.0, 4.0));
        }
    }

    #[test]
    fn nodal_pressure_zero_gradient_zero_field() {
        let mesh = hexagon_patch();
        let eps = vec![1.0; mesh.n_cells()];
        let grads = vec![Vec2::ZERO; mesh.n_cells()];
        let psi = reconstruct_nodal_pressure(&mesh, &grads, &eps, 0, 0.0).unwrap();
        for v in &psi {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn nodal_pressure_reproduces_linear_fields() {
        let mesh = hexagon_patch();
        let eps = vec![1.0; mesh.n_cells()];
        let (a, b, c) = (0.7, -0.3, 0.45);
        let grads = vec![Vec2::new(a, b); mesh.n_cells()];
        let datum_node = 3;
        let datum_value = a * mesh.nodes[datum_node].x + b * mesh.nodes[datum_node].y + c;
        let psi = reconstruct_nodal_pressure(&mesh, &grads, &eps, datum_node, datum_value).unwrap();
        for (i, p) in mesh.nodes.iter().enumerate() {
            assert_relative_eq!(psi[i], a * p.x + b * p.y + c, epsilon = 1e-10);
        }
    }

    #[test]
    fn right_triangle_boundary_dual_rejected_by_correctors() {
        // Hypotenuse midpoint coincides with the circumcenter, so the
        // essential viscous closure cannot form 1/d.
        let mesh = unit_right_triangle();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-3), 0.1).unwrap();
        let bcs = wall_bcs(&mesh);
        let err = assemble_cp1(&mesh, &material, &bcs).unwrap_err();
        assert!(matches!(err, CorrectorError::DegenerateDual { .. }));
    }
}
