//! Run outputs: legacy ASCII VTK snapshots, line-profile CSV sampling, the
//! per-step diagnostics log and the machine-readable run summary.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::algebra::Vec2;
use crate::material::MaterialField;
use crate::mesh::TriMesh;
use crate::rt0::{divergence, gather_cell_fluxes, velocity_at, FlowState};
use crate::timeloop::StepDiagnostics;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("vtk parse error: {0}")]
    VtkParse(String),
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Legacy ASCII unstructured-grid snapshot: triangle cells with velocity,
/// pressure-increment potential, porosity, inverse-permeability coefficients
/// and cell divergence, plus nodal kinematic pressure. Numbers carry 17
/// significant digits so snapshots reparse bitwise.
pub fn format_vtk(
    mesh: &TriMesh,
    material: &MaterialField,
    state: &FlowState,
    eta: &[f64],
    nodal_psi: &[f64],
) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "# vtk DataFile Version 3.0");
    let _ = writeln!(o, "brinkman2d snapshot t={}", fmt17(state.time));
    let _ = writeln!(o, "ASCII");
    let _ = writeln!(o, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(o, "POINTS {} double", mesh.n_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(o, "{} {} 0.0", fmt17(p.x), fmt17(p.y));
    }
    let _ = writeln!(o, "CELLS {} {}", mesh.n_cells(), 4 * mesh.n_cells());
    for c in &mesh.cells {
        let _ = writeln!(o, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(o, "CELL_TYPES {}", mesh.n_cells());
    for _ in 0..mesh.n_cells() {
        let _ = writeln!(o, "5");
    }
    let _ = writeln!(o, "CELL_DATA {}", mesh.n_cells());
    let _ = writeln!(o, "VECTORS velocity double");
    for u in &state.cell_vel {
        let _ = writeln!(o, "{} {} 0.0", fmt17(u.x), fmt17(u.y));
    }
    let scalars: [(&str, Box<dyn Fn(usize) -> f64>); 6] = [
        ("eta", Box::new(|e| eta[e])),
        ("porosity", Box::new(|e| material.cell_porosity[e])),
        ("Kxx", Box::new(|e| material.cell_inv_perm[e].xx)),
        ("Kxy", Box::new(|e| material.cell_inv_perm[e].xy)),
        ("Kyy", Box::new(|e| material.cell_inv_perm[e].yy)),
        (
            "div_u",
            Box::new(|e| {
                divergence(mesh.areas[e], gather_cell_fluxes(mesh, &state.side_flux, e))
            }),
        ),
    ];
    for (name, f) in &scalars {
        let _ = writeln!(o, "SCALARS {name} double 1");
        let _ = writeln!(o, "LOOKUP_TABLE default");
        for e in 0..mesh.n_cells() {
            let _ = writeln!(o, "{}", fmt17(f(e)));
        }
    }
    let _ = writeln!(o, "POINT_DATA {}", mesh.n_nodes());
    let _ = writeln!(o, "SCALARS Psi double 1");
    let _ = writeln!(o, "LOOKUP_TABLE default");
    for &v in nodal_psi {
        let _ = writeln!(o, "{}", fmt17(v));
    }
    o
}

#[allow(clippy::too_many_arguments)]
pub fn write_vtk(
    mesh: &TriMesh,
    material: &MaterialField,
    state: &FlowState,
    eta: &[f64],
    nodal_psi: &[f64],
    path: &Path,
) -> Result<(), OutputError> {
    std::fs::write(path, format_vtk(mesh, material, state, eta, nodal_psi))?;
    Ok(())
}

/// Minimal VTK reader used by tests and the CI structural check.
#[derive(Debug, Default)]
pub struct VtkSnapshot {
    pub points: Vec<Vec2>,
    pub cells: Vec<[usize; 3]>,
    pub cell_scalars: Vec<(String, Vec<f64>)>,
    pub cell_vectors: Vec<(String, Vec<Vec2>)>,
    pub point_scalars: Vec<(String, Vec<f64>)>,
}

pub fn parse_vtk(text: &str) -> Result<VtkSnapshot, OutputError> {
    let mut snap = VtkSnapshot::default();
    let mut lines = text.lines().peekable();
    let bad = |msg: &str| OutputError::VtkParse(msg.to_string());
    let mut section_cells = 0usize;
    let mut section_points = 0usize;
    while let Some(line) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["POINTS", n, "double"] => {
                let n: usize = n.parse().map_err(|_| bad("bad POINTS count"))?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| bad("file truncated in POINTS"))?;
                    let v: Vec<f64> =
                        l.split_whitespace().map(|t| t.parse().unwrap_or(f64::NAN)).collect();
                    if v.len() != 3 {
                        return Err(bad("POINTS line must have 3 coordinates"));
                    }
                    snap.points.push(Vec2::new(v[0], v[1]));
                }
            }
            ["CELLS", n, _] => {
                let n: usize = n.parse().map_err(|_| bad("bad CELLS count"))?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| bad("file truncated in CELLS"))?;
                    let v: Vec<usize> =
                        l.split_whitespace().map(|t| t.parse().unwrap_or(usize::MAX)).collect();
                    if v.len() != 4 || v[0] != 3 {
                        return Err(bad("only triangle cells supported"));
                    }
                    snap.cells.push([v[1], v[2], v[3]]);
                }
            }
            ["CELL_DATA", n] => {
                section_cells = n.parse().map_err(|_| bad("bad CELL_DATA count"))?;
                section_points = 0;
            }
            ["POINT_DATA", n] => {
                section_points = n.parse().map_err(|_| bad("bad POINT_DATA count"))?;
                section_cells = 0;
            }
            ["VECTORS", name, "double"] => {
                let mut vals = Vec::with_capacity(section_cells);
                for _ in 0..section_cells {
                    let l = lines.next().ok_or_else(|| bad("file truncated in VECTORS"))?;
                    let v: Vec<f64> =
                        l.split_whitespace().map(|t| t.parse().unwrap_or(f64::NAN)).collect();
                    vals.push(Vec2::new(v[0], v[1]));
                }
                snap.cell_vectors.push((name.to_string(), vals));
            }
            ["SCALARS", name, "double", "1"] => {
                let header = lines.next().ok_or_else(|| bad("missing LOOKUP_TABLE"))?;
                if !header.starts_with("LOOKUP_TABLE") {
                    return Err(bad("expected LOOKUP_TABLE"));
                }
                let count = if section_cells > 0 { section_cells } else { section_points };
                let mut vals = Vec::with_capacity(count);
                for _ in 0..count {
                    let l = lines.next().ok_or_else(|| bad("file truncated in SCALARS"))?;
                    vals.push(l.trim().parse().map_err(|_| bad("bad scalar value"))?);
                }
                if section_cells > 0 {
                    snap.cell_scalars.push((name.to_string(), vals));
                } else {
                    snap.point_scalars.push((name.to_string(), vals));
                }
            }
            _ => {}
        }
    }
    Ok(snap)
}

/// One sampled point of a line profile. Fields are None outside the mesh.
#[derive(Clone, Copy, Debug)]
pub struct ProfileRow {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub psi: Option<f64>,
}

/// Sample the flow state along a segment. Velocities come from the RT0
/// reconstruction of the containing cell, the pressure from nodal linear
/// interpolation.
pub fn sample_profile(
    mesh: &TriMesh,
    state: &FlowState,
    nodal_psi: &[f64],
    p0: Vec2,
    p1: Vec2,
    n: usize,
) -> Vec<ProfileRow> {
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        let p = p0 + (p1 - p0).scale(t);
        let s = (p - p0).norm();
        let row = match mesh.locate(p) {
            None => ProfileRow { s, x: p.x, y: p.y, u: None, v: None, psi: None },
            Some(e) => {
                let q = gather_cell_fluxes(mesh, &state.side_flux, e);
                let vel = velocity_at(mesh, e, q, p);
                let tri = mesh.cells[e];
                let [a, b, c] = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
                let full = (b - a).cross(c - a);
                let w0 = (b - p).cross(c - p) / full;
                let w1 = (c - p).cross(a - p) / full;
                let w2 = 1.0 - w0 - w1;
                let psi =
                    w0 * nodal_psi[tri[0]] + w1 * nodal_psi[tri[1]] + w2 * nodal_psi[tri[2]];
                ProfileRow { s, x: p.x, y: p.y, u: Some(vel.x), v: Some(vel.y), psi: Some(psi) }
            }
        };
        rows.push(row);
    }
    rows
}

pub fn write_profile_csv(rows: &[ProfileRow], path: &Path) -> Result<(), OutputError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "s,x,y,u,v,psi")?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{}",
            fmt17(r.s),
            fmt17(r.x),
            fmt17(r.y),
            opt(r.u),
            opt(r.v),
            opt(r.psi)
        )?;
    }
    Ok(())
}

/// Append-style CSV log of per-step diagnostics.
pub struct DiagnosticsLog {
    file: std::fs::File,
}

impl DiagnosticsLog {
    pub fn create(path: &Path) -> Result<Self, OutputError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(
            file,
            "step,time,cfl_max,cp1_iterations,cp1_pcg_iterations,cp2_pcg_iterations,\
             max_divergence,max_flux_imbalance,max_flux_scale,predictor_ode_steps,velocity_change_rate,\
             seconds_rank,seconds_predictor,seconds_cp1,seconds_flux_avg,seconds_cp2"
        )?;
        Ok(DiagnosticsLog { file })
    }

    pub fn append(&mut self, d: &StepDiagnostics) -> Result<(), OutputError> {
        writeln!(
            self.file,
            "{},{},{:.6e},{},{},{},{:.6e},{:.6e},{:.6e},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            d.step,
            d.time,
            d.cfl_max,
            d.cp1_iterations,
            d.cp1_pcg_iterations,
            d.cp2_pcg_iterations,
            d.max_divergence,
            d.max_flux_imbalance,
            d.max_flux_scale,
            d.predictor_ode_steps,
            d.velocity_change_rate,
            d.seconds_rank,
            d.seconds_predictor,
            d.seconds_cp1,
            d.seconds_flux_avg,
            d.seconds_cp2
        )?;
        Ok(())
    }
}

/// Machine-readable end-of-run summary.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub n_cells: usize,
    pub n_nodes: usize,
    pub steps: usize,
    pub final_time: f64,
    pub final_cfl: f64,
    pub final_mass_residual: f64,
    pub final_max_divergence: f64,
    pub steady_reached: bool,
    /// Mean wall-clock seconds per iteration, by stage.
    pub seconds_per_step_rank: f64,
    pub seconds_per_step_predictor: f64,
    pub seconds_per_step_cp1: f64,
    pub seconds_per_step_flux_avg: f64,
    pub seconds_per_step_cp2: f64,
    pub seconds_per_step_total: f64,
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{assemble_material, MaterialSpec};
    use crate::mesh::test_meshes::{hexagon_patch, unit_right_triangle};

    #[test]
    fn vtk_roundtrip_is_bitwise() {
        let mesh = unit_right_triangle();
        let material = assemble_material(&mesh, &MaterialSpec::free_fluid(1e-5), 0.1).unwrap();
        let state = FlowState::zeros(&mesh);
        let eta = vec![0.123456789012345678; 1];
        let psi = vec![1.0 / 3.0; 3];
        let text = format_vtk(&mesh, &material, &state, &eta, &psi);
        let snap = parse_vtk(&text).unwrap();
        assert_eq!(snap.points.len(), 3);
        assert_eq!(snap.cells, vec![[0, 1, 2]]);
        for (p, q) in snap.points.iter().zip(&mesh.nodes) {
            assert_eq!(p, q, "point coordinates must reparse bitwise");
        }
        let eta_back = &snap.cell_scalars.iter().find(|(n, _)| n == "eta").unwrap().1;
        assert_eq!(eta_back[0], eta[0]);
        let psi_back = &snap.point_scalars.iter().find(|(n, _)| n == "Psi").unwrap().1;
        assert_eq!(psi_back, &psi);
        // Structural completeness.
        let names: Vec<&str> =
            snap.cell_scalars.iter().map(|(n, _)| n.as_str()).collect();
        for expect in ["eta", "porosity", "Kxx", "Kxy", "Kyy", "div_u"] {
            assert!(names.contains(&expect), "missing scalar {expect}");
        }
        assert_eq!(snap.cell_vectors[0].0, "velocity");
    }

    #[test]
    fn profile_outside_mesh_is_empty() {
        let mesh = unit_right_triangle();
        let state = FlowState::zeros(&mesh);
        let psi = vec![0.0; 3];
        let rows = sample_profile(
            &mesh,
            &state,
            &psi,
            Vec2::new(5.0, 5.0),
            Vec2::new(6.0, 6.0),
            4,
        );
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.u.is_none() && r.psi.is_none()));
    }

    #[test]
    fn profile_uniform_field_exact() {
        let mesh = hexagon_patch();
        let mut state = FlowState::zeros(&mesh);
        let u = Vec2::new(0.25, -0.5);
        for (s, side) in mesh.sides.iter().enumerate() {
            state.side_flux[s] = u.dot(side.normal) * side.length;
        }
        let psi = vec![0.0; mesh.n_nodes()];
        let c = mesh.circumcenters[0];
        let rows = sample_profile(&mesh, &state, &psi, c, c, 1);
        approx::assert_relative_eq!(rows[0].u.unwrap(), u.x, epsilon = 1e-13);
        approx::assert_relative_eq!(rows[0].v.unwrap(), u.y, epsilon = 1e-13);
    }
}
