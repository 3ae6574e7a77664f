//! Porosity and inverse-permeability fields with transition-layer profiles,
//! and the per-cell / per-side matrices the three solver stages consume.
//!
//! Conventions: the signed transition-layer distance `d` is positive on the
//! free-fluid side, so porosity tends to 1 and the inverse permeability to 0
//! away from the porous bulk.

use thiserror::Error;

use crate::algebra::{Mat2, Vec2};
use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("permeability must be positive (k = {k})")]
    NonPositivePermeability { k: f64 },
    #[error("anisotropy ratio must be >= 1 (beta = {beta})")]
    BadAnisotropyRatio { beta: f64 },
    #[error("invalid transition layer: {0}")]
    BadTransitionLayer(String),
    #[error("cell {cell}: step matrix numerically singular")]
    SingularM0 { cell: usize },
}

/// Bulk permeability tensor given by scalar permeability, anisotropy ratio
/// and rotation angle.
#[derive(Clone, Copy, Debug)]
pub struct AnisotropySpec {
    /// Scalar permeability [m^2] (the larger principal value).
    pub k: f64,
    /// Anisotropy ratio (>= 1); the smaller principal value is k / beta.
    pub beta: f64,
    /// Rotation of the principal axes [rad].
    pub alpha: f64,
}

impl AnisotropySpec {
    pub fn isotropic(k: f64) -> Self {
        AnisotropySpec { k, beta: 1.0, alpha: 0.0 }
    }
}

/// Permeability tensor and its inverse for a bulk porous region.
#[derive(Clone, Copy, Debug)]
pub struct BulkPermeability {
    pub tensor: Mat2,
    pub inverse: Mat2,
}

/// K = R diag(k/beta, k) R^-1 and its closed-form inverse.
pub fn build_anisotropy(spec: &AnisotropySpec) -> Result<BulkPermeability, MaterialError> {
    if !(spec.k > 0.0) {
        return Err(MaterialError::NonPositivePermeability { k: spec.k });
    }
    if !(spec.beta >= 1.0) {
        return Err(MaterialError::BadAnisotropyRatio { beta: spec.beta });
    }
    let r = Mat2::rotation(spec.alpha);
    let tensor = r.mul_mat(Mat2::diag(spec.k / spec.beta, spec.k)).mul_mat(r.transpose());
    let inverse = r.mul_mat(Mat2::diag(spec.beta / spec.k, 1.0 / spec.k)).mul_mat(r.transpose());
    Ok(BulkPermeability { tensor, inverse })
}

/// Geometry of a transition-layer centerline.
#[derive(Clone, Debug)]
pub enum TlGeometry {
    /// Closed rectangle contour (porous inside, fluid outside); the signed
    /// distance is positive outside the rectangle.
    RectContour { min: Vec2, max: Vec2 },
    /// Horizontal line y = level; `fluid_below` selects which half-plane is
    /// the free-fluid side.
    HorizontalLine { level: f64, fluid_below: bool },
}

impl TlGeometry {
    /// Signed distance to the centerline (positive on the free-fluid side)
    /// and its gradient. The gradient is the unit direction toward the fluid
    /// side; at rectangle corners the diagonal direction is used.
    pub fn signed_distance(&self, p: Vec2) -> (f64, Vec2) {
        match *self {
            TlGeometry::HorizontalLine { level, fluid_below } => {
                if fluid_below {
                    (level - p.y, Vec2::new(0.0, -1.0))
                } else {
                    (p.y - level, Vec2::new(0.0, 1.0))
                }
            }
            TlGeometry::RectContour { min, max } => {
                let dx = (min.x - p.x).max(p.x - max.x);
                let dy = (min.y - p.y).max(p.y - max.y);
                if dx <= 0.0 && dy <= 0.0 {
                    // Inside: distance to the nearest face, pointing outward.
                    let to_left = p.x - min.x;
                    let to_right = max.x - p.x;
                    let to_bottom = p.y - min.y;
                    let to_top = max.y - p.y;
                    let m = to_left.min(to_right).min(to_bottom).min(to_top);
                    let grad = if m == to_left {
                        Vec2::new(-1.0, 0.0)
                    } else if m == to_right {
                        Vec2::new(1.0, 0.0)
                    } else if m == to_bottom {
                        Vec2::new(0.0, -1.0)
                    } else {
                        Vec2::new(0.0, 1.0)
                    };
                    (-m, grad)
                } else {
                    let gx = dx.max(0.0) * (p.x - 0.5 * (min.x + max.x)).signum();
                    let gy = dy.max(0.0) * (p.y - 0.5 * (min.y + max.y)).signum();
                    let v = Vec2::new(gx, gy);
                    let d = v.norm();
                    (d, if d > 0.0 { v.scale(1.0 / d) } else { Vec2::new(1.0, 0.0) })
                }
            }
        }
    }
}

/// Shape of the porosity / inverse-permeability profiles across the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    /// Hyperbolic-tangent profiles, globally smooth.
    Tanh,
    /// Piecewise-linear ramp across the layer width, clamped outside.
    Linear,
}

/// One porous region: bulk values plus the transition-layer profile that
/// blends them into the surrounding free fluid.
#[derive(Clone, Debug)]
pub struct TransitionLayerSpec {
    pub geometry: TlGeometry,
    /// Transition-layer width [m].
    pub d_tl: f64,
    /// Profile shift for porosity [m] (positive shifts toward the fluid).
    pub d_eps: f64,
    /// Profile shift for inverse permeability [m].
    pub d_k: f64,
    /// Porosity profile slope [1/m].
    pub theta_eps: f64,
    /// Inverse-permeability profile slope [1/m].
    pub theta_k: f64,
    /// Bulk porosity of the porous region.
    pub eps0: f64,
    /// Bulk inverse-permeability tensor [1/m^2].
    pub inv_perm0: Mat2,
    pub kind: ProfileKind,
}

impl TransitionLayerSpec {
    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return Err(MaterialError::BadTransitionLayer(format!(
                "bulk porosity must lie in (0, 1], got {}",
                self.eps0
            )));
        }
        if self.kind == ProfileKind::Tanh && !(self.theta_eps > 0.0 && self.theta_k > 0.0) {
            return Err(MaterialError::BadTransitionLayer(
                "profile slopes must be positive".into(),
            ));
        }
        if !(self.d_tl > 0.0) {
            return Err(MaterialError::BadTransitionLayer("layer width must be positive".into()));
        }
        if !self.inv_perm0.is_symmetric(1e-12) {
            return Err(MaterialError::BadTransitionLayer(
                "bulk inverse permeability must be symmetric".into(),
            ));
        }
        Ok(())
    }
}

/// Signed distance of `x` from the layer centerline, positive on the fluid side.
pub fn signed_tl_distance(x: Vec2, tl: &TransitionLayerSpec) -> f64 {
    tl.geometry.signed_distance(x).0
}

/// Porosity profile value at `x`.
pub fn porosity_at(x: Vec2, tl: &TransitionLayerSpec) -> f64 {
    let d = signed_tl_distance(x, tl);
    match tl.kind {
        ProfileKind::Tanh => {
            0.5 * (1.0 - tl.eps0) * ((d + tl.d_eps) * tl.theta_eps).tanh() + 0.5 * (1.0 + tl.eps0)
        }
        ProfileKind::Linear => {
            // eps0 at the porous edge (d = -d_tl/2), 1 at the fluid edge.
            let t = ((d + tl.d_eps) / tl.d_tl + 0.5).clamp(0.0, 1.0);
            tl.eps0 + (1.0 - tl.eps0) * t
        }
    }
}

/// Inverse-permeability tensor profile value at `x`.
pub fn inv_perm_at(x: Vec2, tl: &TransitionLayerSpec) -> Mat2 {
    tl.inv_perm0.scale(inv_perm_factor_at(x, tl))
}

/// Scalar profile factor multiplying the bulk inverse-permeability tensor.
pub fn inv_perm_factor_at(x: Vec2, tl: &TransitionLayerSpec) -> f64 {
    let d = signed_tl_distance(x, tl);
    match tl.kind {
        ProfileKind::Tanh => 0.5 * (1.0 - ((d + tl.d_k) * tl.theta_k).tanh()),
        ProfileKind::Linear => 1.0 - ((d + tl.d_k) / tl.d_tl + 0.5).clamp(0.0, 1.0),
    }
}

/// Derivative of the porosity profile with respect to the signed distance.
pub fn porosity_slope_at(x: Vec2, tl: &TransitionLayerSpec) -> f64 {
    let d = signed_tl_distance(x, tl);
    match tl.kind {
        ProfileKind::Tanh => {
            let s = ((d + tl.d_eps) * tl.theta_eps).cosh();
            0.5 * (1.0 - tl.eps0) * tl.theta_eps / (s * s)
        }
        ProfileKind::Linear => {
            let t = (d + tl.d_eps) / tl.d_tl + 0.5;
            if (0.0..=1.0).contains(&t) {
                (1.0 - tl.eps0) / tl.d_tl
            } else {
                0.0
            }
        }
    }
}

/// Full material description: kinematic viscosity plus porous regions.
/// With no regions the domain is pure free fluid.
#[derive(Clone, Debug)]
pub struct MaterialSpec {
    /// Kinematic viscosity [m^2/s].
    pub nu: f64,
    pub regions: Vec<TransitionLayerSpec>,
}

impl MaterialSpec {
    pub fn free_fluid(nu: f64) -> Self {
        MaterialSpec { nu, regions: Vec::new() }
    }

    /// Pointwise porosity; multiple regions combine by taking the minimum.
    pub fn porosity(&self, x: Vec2) -> f64 {
        self.regions.iter().map(|tl| porosity_at(x, tl)).fold(1.0, f64::min)
    }

    /// Pointwise inverse permeability; multiple regions add their drag.
    pub fn inv_perm(&self, x: Vec2) -> Mat2 {
        self.regions
            .iter()
            .map(|tl| inv_perm_at(x, tl))
            .fold(Mat2::ZERO, |acc, m| acc.add_mat(m))
    }

    /// Gradient of the porosity field (for analytic source terms).
    pub fn porosity_gradient(&self, x: Vec2) -> Vec2 {
        // The minimum combiner picks the dominating region.
        let mut best = (1.0, Vec2::ZERO);
        for tl in &self.regions {
            let v = porosity_at(x, tl);
            if v < best.0 {
                let (_, grad_d) = tl.geometry.signed_distance(x);
                best = (v, grad_d.scale(porosity_slope_at(x, tl)));
            }
        }
        best.1
    }
}

/// Assembled per-cell and per-side material data for a fixed time step.
#[derive(Clone, Debug)]
pub struct MaterialField {
    pub nu: f64,
    pub dt: f64,
    /// Nodal porosity samples.
    pub node_porosity: Vec<f64>,
    /// Nodal inverse-permeability samples.
    pub node_inv_perm: Vec<Mat2>,
    pub cell_porosity: Vec<f64>,
    pub cell_inv_perm: Vec<Mat2>,
    /// Per cell: drag rate tensor nu * eps * inv_perm [1/s].
    pub cell_drag: Vec<Mat2>,
    /// Per cell: damping = I + drag * dt.
    pub cell_damping: Vec<Mat2>,
    pub cell_damping_inv: Vec<Mat2>,
    pub side_porosity: Vec<f64>,
    pub side_damping_inv: Vec<Mat2>,
    /// Per side: mobility = eps * (damping / dt)^-1 [s]; maps pressure
    /// increments to velocity corrections in the continuity corrector.
    pub side_mobility: Vec<Mat2>,
    /// True if any cell has off-diagonal damping (couples the CP1 systems).
    pub anisotropic_coupling: bool,
}

impl MaterialField {
    /// Per-cell damping / dt (the rate matrix used by both correctors).
    pub fn cell_rate(&self, e: usize) -> Mat2 {
        self.cell_damping[e].scale(1.0 / self.dt)
    }
}

/// Sample the material spec on the mesh and precompute stage matrices.
pub fn assemble_material(
    mesh: &TriMesh,
    spec: &MaterialSpec,
    dt: f64,
) -> Result<MaterialField, MaterialError> {
    assert!(spec.nu > 0.0, "kinematic viscosity must be positive");
    assert!(dt > 0.0, "time step must be positive");
    for tl in &spec.regions {
        tl.validate()?;
    }

    let node_porosity: Vec<f64> = mesh.nodes.iter().map(|&p| spec.porosity(p)).collect();
    let node_inv_perm: Vec<Mat2> = mesh.nodes.iter().map(|&p| spec.inv_perm(p)).collect();

    let n_cells = mesh.n_cells();
    let mut cell_porosity = Vec::with_capacity(n_cells);
    let mut cell_inv_perm = Vec::with_capacity(n_cells);
    let mut cell_drag = Vec::with_capacity(n_cells);
    let mut cell_damping = Vec::with_capacity(n_cells);
    let mut cell_damping_inv = Vec::with_capacity(n_cells);
    let mut anisotropic_coupling = false;

    for (e, tri) in mesh.cells.iter().enumerate() {
        let eps = (node_porosity[tri[0]] + node_porosity[tri[1]] + node_porosity[tri[2]]) / 3.0;
        let kk = node_inv_perm[tri[0]]
            .add_mat(node_inv_perm[tri[1]])
            .add_mat(node_inv_perm[tri[2]])
            .scale(1.0 / 3.0);
        let drag = kk.scale(spec.nu * eps);
        let damping = Mat2::IDENTITY.add_mat(drag.scale(dt));
        let damping_inv = damping.inverse().ok_or(MaterialError::SingularM0 { cell: e })?;
        if drag.xy != 0.0 || drag.yx != 0.0 {
            anisotropic_coupling = true;
        }
        cell_porosity.push(eps);
        cell_inv_perm.push(kk);
        cell_drag.push(drag);
        cell_damping.push(damping);
        cell_damping_inv.push(damping_inv);
    }

    let n_sides = mesh.sides.len();
    let mut side_porosity = Vec::with_capacity(n_sides);
    let mut side_damping_inv = Vec::with_capacity(n_sides);
    let mut side_mobility = Vec::with_capacity(n_sides);
    for side in &mesh.sides {
        let [a, b] = side.nodes;
        let eps = 0.5 * (node_porosity[a] + node_porosity[b]);
        let kk = node_inv_perm[a].add_mat(node_inv_perm[b]).scale(0.5);
        let damping = Mat2::IDENTITY.add_mat(kk.scale(spec.nu * eps * dt));
        let damping_inv = damping
            .inverse()
            .ok_or(MaterialError::SingularM0 { cell: side.cell })?;
        side_porosity.push(eps);
        side_damping_inv.push(damping_inv);
        // mobility = eps * (damping/dt)^-1 = eps * dt * damping^-1
        side_mobility.push(damping_inv.scale(eps * dt));
    }

    Ok(MaterialField {
        nu: spec.nu,
        dt,
        node_porosity,
        node_inv_perm,
        cell_porosity,
        cell_inv_perm,
        cell_drag,
        cell_damping,
        cell_damping_inv,
        side_porosity,
        side_damping_inv,
        side_mobility,
        anisotropic_coupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::test_meshes::equilateral_pair;
    use approx::assert_relative_eq;

    fn block_tl() -> TransitionLayerSpec {
        TransitionLayerSpec {
            geometry: TlGeometry::RectContour { min: Vec2::new(0.52, 0.52), max: Vec2::new(1.48, 1.48) },
            d_tl: 0.04,
            d_eps: 0.0,
            d_k: 0.0,
            theta_eps: 200.0,
            theta_k: 200.0,
            eps0: 0.4,
            inv_perm0: Mat2::diag(1e6, 1e6),
            kind: ProfileKind::Tanh,
        }
    }

    #[test]
    fn anisotropy_axis_aligned() {
        let b = build_anisotropy(&AnisotropySpec { k: 1e-6, beta: 100.0, alpha: 0.0 }).unwrap();
        assert_relative_eq!(b.tensor.xx, 1e-8, max_relative = 1e-14);
        assert_relative_eq!(b.tensor.yy, 1e-6, max_relative = 1e-14);
        assert!(b.tensor.xy.abs() < 1e-20);
    }

    #[test]
    fn anisotropy_rotated_quarter_pi() {
        let b = build_anisotropy(&AnisotropySpec {
            k: 1e-6,
            beta: 100.0,
            alpha: -std::f64::consts::FRAC_PI_4,
        })
        .unwrap();
        // Direct evaluation with cos^2 = sin^2 = 1/2.
        assert_relative_eq!(b.tensor.xx, 5.05e-7, max_relative = 1e-12);
        assert_relative_eq!(b.tensor.yy, 5.05e-7, max_relative = 1e-12);
        assert_relative_eq!(b.tensor.xy, 4.95e-7, max_relative = 1e-12);
        assert_relative_eq!(b.tensor.yx, 4.95e-7, max_relative = 1e-12);
    }

    #[test]
    fn anisotropy_isotropic_rotation_invariant() {
        let b = build_anisotropy(&AnisotropySpec { k: 1e-6, beta: 1.0, alpha: 0.83 }).unwrap();
        assert_relative_eq!(b.tensor.xx, 1e-6, max_relative = 1e-13);
        assert_relative_eq!(b.tensor.yy, 1e-6, max_relative = 1e-13);
        assert!(b.tensor.xy.abs() < 1e-20 + 1e-13 * 1e-6);
    }

    #[test]
    fn anisotropy_inverse_roundtrip() {
        let b = build_anisotropy(&AnisotropySpec { k: 3.7e-5, beta: 12.0, alpha: 0.31 }).unwrap();
        let id = b.tensor.mul_mat(b.inverse);
        assert_relative_eq!(id.xx, 1.0, max_relative = 1e-12);
        assert_relative_eq!(id.yy, 1.0, max_relative = 1e-12);
        assert!(id.xy.abs() < 1e-12 && id.yx.abs() < 1e-12);
        assert!(b.tensor.is_symmetric(1e-14));
        assert!(b.inverse.is_symmetric(1e-14));
    }

    #[test]
    fn rejects_bad_permeability() {
        assert!(build_anisotropy(&AnisotropySpec { k: 0.0, beta: 2.0, alpha: 0.0 }).is_err());
        assert!(build_anisotropy(&AnisotropySpec { k: 1.0, beta: 0.5, alpha: 0.0 }).is_err());
    }

    #[test]
    fn signed_distance_signs() {
        let tl = block_tl();
        // Centerline.
        assert_relative_eq!(signed_tl_distance(Vec2::new(0.52, 1.0), &tl), 0.0, epsilon = 1e-15);
        // Fluid side (outside the block) is positive.
        assert!(signed_tl_distance(Vec2::new(0.1, 1.0), &tl) > 0.0);
        // Porous bulk is negative.
        assert!(signed_tl_distance(Vec2::new(1.0, 1.0), &tl) < 0.0);
    }

    #[test]
    fn porosity_profile_values() {
        let mut tl = block_tl();
        tl.theta_eps = 5.0 / (0.04 / 2.0); // theta * d_tl/2 = 5
        // d = 0 on the centerline: (1 + eps0) / 2.
        assert_relative_eq!(porosity_at(Vec2::new(0.52, 1.0), &tl), 0.7, epsilon = 1e-14);
        // Fluid-edge value: 0.7 + 0.3 tanh(5).
        let edge = Vec2::new(0.52 - 0.02, 1.0);
        assert_relative_eq!(
            porosity_at(edge, &tl),
            0.7 + 0.3 * 5.0_f64.tanh(),
            epsilon = 1e-12
        );
        // Deep fluid and deep porous limits.
        assert_relative_eq!(porosity_at(Vec2::new(-5.0, 1.0), &tl), 1.0, epsilon = 1e-12);
        assert_relative_eq!(porosity_at(Vec2::new(1.0, 1.0), &tl), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn inv_perm_profile_values() {
        let tl = block_tl();
        let mid = inv_perm_at(Vec2::new(0.52, 1.0), &tl);
        assert_relative_eq!(mid.xx, 0.5e6, max_relative = 1e-12);
        let fluid = inv_perm_at(Vec2::new(-10.0, 1.0), &tl);
        assert!(fluid.max_abs() < 1e-6);
        let porous = inv_perm_at(Vec2::new(1.0, 1.0), &tl);
        assert_relative_eq!(porous.xx, 1e6, max_relative = 1e-9);
    }

    #[test]
    fn steeper_slope_saturates_faster() {
        let tl = block_tl();
        let mut tl2 = block_tl();
        tl2.theta_eps *= 2.0;
        for frac in [0.2, 0.5, 1.0] {
            let p = Vec2::new(0.52 - frac * 0.02, 1.0); // fluid side, d > 0
            let gap = (porosity_at(p, &tl) - 1.0).abs();
            let gap2 = (porosity_at(p, &tl2) - 1.0).abs();
            assert!(gap2 <= gap);
        }
    }

    #[test]
    fn assemble_free_fluid_matrices() {
        let mesh = equilateral_pair();
        let spec = MaterialSpec::free_fluid(1.5e-5);
        let f = assemble_material(&mesh, &spec, 0.1).unwrap();
        for e in 0..mesh.n_cells() {
            assert_eq!(f.cell_damping[e], Mat2::IDENTITY);
            let rate = f.cell_rate(e);
            assert_relative_eq!(rate.xx, 10.0, max_relative = 1e-14);
        }
        for s in 0..mesh.sides.len() {
            assert_relative_eq!(f.side_mobility[s].xx, 0.1, max_relative = 1e-14);
            assert!(f.side_mobility[s].xy.abs() < 1e-18);
        }
    }

    #[test]
    fn assemble_isotropic_porous_matrices() {
        // Uniform eps = 0.4, inv_perm = 1e6 I via a huge porous region.
        let mesh = equilateral_pair();
        let tl = TransitionLayerSpec {
            geometry: TlGeometry::RectContour {
                min: Vec2::new(-100.0, -100.0),
                max: Vec2::new(100.0, 100.0),
            },
            d_tl: 1.0,
            d_eps: 0.0,
            d_k: 0.0,
            theta_eps: 50.0,
            theta_k: 50.0,
            eps0: 0.4,
            inv_perm0: Mat2::diag(1e6, 1e6),
            kind: ProfileKind::Tanh,
        };
        let spec = MaterialSpec { nu: 1.5e-5, regions: vec![tl] };
        let f = assemble_material(&mesh, &spec, 1.0).unwrap();
        // nu * eps * K = 1.5e-5 * 0.4 * 1e6 = 6.0
        assert_relative_eq!(f.cell_drag[0].xx, 6.0, max_relative = 1e-9);
        assert_relative_eq!(f.cell_damping[0].xx, 7.0, max_relative = 1e-9);
        let xi = f.side_mobility[0];
        assert_relative_eq!(xi.xx, 0.4 / 7.0, max_relative = 1e-9);
    }

    #[test]
    fn anisotropic_mobility_is_spd() {
        let mesh = equilateral_pair();
        let b = build_anisotropy(&AnisotropySpec {
            k: 1e-6,
            beta: 100.0,
            alpha: -std::f64::consts::FRAC_PI_4,
        })
        .unwrap();
        let tl = TransitionLayerSpec {
            geometry: TlGeometry::RectContour {
                min: Vec2::new(-100.0, -100.0),
                max: Vec2::new(100.0, 100.0),
            },
            d_tl: 1.0,
            d_eps: 0.0,
            d_k: 0.0,
            theta_eps: 50.0,
            theta_k: 50.0,
            eps0: 0.4,
            inv_perm0: b.inverse,
            kind: ProfileKind::Tanh,
        };
        let spec = MaterialSpec { nu: 1.5e-5, regions: vec![tl] };
        let f = assemble_material(&mesh, &spec, 0.225).unwrap();
        for s in 0..mesh.sides.len() {
            let xi = f.side_mobility[s];
            assert!(xi.is_symmetric(1e-10));
            let (lo, hi) = xi.sym_eigenvalues();
            assert!(lo > 0.0);
            // Eigenvalues bounded by eps * dt.
            assert!(hi <= f.side_porosity[s] * 0.225 * (1.0 + 1e-12));
        }
        for e in 0..mesh.n_cells() {
            let (lo, _) = f.cell_damping[e].sym_eigenvalues();
            assert!(lo >= 1.0 - 1e-12, "damping eigenvalues must stay >= 1");
        }
    }
}
