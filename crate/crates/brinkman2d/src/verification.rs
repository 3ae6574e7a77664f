//! Reference solutions and measurement utilities for the verification
//! studies: a manufactured potential-flow-type field with an anisotropy
//! tensor and matching momentum source, a 1D Stokes-Brinkman channel oracle,
//! discrete error norms, convergence rates and CPU-scaling fits.

use thiserror::Error;

use crate::algebra::{Mat2, Vec2};
use crate::material::MaterialSpec;
use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error("channel oracle: singular tridiagonal system")]
    SingularBvp,
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("manufactured field failed its divergence check: {0}")]
    NotDivergenceFree(f64),
}

/// Quadratic pressure field with a velocity built from a constant tensor,
/// plus a radial term sized to keep the field exactly divergence-free.
#[derive(Clone, Debug)]
pub struct ManufacturedSolution {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    /// Velocity tensor (dimensionless principal structure of the
    /// permeability tensor).
    pub tensor: Mat2,
    /// Coefficient of the divergence-compensating radial term.
    pub div_fix: f64,
}

impl ManufacturedSolution {
    pub fn new(
        coeffs: [f64; 6],
        tensor: Mat2,
    ) -> Result<ManufacturedSolution, VerificationError> {
        let [a1, b1, c1, a2, b2, c2] = coeffs;
        let div_fix = c1 * tensor.xx + c2 * tensor.yy;
        let sol = ManufacturedSolution { a1, b1, c1, a2, b2, c2, tensor, div_fix };
        // Numeric check at a few points: the field must be solenoidal.
        for p in [Vec2::new(0.3, 1.7), Vec2::new(1.9, 0.1), Vec2::new(0.77, 0.77)] {
            let h = 1e-4;
            let dudx =
                (sol.velocity(p + Vec2::new(h, 0.0)).x - sol.velocity(p - Vec2::new(h, 0.0)).x)
                    / (2.0 * h);
            let dvdy =
                (sol.velocity(p + Vec2::new(0.0, h)).y - sol.velocity(p - Vec2::new(0.0, h)).y)
                    / (2.0 * h);
            let div = dudx + dvdy;
            let scale = sol.velocity(p).norm().max(1e-12);
            if div.abs() > 1e-9 * scale.max(1.0) {
                return Err(VerificationError::NotDivergenceFree(div));
            }
        }
        Ok(sol)
    }

    pub fn psi(&self, p: Vec2) -> f64 {
        self.a1 + self.b1 * p.x + self.c1 * p.x * p.x + self.a2 + self.b2 * p.y
            + self.c2 * p.y * p.y
    }

    pub fn grad_psi(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.b1 + 2.0 * self.c1 * p.x, self.b2 + 2.0 * self.c2 * p.y)
    }

    /// Exact velocity: -tensor * grad(psi) + div_fix * (x, y).
    pub fn velocity(&self, p: Vec2) -> Vec2 {
        self.tensor.mul_vec(self.grad_psi(p)).scale(-1.0) + p.scale(self.div_fix)
    }

    /// Constant velocity Jacobian (d u_i / d x_j).
    pub fn velocity_jacobian(&self) -> Mat2 {
        Mat2::new(
            -2.0 * self.c1 * self.tensor.xx + self.div_fix,
            -2.0 * self.c2 * self.tensor.xy,
            -2.0 * self.c1 * self.tensor.yx,
            -2.0 * self.c2 * self.tensor.yy + self.div_fix,
        )
    }

    /// Steady momentum residual of the exact field under the given material:
    /// f = u.grad(u/eps) + eps grad(psi) + nu eps K u (the exact velocity is
    /// linear, so its Laplacian vanishes). Feeding this back as a body force
    /// makes the exact field a steady solution.
    pub fn body_force(&self, material: &MaterialSpec, p: Vec2) -> Vec2 {
        let u = self.velocity(p);
        let eps = material.porosity(p);
        let grad_eps = material.porosity_gradient(p);
        let j = self.velocity_jacobian();
        let conv = j.mul_vec(u).scale(1.0 / eps) - u.scale(u.dot(grad_eps) / (eps * eps));
        let pressure = self.grad_psi(p).scale(eps);
        let drag = material.inv_perm(p).mul_vec(u).scale(material.nu * eps);
        conv + pressure + drag
    }

    /// Exact side fluxes on a mesh (edge midpoint rule, exact for a linear
    /// velocity field).
    pub fn side_fluxes(&self, mesh: &TriMesh) -> Vec<f64> {
        mesh.sides
            .iter()
            .map(|s| self.velocity(s.midpoint).dot(s.normal) * s.length)
            .collect()
    }
}

/// 1D Stokes-Brinkman channel: nu u'' - nu u / K(y) + g = 0 on (0, H) with
/// no-slip walls; K is infinite in the bottom clear-fluid layer, drops
/// linearly (in 1/K) across the transition band and is K0 in the porous top
/// layer.
#[derive(Clone, Debug)]
pub struct ChannelOracle {
    pub height: f64,
    /// Clear-fluid fraction (layer boundary at zeta * H).
    pub zeta: f64,
    /// Porous-bulk fraction start (layer boundary at xi * H).
    pub xi: f64,
    /// Bulk permeability [m^2].
    pub k0: f64,
    /// Kinematic pressure gradient magnitude [m/s^2].
    pub g: f64,
    pub nu: f64,
    /// Grid values of the solution (uniform spacing, walls included).
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl ChannelOracle {
    /// Inverse permeability profile [1/m^2].
    pub fn inv_perm(&self, y: f64) -> f64 {
        let (a, b) = (self.zeta * self.height, self.xi * self.height);
        if y <= a {
            0.0
        } else if y >= b {
            1.0 / self.k0
        } else {
            (y - a) / ((b - a) * self.k0)
        }
    }

    /// Componentwise relative (backward) residual of the discrete BVP:
    /// max_i |r_i| / (sum of absolute row terms), the scale-insensitive
    /// measure of how well the stored values satisfy the equations.
    pub fn residual(&self) -> f64 {
        let n = self.y.len();
        let h = self.height / (n - 1) as f64;
        let inv_h2 = 1.0 / (h * h);
        let mut worst = 0.0_f64;
        for i in 1..n - 1 {
            let lap = (self.u[i - 1] - 2.0 * self.u[i] + self.u[i + 1]) * inv_h2;
            let drag = self.nu * self.inv_perm(self.y[i]) * self.u[i];
            let r = self.nu * lap - drag + self.g;
            let denom = self.nu
                * (self.u[i - 1].abs() + 2.0 * self.u[i].abs() + self.u[i + 1].abs())
                * inv_h2
                + drag.abs()
                + self.g.abs();
            worst = worst.max(r.abs() / denom.max(f64::MIN_POSITIVE));
        }
        worst
    }

    /// Linear interpolation of the profile.
    pub fn sample(&self, y: f64) -> f64 {
        let n = self.y.len();
        let h = self.height / (n - 1) as f64;
        let t = (y / h).clamp(0.0, (n - 1) as f64);
        let i = (t as usize).min(n - 2);
        let frac = t - i as f64;
        self.u[i] * (1.0 - frac) + self.u[i + 1] * frac
    }
}

/// Solve the channel BVP with a second-order finite-difference scheme on
/// `n` intervals (n + 1 points).
pub fn solve_channel_oracle(
    height: f64,
    zeta: f64,
    xi: f64,
    k0: f64,
    g: f64,
    nu: f64,
    n: usize,
) -> Result<ChannelOracle, VerificationError> {
    assert!(n >= 16, "oracle grid too coarse");
    let mut oracle = ChannelOracle {
        height,
        zeta,
        xi,
        k0,
        g,
        nu,
        y: (0..=n).map(|i| height * i as f64 / n as f64).collect(),
        u: vec![0.0; n + 1],
    };
    let h = height / n as f64;
    let m = n - 1; // interior unknowns
    let mut diag = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let y = oracle.y[i + 1];
        diag[i] = -2.0 / (h * h) - oracle.inv_perm(y);
        lower[i] = 1.0 / (h * h);
        upper[i] = 1.0 / (h * h);
        rhs[i] = -g / nu;
    }
    // Thomas algorithm.
    for i in 1..m {
        if diag[i - 1] == 0.0 {
            return Err(VerificationError::SingularBvp);
        }
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if diag[m - 1] == 0.0 {
        return Err(VerificationError::SingularBvp);
    }
    let mut u = vec![0.0; m];
    u[m - 1] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        u[i] = (rhs[i] - upper[i] * u[i + 1]) / diag[i];
    }
    oracle.u[1..=m].copy_from_slice(&u);
    Ok(oracle)
}

/// Weighted L2 norm of the pointwise error: sqrt(sum w (a - b)^2).
pub fn l2_error(numeric: &[f64], exact: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(numeric.len(), exact.len());
    assert_eq!(numeric.len(), weights.len());
    numeric
        .iter()
        .zip(exact)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Spatial convergence rate from two refinement levels.
pub fn convergence_rate(err_coarse: f64, err_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    assert!(err_coarse > 0.0 && err_fine > 0.0 && h_coarse > h_fine);
    (err_coarse / err_fine).ln() / (h_coarse / h_fine).ln()
}

/// Least-squares fit of ln(cpu) = c + omega ln(n); returns (c, omega, r^2).
pub fn cpu_scaling_fit(samples: &[(f64, f64)]) -> Result<(f64, f64, f64), VerificationError> {
    if samples.len() < 3 {
        return Err(VerificationError::InsufficientSamples { need: 3, got: samples.len() });
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let omega = (n * sxy - sx * sy) / denom;
    let c = (sy - omega * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - (c + omega * p.0)).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((c, omega, r2))
}
