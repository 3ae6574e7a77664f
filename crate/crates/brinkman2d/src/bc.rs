//! Boundary conditions resolved onto mesh sides.

use crate::algebra::Vec2;
use crate::mesh::{BoundaryFluxKind, TriMesh};
use crate::predictor::PredictorBc;

/// Condition applied on one boundary side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SideBc {
    /// Prescribed velocity (Dirichlet for the velocity field).
    Essential { velocity: Vec2 },
    /// Prescribed kinematic pressure (boundary stress with viscous terms
    /// neglected).
    Natural { psi: f64 },
    /// Zero normal flux, zero tangential momentum exchange.
    FreeSlip,
}

/// Per-side boundary conditions (None on interior sides).
#[derive(Clone, Debug)]
pub struct ResolvedBcs {
    pub sides: Vec<Option<SideBc>>,
}

impl ResolvedBcs {
    /// Resolve with a per-side closure receiving the side's boundary tag.
    pub fn resolve(
        mesh: &TriMesh,
        mut f: impl FnMut(usize, &str) -> SideBc,
    ) -> Self {
        let sides = mesh
            .sides
            .iter()
            .enumerate()
            .map(|(s, side)| side.boundary.map(|tag| f(s, &mesh.boundary_tags[tag])))
            .collect();
        ResolvedBcs { sides }
    }

    pub fn get(&self, side: usize) -> Option<SideBc> {
        self.sides[side]
    }

    /// Prescribed boundary flux through side `s` (owner orientation), if the
    /// condition fixes one.
    pub fn prescribed_flux(&self, mesh: &TriMesh, s: usize) -> Option<f64> {
        match self.sides[s] {
            Some(SideBc::Essential { velocity }) => {
                Some(velocity.dot(mesh.sides[s].normal) * mesh.sides[s].length)
            }
            Some(SideBc::FreeSlip) => Some(0.0),
            _ => None,
        }
    }

    /// Classification used by the cell-ranking pass.
    pub fn flux_kind(&self, mesh: &TriMesh, s: usize) -> BoundaryFluxKind {
        match self.sides[s] {
            Some(SideBc::Essential { velocity }) => {
                if velocity.dot(mesh.sides[s].normal) < 0.0 {
                    BoundaryFluxKind::Inflow
                } else {
                    BoundaryFluxKind::Open
                }
            }
            Some(SideBc::Natural { .. }) => BoundaryFluxKind::Open,
            Some(SideBc::FreeSlip) => BoundaryFluxKind::Sealed,
            None => BoundaryFluxKind::Open,
        }
    }

    /// View used by the predictor sweeps.
    pub fn predictor_bc(&self, s: usize) -> PredictorBc {
        match self.sides[s] {
            Some(SideBc::Essential { velocity }) => PredictorBc::Velocity(velocity),
            Some(SideBc::Natural { .. }) | None => PredictorBc::Open,
            Some(SideBc::FreeSlip) => PredictorBc::Sealed,
        }
    }

    pub fn has_natural(&self) -> bool {
        self.sides.iter().any(|b| matches!(b, Some(SideBc::Natural { .. })))
    }
}
