//! Delaunay mesh generation for rectangular domains with graded refinement
//! bands: boundary points are spaced by a sizing field, the interior is
//! filled with a variable-radius Poisson-disk sample, and the point set is
//! triangulated with an incremental Bowyer-Watson pass. The resulting
//! meshes satisfy the local Delaunay property by construction; builds that
//! produce degenerate duals are retried with a fresh seed.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::algebra::Vec2;
use crate::mesh::{build_mesh, check_delaunay, MeshError, TriMesh};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("mesh generation failed: {0}")]
    GenerationFailed(String),
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { min: Vec2::new(x0, y0), max: Vec2::new(x1, y1) }
    }

    fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from an interior point to the rectangle boundary.
    fn inner_margin(&self, p: Vec2) -> f64 {
        (p.x - self.min.x)
            .min(self.max.x - p.x)
            .min(p.y - self.min.y)
            .min(self.max.y - p.y)
    }
}

/// Region where the mesh size drops to the fine size.
#[derive(Clone, Copy, Debug)]
pub enum RefineBand {
    /// Band of given half-width around a rectangle contour.
    RectContour { min: Vec2, max: Vec2, half_width: f64 },
    /// Horizontal strip y0 <= y <= y1.
    Strip { y0: f64, y1: f64 },
}

impl RefineBand {
    /// Distance to the band (zero inside it).
    fn distance(&self, p: Vec2) -> f64 {
        match *self {
            RefineBand::RectContour { min, max, half_width } => {
                let dx = (min.x - p.x).max(p.x - max.x);
                let dy = (min.y - p.y).max(p.y - max.y);
                let signed = if dx <= 0.0 && dy <= 0.0 {
                    -(-dx).min(-dy)
                } else {
                    Vec2::new(dx.max(0.0), dy.max(0.0)).norm()
                };
                (signed.abs() - half_width).max(0.0)
            }
            RefineBand::Strip { y0, y1 } => (y0 - p.y).max(p.y - y1).max(0.0),
        }
    }
}

/// Mesh-size request: coarse size, fine size inside the bands, grading rate.
#[derive(Clone, Debug)]
pub struct Sizing {
    pub coarse: f64,
    pub fine: f64,
    pub bands: Vec<RefineBand>,
    /// Size growth per unit distance away from a band.
    pub grading: f64,
}

impl Sizing {
    pub fn uniform(h: f64) -> Self {
        Sizing { coarse: h, fine: h, bands: Vec::new(), grading: 0.3 }
    }

    fn at(&self, p: Vec2) -> f64 {
        let mut h = self.coarse;
        for band in &self.bands {
            h = h.min(self.fine + self.grading * band.distance(p));
        }
        h.min(self.coarse)
    }
}

/// Ratio between the Poisson-disk radius and the sizing field; calibrated so
/// a uniform size h over area A yields about 2 * 0.68 * A / (c h)^2 cells.
const RADIUS_FACTOR: f64 = 0.72;

/// Named verification geometries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerificationKind {
    /// Unit-scale square domain with an interior porous block.
    SquareWithBlock,
    /// Horizontal channel with a porous top layer.
    Channel3Layer,
}

/// Generate one of the verification meshes. `tl_band` is the refinement
/// region matching the transition-layer geometry.
pub fn generate_verification_mesh(
    kind: VerificationKind,
    delta0: f64,
    delta_tl: f64,
    tl_band: RefineBand,
    seed: u64,
) -> Result<TriMesh, GenError> {
    if delta_tl > delta0 {
        return Err(GenError::GenerationFailed(format!(
            "fine size {delta_tl} exceeds coarse size {delta0}"
        )));
    }
    let (rect, tags): (Rect, fn(Vec2, &Rect) -> String) = match kind {
        VerificationKind::SquareWithBlock => (Rect::new(0.0, 0.0, 2.0, 2.0), rect_side_tag),
        VerificationKind::Channel3Layer => (Rect::new(0.0, 0.0, 0.5, 0.5), rect_side_tag),
    };
    let sizing = Sizing { coarse: delta0, fine: delta_tl, bands: vec![tl_band], grading: 0.3 };
    generate_rect_mesh(rect, &sizing, tags, seed)
}

/// Tag boundary edges of a rectangle by side name.
pub fn rect_side_tag(mid: Vec2, rect: &Rect) -> String {
    let eps = 1e-9 * (rect.max - rect.min).norm();
    if (mid.x - rect.min.x).abs() < eps {
        "left".into()
    } else if (mid.x - rect.max.x).abs() < eps {
        "right".into()
    } else if (mid.y - rect.min.y).abs() < eps {
        "bottom".into()
    } else {
        "top".into()
    }
}

/// Generate a graded Delaunay mesh of a rectangle; retries a few seeds if a
/// degenerate configuration slips through.
pub fn generate_rect_mesh(
    rect: Rect,
    sizing: &Sizing,
    tag: fn(Vec2, &Rect) -> String,
    seed: u64,
) -> Result<TriMesh, GenError> {
    let mut last_err = String::new();
    for attempt in 0..5 {
        match try_generate(rect, sizing, tag, seed.wrapping_add(attempt)) {
            Ok(mesh) => return Ok(mesh),
            Err(e) => last_err = e,
        }
    }
    Err(GenError::GenerationFailed(last_err))
}

fn try_generate(
    rect: Rect,
    sizing: &Sizing,
    tag: fn(Vec2, &Rect) -> String,
    seed: u64,
) -> Result<TriMesh, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boundary_pts = boundary_points(rect, sizing);
    let n_boundary = boundary_pts.len();
    let points = poisson_fill(rect, sizing, boundary_pts, &mut rng);

    let cells = bowyer_watson(&points).map_err(|e| format!("triangulation: {e}"))?;

    // Tag hull edges by counting incidence.
    let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &cells {
        for j in 0..3 {
            let (a, b) = (tri[j], tri[(j + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut tags = HashMap::new();
    for (&(a, b), &count) in &edge_count {
        if count == 1 {
            if a >= n_boundary || b >= n_boundary {
                return Err("hull edge touches an interior point".into());
            }
            let mid = (points[a] + points[b]).scale(0.5);
            tags.insert((a, b), tag(mid, &rect));
        }
    }

    let mesh = build_mesh(points, cells, &tags).map_err(|e: MeshError| e.to_string())?;
    if !check_delaunay(&mesh).all_delaunay {
        return Err("generated mesh violates the Delaunay property".into());
    }
    // Boundary duals must be usable in the corrector closures.
    for side in &mesh.sides {
        if side.boundary.is_some() && side.dual_dist < 1e-3 * side.length {
            return Err("near-degenerate boundary dual distance".into());
        }
    }
    Ok(mesh)
}

/// Points along the rectangle boundary, spaced by the sizing field, corners
/// included exactly. Boundary points come first in the final point list.
fn boundary_points(rect: Rect, sizing: &Sizing) -> Vec<Vec2> {
    let corners = [
        rect.min,
        Vec2::new(rect.max.x, rect.min.y),
        rect.max,
        Vec2::new(rect.min.x, rect.max.y),
    ];
    let mut pts = Vec::new();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        pts.push(a);
        let len = (b - a).norm();
        let dir = (b - a).scale(1.0 / len);
        // Walk with local steps, then stretch uniformly to land on b.
        let mut offsets = Vec::new();
        let mut s = 0.0;
        loop {
            let h = sizing.at(a + dir.scale(s));
            s += h;
            if s >= len - 0.45 * h {
                break;
            }
            offsets.push(s);
        }
        let scale = len / (offsets.last().copied().unwrap_or(0.0) + sizing.at(b).min(len));
        for &o in &offsets {
            pts.push(a + dir.scale(o * scale));
        }
    }
    pts
}

/// Bridson-style Poisson-disk sampling with a variable radius.
fn poisson_fill(
    rect: Rect,
    sizing: &Sizing,
    seed_points: Vec<Vec2>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec2> {
    let r_min = RADIUS_FACTOR * sizing.fine;
    let cell = r_min / std::f64::consts::SQRT_2;
    let nx = ((rect.max.x - rect.min.x) / cell).ceil() as usize + 1;
    let ny = ((rect.max.y - rect.min.y) / cell).ceil() as usize + 1;
    let grid_idx = |p: Vec2| -> (usize, usize) {
        let ix = (((p.x - rect.min.x) / cell) as usize).min(nx - 1);
        let iy = (((p.y - rect.min.y) / cell) as usize).min(ny - 1);
        (ix, iy)
    };
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let mut points = seed_points;
    for (i, &p) in points.iter().enumerate() {
        let (ix, iy) = grid_idx(p);
        grid[iy * nx + ix].push(i);
    }

    let radius_at = |p: Vec2| RADIUS_FACTOR * sizing.at(p);

    let fits = |points: &[Vec2], grid: &[Vec<usize>], p: Vec2| -> bool {
        let r = radius_at(p);
        let reach = (r / cell).ceil() as isize + 1;
        let (ix, iy) = grid_idx(p);
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let gx = ix as isize + dx;
                let gy = iy as isize + dy;
                if gx < 0 || gy < 0 || gx >= nx as isize || gy >= ny as isize {
                    continue;
                }
                for &q in &grid[gy as usize * nx + gx as usize] {
                    let min_sep = 0.5 * (r + radius_at(points[q]));
                    if (points[q] - p).norm_sq() < min_sep * min_sep {
                        return false;
                    }
                }
            }
        }
        true
    };

    let mut active: Vec<usize> = (0..points.len()).collect();
    while let Some(pos) = active.len().checked_sub(1) {
        // Deterministic choice: random index from the active list.
        let pick = rng.gen_range(0..=pos);
        let base = points[active[pick]];
        let r_base = radius_at(base);
        let mut placed = false;
        for _ in 0..20 {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let rad = r_base * (1.0 + rng.gen_range(0.0..1.0));
            let cand = base + Vec2::new(ang.cos(), ang.sin()).scale(rad);
            if !rect.contains(cand) {
                continue;
            }
            if rect.inner_margin(cand) < 0.55 * radius_at(cand) {
                continue;
            }
            if fits(&points, &grid, cand) {
                let idx = points.len();
                points.push(cand);
                let (ix, iy) = grid_idx(cand);
                grid[iy * nx + ix].push(idx);
                active.push(idx);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(pick);
        }
    }
    points
}

/// Incremental Bowyer-Watson Delaunay triangulation. Returns CCW triangles.
fn bowyer_watson(points: &[Vec2]) -> Result<Vec<[usize; 3]>, String> {
    let n = points.len();
    if n < 3 {
        return Err("need at least 3 points".into());
    }
    // Bounding super-triangle, generously sized.
    let (mut lo, mut hi) = (points[0], points[0]);
    for &p in points {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi - lo).norm().max(1e-30);
    let mid = (lo + hi).scale(0.5);
    let sv = [
        mid + Vec2::new(-20.0 * span, -10.0 * span),
        mid + Vec2::new(20.0 * span, -10.0 * span),
        mid + Vec2::new(0.0, 25.0 * span),
    ];
    let coord = |i: usize| -> Vec2 {
        if i < n {
            points[i]
        } else {
            sv[i - n]
        }
    };

    #[derive(Clone, Copy)]
    struct Tri {
        v: [usize; 3],
        adj: [Option<usize>; 3], // neighbor opposite vertex j
        alive: bool,
    }

    let mut tris: Vec<Tri> = vec![Tri { v: [n, n + 1, n + 2], adj: [None; 3], alive: true }];
    let orient = |a: Vec2, b: Vec2, c: Vec2| (b - a).cross(c - a);
    let in_circle = |t: &Tri, p: Vec2| -> bool {
        let a = coord(t.v[0]);
        let b = coord(t.v[1]);
        let c = coord(t.v[2]);
        let (ax, ay) = (a.x - p.x, a.y - p.y);
        let (bx, by) = (b.x - p.x, b.y - p.y);
        let (cx, cy) = (c.x - p.x, c.y - p.y);
        let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
            - (bx * bx + by * by) * (ax * cy - cx * ay)
            + (cx * cx + cy * cy) * (ax * by - bx * ay);
        det > 0.0
    };

    let mut hint = 0usize;
    for p_idx in 0..n {
        let p = points[p_idx];
        // Walk towards the containing triangle.
        let mut cur = if tris[hint].alive { hint } else { tris.len() - 1 };
        let mut found = None;
        'walk: for _ in 0..tris.len() + 8 {
            let t = &tris[cur];
            debug_assert!(t.alive);
            let scale = span * span * 1e-15;
            let mut moved = false;
            for j in 0..3 {
                let a = coord(t.v[(j + 1) % 3]);
                let b = coord(t.v[(j + 2) % 3]);
                if orient(a, b, p) < -scale {
                    match t.adj[j] {
                        Some(nb) => {
                            cur = nb;
                            moved = true;
                            break;
                        }
                        None => return Err("walked out of the triangulation".into()),
                    }
                }
            }
            if !moved {
                found = Some(cur);
                break 'walk;
            }
        }
        let start = match found {
            Some(t) => t,
            None => {
                // Fallback: linear scan (robustness escape hatch).
                let mut best = None;
                for (ti, t) in tris.iter().enumerate() {
                    if !t.alive {
                        continue;
                    }
                    let ok = (0..3).all(|j| {
                        let a = coord(t.v[(j + 1) % 3]);
                        let b = coord(t.v[(j + 2) % 3]);
                        orient(a, b, p) >= -span * span * 1e-12
                    });
                    if ok {
                        best = Some(ti);
                        break;
                    }
                }
                best.ok_or("point not located in any triangle")?
            }
        };

        // Grow the cavity of circumcircle-violating triangles.
        let mut cavity = Vec::new();
        let mut stack = vec![start];
        let mut in_cavity = HashMap::new();
        while let Some(ti) = stack.pop() {
            if in_cavity.contains_key(&ti) || !tris[ti].alive {
                continue;
            }
            if !in_circle(&tris[ti], p) {
                continue;
            }
            in_cavity.insert(ti, true);
            cavity.push(ti);
            for j in 0..3 {
                if let Some(nb) = tris[ti].adj[j] {
                    if !in_cavity.contains_key(&nb) {
                        stack.push(nb);
                    }
                }
            }
        }
        if cavity.is_empty() {
            // The located triangle must contain p in its circumcircle.
            cavity.push(start);
            in_cavity.insert(start, true);
        }

        // Boundary edges of the cavity, with their outside neighbors.
        let mut fan: Vec<(usize, usize, Option<usize>)> = Vec::new();
        for &ti in &cavity {
            let t = tris[ti];
            for j in 0..3 {
                let outside = match t.adj[j] {
                    Some(nb) => {
                        if in_cavity.contains_key(&nb) {
                            continue;
                        }
                        Some(nb)
                    }
                    None => None,
                };
                let a = t.v[(j + 1) % 3];
                let b = t.v[(j + 2) % 3];
                fan.push((a, b, outside));
            }
        }
        for &ti in &cavity {
            tris[ti].alive = false;
        }

        // Create the fan and stitch adjacency.
        let mut edge_to_tri: HashMap<(usize, usize), usize> = HashMap::new();
        let first_new = tris.len();
        for &(a, b, outside) in &fan {
            let ti = tris.len();
            tris.push(Tri { v: [p_idx, a, b], adj: [outside, None, None], alive: true });
            if let Some(nb) = outside {
                for j in 0..3 {
                    let na = tris[nb].v[(j + 1) % 3];
                    let nbv = tris[nb].v[(j + 2) % 3];
                    if (na, nbv) == (b, a) {
                        tris[nb].adj[j] = Some(ti);
                    }
                }
            }
            edge_to_tri.insert((p_idx, a), ti);
            edge_to_tri.insert((b, p_idx), ti);
        }
        for ti in first_new..tris.len() {
            let (a, b) = (tris[ti].v[1], tris[ti].v[2]);
            // Side 1 is opposite vertex a: the directed edge (b, p).
            tris[ti].adj[1] = edge_to_tri.get(&(p_idx, b)).copied();
            tris[ti].adj[2] = edge_to_tri.get(&(a, p_idx)).copied();
        }
        hint = first_new;
    }

    let mut out = Vec::new();
    for t in &tris {
        if t.alive && t.v.iter().all(|&v| v < n) {
            out.push(t.v);
        }
    }
    Ok(out)
}
