//! Unstructured triangular mesh with the geometric and topological data the
//! discretization needs: areas, circumcenters, side normals, signed dual
//! distances, Delaunay flags, nodal area weights, and the velocity-directed
//! cell ranking used by the predictor sweeps.
//!
//! Side convention: side `j` of a cell is opposite node `j`, so side 0 joins
//! local nodes 1 and 2, side 1 joins 2 and 0, side 2 joins 0 and 1. Cells are
//! counterclockwise; outward normals follow from that orientation.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::algebra::Vec2;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cell {cell} has non-positive area")]
    NonPositiveArea { cell: usize },
    #[error("edge ({a},{b}) is shared by more than two cells")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("boundary edge ({a},{b}) has no boundary tag")]
    UntaggedBoundaryEdge { a: usize, b: usize },
    #[error("tagged edge ({a},{b}) is not a boundary edge")]
    InteriorEdgeTagged { a: usize, b: usize },
    #[error("side {side} has (near-)coincident circumcenters; regenerate the mesh")]
    DegenerateDual { side: usize },
    #[error("node index {index} out of range ({nodes} nodes)")]
    NodeIndexOutOfRange { index: usize, nodes: usize },
    #[error("mesh needs at least 3 nodes and 1 cell")]
    TooSmall,
    #[error("duplicate cell {cell}")]
    DuplicateCell { cell: usize },
    #[error("mesh file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What lies on the other side of a cell side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    /// Interior side: index of the adjacent cell.
    Cell(usize),
    /// Boundary side: index into `TriMesh::boundary_tags`.
    Boundary(usize),
}

/// One mesh side (edge). Interior sides are stored once and shared by the two
/// adjacent cells, which makes flux antisymmetry exact by construction.
#[derive(Clone, Debug)]
pub struct Side {
    /// Endpoint node indices.
    pub nodes: [usize; 2],
    /// Owner cell (the side's canonical orientation points out of this cell).
    pub cell: usize,
    /// Local side index within the owner cell.
    pub local: usize,
    /// Adjacent cell and its local side index, if interior.
    pub neighbor: Option<(usize, usize)>,
    /// Boundary tag index, if boundary.
    pub boundary: Option<usize>,
    /// Side length [m].
    pub length: f64,
    /// Unit normal pointing out of the owner cell.
    pub normal: Vec2,
    /// Unit tangent (CCW direction of the owner cell).
    pub tangent: Vec2,
    /// Midpoint of the side.
    pub midpoint: Vec2,
    /// Interior: signed circumcenter distance (positive iff locally Delaunay).
    /// Boundary: circumcenter-to-side-midpoint distance (non-negative).
    pub dual_dist: f64,
    /// Local Delaunay flag (true for boundary sides).
    pub delaunay: bool,
}

/// Immutable triangular mesh with precomputed geometry.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub nodes: Vec<Vec2>,
    /// Node triples, counterclockwise.
    pub cells: Vec<[usize; 3]>,
    pub sides: Vec<Side>,
    /// Per cell: global side index of local sides 0..3.
    pub cell_sides: Vec<[usize; 3]>,
    /// Per cell and local side: outward unit normal.
    pub cell_normals: Vec<[Vec2; 3]>,
    /// Per cell and local side: side length.
    pub cell_side_len: Vec<[f64; 3]>,
    /// Per cell and local side: neighbor.
    pub cell_neighbors: Vec<[Neighbor; 3]>,
    pub areas: Vec<f64>,
    pub circumcenters: Vec<Vec2>,
    pub centroids: Vec<Vec2>,
    /// Barycentric (third-area) nodal weights; sum equals the mesh area.
    pub node_weights: Vec<f64>,
    /// Distinct boundary tags, in first-seen order.
    pub boundary_tags: Vec<String>,
    /// Number of cells whose orientation was flipped to CCW during build.
    pub orientation_fixes: usize,
}

impl TriMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Orientation sign of side `s` as seen from cell `e`:
    /// +1 if `e` owns the side, -1 otherwise.
    pub fn side_sign(&self, e: usize, s: usize) -> f64 {
        if self.sides[s].cell == e {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward normal of global side `s` as seen from cell `e`.
    pub fn side_normal_from(&self, e: usize, s: usize) -> Vec2 {
        self.sides[s].normal.scale(self.side_sign(e, s))
    }

    /// Index of the cell whose bounding box and barycentric test contain `p`.
    pub fn locate(&self, p: Vec2) -> Option<usize> {
        const TOL: f64 = 1e-12;
        for (e, tri) in self.cells.iter().enumerate() {
            let [a, b, c] = [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]];
            let lo_x = a.x.min(b.x).min(c.x);
            let hi_x = a.x.max(b.x).max(c.x);
            let lo_y = a.y.min(b.y).min(c.y);
            let hi_y = a.y.max(b.y).max(c.y);
            if p.x < lo_x - TOL || p.x > hi_x + TOL || p.y < lo_y - TOL || p.y > hi_y + TOL {
                continue;
            }
            let w0 = (b - a).cross(p - a);
            let w1 = (c - b).cross(p - b);
            let w2 = (a - c).cross(p - c);
            let eps = TOL * 2.0 * self.areas[e];
            if w0 >= -eps && w1 >= -eps && w2 >= -eps {
                return Some(e);
            }
        }
        None
    }
}

fn circumcenter(a: Vec2, b: Vec2, c: Vec2) -> Vec2 {
    let d = 2.0 * ((b - a).cross(c - a));
    let asq = a.norm_sq();
    let bsq = b.norm_sq();
    let csq = c.norm_sq();
    let ux = (asq * (b.y - c.y) + bsq * (c.y - a.y) + csq * (a.y - b.y)) / d;
    let uy = (asq * (c.x - b.x) + bsq * (a.x - c.x) + csq * (b.x - a.x)) / d;
    Vec2::new(ux, uy)
}

/// Angle at vertex `v` subtending the segment (a, b).
fn opposite_angle(v: Vec2, a: Vec2, b: Vec2) -> f64 {
    let p = a - v;
    let q = b - v;
    p.cross(q).abs().atan2(p.dot(q))
}

/// Build a validated mesh from raw node/cell/boundary-tag data.
///
/// `boundary_tags` maps node pairs (any order) to tag strings; every boundary
/// edge must be covered and interior edges must not be.
pub fn build_mesh(
    nodes: Vec<Vec2>,
    cells_in: Vec<[usize; 3]>,
    boundary_tags: &HashMap<(usize, usize), String>,
) -> Result<TriMesh, MeshError> {
    if nodes.len() < 3 || cells_in.is_empty() {
        return Err(MeshError::TooSmall);
    }
    let mut cells = cells_in;
    for tri in &cells {
        for &i in tri {
            if i >= nodes.len() {
                return Err(MeshError::NodeIndexOutOfRange { index: i, nodes: nodes.len() });
            }
        }
    }
    let mut seen = HashMap::new();
    for (e, tri) in cells.iter().enumerate() {
        let mut key = *tri;
        key.sort_unstable();
        if seen.insert(key, e).is_some() {
            return Err(MeshError::DuplicateCell { cell: e });
        }
    }

    // Enforce CCW orientation; repeated or collinear nodes give zero area.
    let mut orientation_fixes = 0;
    let mut areas = Vec::with_capacity(cells.len());
    for (e, tri) in cells.iter_mut().enumerate() {
        let [a, b, c] = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
        let signed = 0.5 * (b - a).cross(c - a);
        if signed == 0.0 || !signed.is_finite() {
            return Err(MeshError::NonPositiveArea { cell: e });
        }
        if signed < 0.0 {
            tri.swap(1, 2);
            orientation_fixes += 1;
        }
        areas.push(signed.abs());
    }

    let circumcenters: Vec<Vec2> = cells
        .iter()
        .map(|tri| circumcenter(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]))
        .collect();
    let centroids: Vec<Vec2> = cells
        .iter()
        .map(|tri| (nodes[tri[0]] + nodes[tri[1]] + nodes[tri[2]]).scale(1.0 / 3.0))
        .collect();

    // Deduplicate edges in first-seen order (deterministic side numbering).
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut sides: Vec<Side> = Vec::new();
    let mut cell_sides = vec![[usize::MAX; 3]; cells.len()];
    let mut cell_normals = vec![[Vec2::ZERO; 3]; cells.len()];
    let mut cell_side_len = vec![[0.0; 3]; cells.len()];

    for (e, tri) in cells.iter().enumerate() {
        for j in 0..3 {
            let (na, nb) = (tri[(j + 1) % 3], tri[(j + 2) % 3]);
            let (a, b) = (nodes[na], nodes[nb]);
            let edge = b - a;
            let len = edge.norm();
            if len == 0.0 {
                return Err(MeshError::NonPositiveArea { cell: e });
            }
            let tangent = edge.scale(1.0 / len);
            let normal = tangent.perp_cw();
            cell_normals[e][j] = normal;
            cell_side_len[e][j] = len;
            let key = (na.min(nb), na.max(nb));
            match edge_index.get(&key) {
                None => {
                    let s = sides.len();
                    edge_index.insert(key, s);
                    sides.push(Side {
                        nodes: [na, nb],
                        cell: e,
                        local: j,
                        neighbor: None,
                        boundary: None,
                        length: len,
                        normal,
                        tangent,
                        midpoint: (a + b).scale(0.5),
                        dual_dist: 0.0,
                        delaunay: true,
                    });
                    cell_sides[e][j] = s;
                }
                Some(&s) => {
                    if sides[s].neighbor.is_some() {
                        return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 });
                    }
                    sides[s].neighbor = Some((e, j));
                    cell_sides[e][j] = s;
                }
            }
        }
    }

    // Resolve boundary tags and dual distances.
    let mut tag_names: Vec<String> = Vec::new();
    let mut tag_lookup: HashMap<String, usize> = HashMap::new();
    for s in 0..sides.len() {
        let key = {
            let [a, b] = sides[s].nodes;
            (a.min(b), a.max(b))
        };
        match sides[s].neighbor {
            None => {
                let tag = boundary_tags
                    .get(&key)
                    .ok_or(MeshError::UntaggedBoundaryEdge { a: key.0, b: key.1 })?;
                let id = match tag_lookup.get(tag) {
                    Some(&id) => id,
                    None => {
                        tag_names.push(tag.clone());
                        tag_lookup.insert(tag.clone(), tag_names.len() - 1);
                        tag_names.len() - 1
                    }
                };
                sides[s].boundary = Some(id);
                // Circumcenter-to-midpoint distance; may legitimately be zero
                // for a right triangle with its hypotenuse on the boundary
                // (the correctors reject that case where they need 1/d).
                let e = sides[s].cell;
                sides[s].dual_dist = (sides[s].midpoint - circumcenters[e]).norm();
            }
            Some((ep, _)) => {
                if boundary_tags.contains_key(&key) {
                    return Err(MeshError::InteriorEdgeTagged { a: key.0, b: key.1 });
                }
                let e = sides[s].cell;
                let dist = (circumcenters[ep] - circumcenters[e]).norm();
                if dist < 1e-12 * sides[s].length {
                    return Err(MeshError::DegenerateDual { side: s });
                }
                // Local Delaunay: opposite angles sum below pi. Ties are
                // excluded by the degenerate-dual check above.
                let opp_e = cells[e][sides[s].local];
                let (ep_cell, jp) = sides[s].neighbor.unwrap();
                let opp_ep = cells[ep_cell][jp];
                let [na, nb] = sides[s].nodes;
                let sum = opposite_angle(nodes[opp_e], nodes[na], nodes[nb])
                    + opposite_angle(nodes[opp_ep], nodes[na], nodes[nb]);
                let delaunay = sum <= std::f64::consts::PI;
                sides[s].delaunay = delaunay;
                sides[s].dual_dist = if delaunay { dist } else { -dist };
            }
        }
    }

    let mut cell_neighbors = vec![[Neighbor::Boundary(usize::MAX); 3]; cells.len()];
    for (e, local_sides) in cell_sides.iter().enumerate() {
        for (j, &s) in local_sides.iter().enumerate() {
            cell_neighbors[e][j] = match (sides[s].neighbor, sides[s].boundary) {
                (Some((a, _)), _) if sides[s].cell == e => Neighbor::Cell(a),
                (Some(_), _) => Neighbor::Cell(sides[s].cell),
                (None, Some(tag)) => Neighbor::Boundary(tag),
                (None, None) => unreachable!("boundary side without tag survived validation"),
            };
        }
    }

    let mut node_weights = vec![0.0; nodes.len()];
    for (e, tri) in cells.iter().enumerate() {
        for &n in tri {
            node_weights[n] += areas[e] / 3.0;
        }
    }

    Ok(TriMesh {
        nodes,
        cells,
        sides,
        cell_sides,
        cell_normals,
        cell_side_len,
        cell_neighbors,
        areas,
        circumcenters,
        centroids,
        node_weights,
        boundary_tags: tag_names,
        orientation_fixes,
    })
}

/// Per-side Delaunay report.
#[derive(Clone, Debug)]
pub struct DelaunayReport {
    /// Flags aligned with `mesh.sides`; boundary sides are vacuously true.
    pub side_ok: Vec<bool>,
    /// Indices of offending interior sides.
    pub offending: Vec<usize>,
    pub all_delaunay: bool,
}

/// Re-derive the local Delaunay property for every interior side.
pub fn check_delaunay(mesh: &TriMesh) -> DelaunayReport {
    let side_ok: Vec<bool> = mesh.sides.iter().map(|s| s.delaunay).collect();
    let offending: Vec<usize> =
        side_ok.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i).collect();
    DelaunayReport { all_delaunay: offending.is_empty(), side_ok, offending }
}

/// Per-side sweep role relative to a given cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideRole {
    /// Counts as outgoing in the forward sweep (toward higher rank, or an
    /// open boundary side).
    Outgoing,
    /// Counts as incoming in the forward sweep; `Incoming` interior sides
    /// always face a lower-ranked neighbor.
    Incoming,
    /// Excluded from momentum exchange entirely (impermeable free-slip).
    Sealed,
}

/// Rank assignment and processing order for the predictor sweeps.
#[derive(Clone, Debug)]
pub struct CellRanking {
    /// Rank per cell; fluxes at ranking time flow from lower to higher rank
    /// except across edges removed to break cycles.
    pub rank: Vec<usize>,
    /// Cell indices sorted by increasing rank.
    pub order: Vec<usize>,
    /// Per cell, per local side: sweep role (the phi flag).
    pub role: Vec<[SideRole; 3]>,
    /// Number of graph edges removed to break cycles.
    pub broken_edges: usize,
}

/// Boundary behaviour the ranking needs to know about, per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryFluxKind {
    /// Prescribed-velocity side with inflow (feeds boundary momentum).
    Inflow,
    /// Open or outflow side (momentum leaves freely).
    Open,
    /// Impermeable free-slip side (no momentum exchange).
    Sealed,
}

/// Topologically order cells along the flux directions.
///
/// `side_flux` is the normal flux per global side, oriented out of the owner
/// cell. Cycles in the flux digraph are broken by repeatedly removing the
/// smallest-|flux| incoming edge among stalled cells.
pub fn rank_cells(
    mesh: &TriMesh,
    side_flux: &[f64],
    boundary_kind: impl Fn(usize) -> BoundaryFluxKind,
) -> CellRanking {
    let n = mesh.n_cells();
    // Directed edges donor -> receiver with |flux| as weight.
    let mut edges: Vec<(usize, usize, f64, usize)> = Vec::new(); // (donor, receiver, |q|, side)
    for (s, side) in mesh.sides.iter().enumerate() {
        if let Some((ep, _)) = side.neighbor {
            let q = side_flux[s];
            if q > 0.0 {
                edges.push((side.cell, ep, q, s));
            } else if q < 0.0 {
                edges.push((ep, side.cell, -q, s));
            }
        }
    }

    let mut removed = vec![false; edges.len()];
    let mut in_deg = vec![0usize; n];
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &(donor, receiver, _, _)) in edges.iter().enumerate() {
        in_deg[receiver] += 1;
        out_edges[donor].push(i);
    }

    // Kahn's algorithm with an index-ordered frontier for determinism.
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
        (0..n).filter(|&e| in_deg[e] == 0).map(std::cmp::Reverse).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut broken_edges = 0;

    while order.len() < n {
        if let Some(std::cmp::Reverse(e)) = ready.pop() {
            placed[e] = true;
            order.push(e);
            for &i in &out_edges[e] {
                if removed[i] {
                    continue;
                }
                removed[i] = true;
                let r = edges[i].1;
                in_deg[r] -= 1;
                if in_deg[r] == 0 && !placed[r] {
                    ready.push(std::cmp::Reverse(r));
                }
            }
        } else {
            // Stall: every unplaced cell waits on some edge. Remove the
            // smallest-|flux| live edge between unplaced cells.
            let mut best: Option<(f64, usize, usize, usize)> = None;
            for (i, &(donor, receiver, q, _)) in edges.iter().enumerate() {
                if removed[i] || placed[donor] || placed[receiver] {
                    continue;
                }
                let cand = (q, donor, receiver, i);
                best = match best {
                    None => Some(cand),
                    Some(b) if (cand.0, cand.1, cand.2) < (b.0, b.1, b.2) => Some(cand),
                    other => other,
                };
            }
            let (_, _, receiver, i) =
                best.expect("stalled ranking with no removable edge");
            removed[i] = true;
            broken_edges += 1;
            in_deg[receiver] -= 1;
            if in_deg[receiver] == 0 {
                ready.push(std::cmp::Reverse(receiver));
            }
        }
    }

    let mut rank = vec![0usize; n];
    for (r, &e) in order.iter().enumerate() {
        rank[e] = r;
    }

    let mut role = vec![[SideRole::Outgoing; 3]; n];
    for e in 0..n {
        for j in 0..3 {
            let s = mesh.cell_sides[e][j];
            role[e][j] = match mesh.sides[s].neighbor {
                Some((a, _)) => {
                    let ep = if mesh.sides[s].cell == e { a } else { mesh.sides[s].cell };
                    if rank[ep] > rank[e] {
                        SideRole::Outgoing
                    } else {
                        SideRole::Incoming
                    }
                }
                None => match boundary_kind(s) {
                    BoundaryFluxKind::Inflow => SideRole::Incoming,
                    BoundaryFluxKind::Open => SideRole::Outgoing,
                    BoundaryFluxKind::Sealed => SideRole::Sealed,
                },
            };
        }
    }

    CellRanking { rank, order, role, broken_edges }
}

/// Nodal area weights (barycentric third-area split).
pub fn voronoi_node_weights(mesh: &TriMesh) -> &[f64] {
    &mesh.node_weights
}

/// Parse the ASCII mesh format:
/// `NODES n` / n lines `x y` / `TRIANGLES m` / m lines `i j k` /
/// `BOUNDARY b` / b lines `i j tag`. `#` starts a comment.
pub fn parse_mesh(text: &str) -> Result<TriMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut next = |what: &str| -> Result<(usize, &str), MeshError> {
        lines.next().ok_or_else(|| MeshError::Parse {
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    };

    let (ln, header) = next("NODES header")?;
    let n_nodes = parse_count(header, "NODES", ln)?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, l) = next("node coordinates")?;
        let mut it = l.split_whitespace();
        let x = parse_f64(it.next(), ln)?;
        let y = parse_f64(it.next(), ln)?;
        if it.next().is_some() {
            return Err(MeshError::Parse { line: ln, msg: "trailing data on node line".into() });
        }
        nodes.push(Vec2::new(x, y));
    }

    let (ln, header) = next("TRIANGLES header")?;
    let n_cells = parse_count(header, "TRIANGLES", ln)?;
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (ln, l) = next("triangle indices")?;
        let mut it = l.split_whitespace();
        let i = parse_usize(it.next(), ln)?;
        let j = parse_usize(it.next(), ln)?;
        let k = parse_usize(it.next(), ln)?;
        if it.next().is_some() {
            return Err(MeshError::Parse { line: ln, msg: "trailing data on cell line".into() });
        }
        cells.push([i, j, k]);
    }

    let (ln, header) = next("BOUNDARY header")?;
    let n_bnd = parse_count(header, "BOUNDARY", ln)?;
    let mut tags = HashMap::new();
    for _ in 0..n_bnd {
        let (ln, l) = next("boundary edge")?;
        let mut it = l.split_whitespace();
        let i = parse_usize(it.next(), ln)?;
        let j = parse_usize(it.next(), ln)?;
        let tag = it
            .next()
            .ok_or_else(|| MeshError::Parse { line: ln, msg: "missing boundary tag".into() })?;
        tags.insert((i.min(j), i.max(j)), tag.to_string());
    }

    build_mesh(nodes, cells, &tags)
}

/// Serialize a mesh in the ASCII format accepted by [`parse_mesh`].
pub fn format_mesh(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NODES {}", mesh.n_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(out, "{:.17e} {:.17e}", p.x, p.y);
    }
    let _ = writeln!(out, "TRIANGLES {}", mesh.n_cells());
    for c in &mesh.cells {
        let _ = writeln!(out, "{} {} {}", c[0], c[1], c[2]);
    }
    let n_bnd = mesh.sides.iter().filter(|s| s.boundary.is_some()).count();
    let _ = writeln!(out, "BOUNDARY {n_bnd}");
    for s in &mesh.sides {
        if let Some(tag) = s.boundary {
            let _ = writeln!(out, "{} {} {}", s.nodes[0], s.nodes[1], mesh.boundary_tags[tag]);
        }
    }
    out
}

fn parse_count(line: &str, keyword: &str, ln: usize) -> Result<usize, MeshError> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(n), None) if k == keyword => n.parse().map_err(|_| MeshError::Parse {
            line: ln,
            msg: format!("bad count after {keyword}"),
        }),
        _ => Err(MeshError::Parse { line: ln, msg: format!("expected `{keyword} <n>`") }),
    }
}

fn parse_f64(tok: Option<&str>, ln: usize) -> Result<f64, MeshError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| MeshError::Parse { line: ln, msg: "expected a number".into() })
}

fn parse_usize(tok: Option<&str>, ln: usize) -> Result<usize, MeshError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| MeshError::Parse { line: ln, msg: "expected an index".into() })
}

#[cfg(test)]
pub(crate) mod test_meshes {
    use super::*;

    pub fn tag_all(edges: &[(usize, usize)], tag: &str) -> HashMap<(usize, usize), String> {
        edges.iter().map(|&(a, b)| ((a.min(b), a.max(b)), tag.to_string())).collect()
    }

    /// Single unit right triangle with legs on the axes.
    pub fn unit_right_triangle() -> TriMesh {
        let nodes = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let tags = tag_all(&[(0, 1), (1, 2), (2, 0)], "wall");
        build_mesh(nodes, vec![[0, 1, 2]], &tags).unwrap()
    }

    /// Two equilateral triangles sharing the side ((0,0),(1,0)).
    pub fn equilateral_pair() -> TriMesh {
        let h = 3.0_f64.sqrt() / 2.0;
        let nodes = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.5, h),
            Vec2::new(0.5, -h),
        ];
        let tags = tag_all(&[(0, 2), (1, 2), (0, 3), (1, 3)], "wall");
        build_mesh(nodes, vec![[0, 1, 2], [0, 3, 1]], &tags).unwrap()
    }

    /// Four triangles around a hub node, forming a flux ring.
    pub fn four_cell_ring() -> TriMesh {
        let nodes = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(0.0, -1.0),
        ];
        let cells = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
        let tags = tag_all(&[(1, 2), (2, 3), (3, 4), (4, 1)], "outer");
        build_mesh(nodes, cells, &tags).unwrap()
    }

    /// Hexagon of six equilateral triangles around the origin.
    pub fn hexagon_patch() -> TriMesh {
        let mut nodes = vec![Vec2::new(0.0, 0.0)];
        for i in 0..6 {
            let a = i as f64 * std::f64::consts::FRAC_PI_3;
            nodes.push(Vec2::new(a.cos(), a.sin()));
        }
        let mut cells = Vec::new();
        let mut bnd = Vec::new();
        for i in 0..6 {
            let a = 1 + i;
            let b = 1 + (i + 1) % 6;
            cells.push([0, a, b]);
            bnd.push((a, b));
        }
        let tags = tag_all(&bnd, "outer");
        build_mesh(nodes, cells, &tags).unwrap()
    }
}
