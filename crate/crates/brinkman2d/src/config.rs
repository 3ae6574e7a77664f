//! Flat key-path run configuration files.
//!
//! Grammar: one `key = value` pair per line, `#` starts a comment. Keys are
//! dot-separated paths; porous regions are indexed as
//! `material.region.<i>.<field>`. Unknown keys are rejected. See the README
//! for the full key table.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::algebra::Vec2;
use crate::bc::{ResolvedBcs, SideBc};
use crate::material::{
    build_anisotropy, AnisotropySpec, MaterialSpec, ProfileKind, TlGeometry, TransitionLayerSpec,
};
use crate::mesh::TriMesh;
use crate::timeloop::{SimulationConfig, Tolerances};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parsed, validated configuration (mesh-independent).
#[derive(Clone, Debug)]
pub struct ParsedConfig {
    pub dt: f64,
    pub t_end: f64,
    pub nu: f64,
    pub tolerances: Tolerances,
    pub steady_tol: Option<f64>,
    pub datum_point: Vec2,
    pub datum_value: f64,
    /// VTK output cadence in steps (0 = final state only).
    pub output_every: usize,
    pub bcs: HashMap<String, SideBc>,
    pub material: MaterialSpec,
}

pub fn load_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            msg: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        if let Some(prev) = seen.insert(key.clone(), line) {
            return Err(ConfigError::Parse {
                line,
                msg: format!("duplicate key `{key}` (first at line {prev})"),
            });
        }
        entries.push((line, key, value.trim().to_string()));
    }

    let mut dt = None;
    let mut t_end = None;
    let mut nu = None;
    let mut tol = Tolerances::default();
    let mut steady_tol = None;
    let mut datum_point = Vec2::ZERO;
    let mut datum_value = 0.0;
    let mut output_every = 0usize;
    let mut bcs = HashMap::new();
    let mut regions: HashMap<usize, HashMap<String, (usize, String)>> = HashMap::new();

    for (line, key, value) in entries {
        let f = |field: &str, v: &str| -> Result<f64, ConfigError> {
            v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`{field}` expects a number, got `{v}`"),
            })
        };
        match key.as_str() {
            "dt" => dt = Some(f("dt", &value)?),
            "t_end" => t_end = Some(f("t_end", &value)?),
            "nu" => nu = Some(f("nu", &value)?),
            "ode_tol" => tol.ode_tol = f("ode_tol", &value)?,
            "pcg_tol" => tol.pcg_tol = f("pcg_tol", &value)?,
            "cp1_toll" => tol.cp1_toll = f("cp1_toll", &value)?,
            "steady_tol" => steady_tol = Some(f("steady_tol", &value)?),
            "datum.point" => {
                let nums = parse_numbers(&value, 2, line, "datum.point")?;
                datum_point = Vec2::new(nums[0], nums[1]);
            }
            "datum.value" => datum_value = f("datum.value", &value)?,
            "output.every" => {
                output_every = value.parse().map_err(|_| ConfigError::Parse {
                    line,
                    msg: "`output.every` expects a non-negative integer".into(),
                })?;
            }
            _ if key.starts_with("bc.") => {
                let tag = key.trim_start_matches("bc.").to_string();
                bcs.insert(tag, parse_bc(&value, line)?);
            }
            _ if key.starts_with("material.region.") => {
                let rest = key.trim_start_matches("material.region.");
                let (idx, field) = rest.split_once('.').ok_or_else(|| ConfigError::Parse {
                    line,
                    msg: "expected material.region.<i>.<field>".into(),
                })?;
                let idx: usize = idx.parse().map_err(|_| ConfigError::Parse {
                    line,
                    msg: "region index must be an integer".into(),
                })?;
                regions.entry(idx).or_default().insert(field.to_string(), (line, value));
            }
            _ => {
                return Err(ConfigError::Parse { line, msg: format!("unknown key `{key}`") });
            }
        }
    }

    let dt = dt.ok_or_else(|| missing("dt"))?;
    let t_end = t_end.ok_or_else(|| missing("t_end"))?;
    let nu = nu.ok_or_else(|| missing("nu"))?;
    if !(dt > 0.0) {
        return Err(ConfigError::Validation { field: "dt".into(), msg: "must be positive".into() });
    }
    if !(t_end >= 0.0) {
        return Err(ConfigError::Validation {
            field: "t_end".into(),
            msg: "must be non-negative".into(),
        });
    }
    if !(nu > 0.0) {
        return Err(ConfigError::Validation { field: "nu".into(), msg: "must be positive".into() });
    }

    let mut material = MaterialSpec { nu, regions: Vec::new() };
    let mut indices: Vec<usize> = regions.keys().copied().collect();
    indices.sort_unstable();
    for idx in indices {
        let fields = &regions[&idx];
        material.regions.push(parse_region(idx, fields)?);
    }

    Ok(ParsedConfig {
        dt,
        t_end,
        nu,
        tolerances: tol,
        steady_tol,
        datum_point,
        datum_value,
        output_every,
        bcs,
        material,
    })
}

fn missing(field: &str) -> ConfigError {
    ConfigError::Validation { field: field.into(), msg: "missing required key".into() }
}

fn parse_numbers(
    value: &str,
    n: usize,
    line: usize,
    field: &str,
) -> Result<Vec<f64>, ConfigError> {
    let nums: Result<Vec<f64>, _> = value.split_whitespace().map(|t| t.parse()).collect();
    match nums {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(ConfigError::Parse {
            line,
            msg: format!("`{field}` expects {n} numbers, got `{value}`"),
        }),
    }
}

fn parse_bc(value: &str, line: usize) -> Result<SideBc, ConfigError> {
    let mut it = value.split_whitespace();
    match it.next() {
        Some("essential") => {
            let rest: Vec<&str> = it.collect();
            if rest.len() != 2 {
                return Err(ConfigError::Parse {
                    line,
                    msg: "essential BC expects `essential ux uy`".into(),
                });
            }
            let ux = rest[0].parse().map_err(|_| ConfigError::Parse {
                line,
                msg: "bad essential velocity".into(),
            })?;
            let uy = rest[1].parse().map_err(|_| ConfigError::Parse {
                line,
                msg: "bad essential velocity".into(),
            })?;
            Ok(SideBc::Essential { velocity: Vec2::new(ux, uy) })
        }
        Some("natural") => {
            let psi = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| ConfigError::Parse {
                    line,
                    msg: "natural BC expects `natural psi`".into(),
                })?;
            if it.next().is_some() {
                return Err(ConfigError::Parse { line, msg: "trailing data after psi".into() });
            }
            Ok(SideBc::Natural { psi })
        }
        Some("freeslip") => {
            if it.next().is_some() {
                return Err(ConfigError::Parse { line, msg: "freeslip takes no values".into() });
            }
            Ok(SideBc::FreeSlip)
        }
        other => Err(ConfigError::Parse {
            line,
            msg: format!("unknown BC kind `{}`", other.unwrap_or("")),
        }),
    }
}

fn parse_region(
    idx: usize,
    fields: &HashMap<String, (usize, String)>,
) -> Result<TransitionLayerSpec, ConfigError> {
    let path = |f: &str| format!("material.region.{idx}.{f}");
    let get = |f: &str| -> Result<&(usize, String), ConfigError> {
        fields.get(f).ok_or_else(|| missing(&path(f)))
    };
    let num = |f: &str| -> Result<f64, ConfigError> {
        let (line, v) = get(f)?;
        v.parse().map_err(|_| ConfigError::Parse {
            line: *line,
            msg: format!("`{}` expects a number", path(f)),
        })
    };
    for key in fields.keys() {
        const KNOWN: [&str; 10] = [
            "kind", "geometry", "d_tl", "d_eps", "d_k", "theta_eps", "theta_k", "eps0",
            "perm.k", "perm.beta",
        ];
        if !KNOWN.contains(&key.as_str()) && key != "perm.alpha" {
            return Err(ConfigError::Parse {
                line: fields[key].0,
                msg: format!("unknown key `{}`", path(key)),
            });
        }
    }

    let kind = match get("kind")?.1.as_str() {
        "tanh" => ProfileKind::Tanh,
        "linear" => ProfileKind::Linear,
        other => {
            return Err(ConfigError::Validation {
                field: path("kind"),
                msg: format!("expected tanh|linear, got `{other}`"),
            })
        }
    };
    let (gline, gval) = get("geometry")?;
    let toks: Vec<&str> = gval.split_whitespace().collect();
    let geometry = match toks.as_slice() {
        ["rect-contour", x0, y0, x1, y1] => {
            let p: Result<Vec<f64>, _> = [x0, y0, x1, y1].iter().map(|t| t.parse()).collect();
            let p = p.map_err(|_| ConfigError::Parse {
                line: *gline,
                msg: "rect-contour expects 4 numbers".into(),
            })?;
            TlGeometry::RectContour { min: Vec2::new(p[0], p[1]), max: Vec2::new(p[2], p[3]) }
        }
        ["hline", level, side] => {
            let level = level.parse().map_err(|_| ConfigError::Parse {
                line: *gline,
                msg: "hline expects a number".into(),
            })?;
            let fluid_below = match *side {
                "fluid-below" => true,
                "fluid-above" => false,
                _ => {
                    return Err(ConfigError::Parse {
                        line: *gline,
                        msg: "hline expects fluid-below|fluid-above".into(),
                    })
                }
            };
            TlGeometry::HorizontalLine { level, fluid_below }
        }
        _ => {
            return Err(ConfigError::Parse {
                line: *gline,
                msg: "geometry expects `rect-contour x0 y0 x1 y1` or `hline level side`".into(),
            })
        }
    };

    let k = num("perm.k")?;
    let beta = num("perm.beta")?;
    let alpha = if fields.contains_key("perm.alpha") { num("perm.alpha")? } else { 0.0 };
    let bulk = build_anisotropy(&AnisotropySpec { k, beta, alpha }).map_err(|e| {
        ConfigError::Validation { field: path("perm.k"), msg: e.to_string() }
    })?;

    let spec = TransitionLayerSpec {
        geometry,
        d_tl: num("d_tl")?,
        d_eps: if fields.contains_key("d_eps") { num("d_eps")? } else { 0.0 },
        d_k: if fields.contains_key("d_k") { num("d_k")? } else { 0.0 },
        theta_eps: if fields.contains_key("theta_eps") { num("theta_eps")? } else { 1.0 },
        theta_k: if fields.contains_key("theta_k") { num("theta_k")? } else { 1.0 },
        eps0: num("eps0")?,
        inv_perm0: bulk.inverse,
        kind,
    };
    spec.validate().map_err(|e| ConfigError::Validation {
        field: format!("material.region.{idx}"),
        msg: e.to_string(),
    })?;
    Ok(spec)
}

impl ParsedConfig {
    /// Bind boundary tags to mesh sides and produce the run configuration.
    pub fn resolve(&self, mesh: &TriMesh) -> Result<SimulationConfig, ConfigError> {
        for tag in &mesh.boundary_tags {
            if !self.bcs.contains_key(tag) {
                return Err(ConfigError::Validation {
                    field: format!("bc.{tag}"),
                    msg: "mesh boundary tag has no boundary condition".into(),
                });
            }
        }
        let bcs = ResolvedBcs::resolve(mesh, |_, tag| self.bcs[tag]);
        let mut config = SimulationConfig::new(bcs, self.dt, self.t_end);
        config.tolerances = self.tolerances;
        config.steady_tol = self.steady_tol;
        config.datum_point = self.datum_point;
        config.datum_value = self.datum_value;
        Ok(config)
    }

    /// Serialize back to the flat key-path format (archived with each run).
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "dt = {:e}", self.dt);
        let _ = writeln!(out, "t_end = {:e}", self.t_end);
        let _ = writeln!(out, "nu = {:e}", self.nu);
        let _ = writeln!(out, "ode_tol = {:e}", self.tolerances.ode_tol);
        let _ = writeln!(out, "pcg_tol = {:e}", self.tolerances.pcg_tol);
        let _ = writeln!(out, "cp1_toll = {:e}", self.tolerances.cp1_toll);
        if let Some(s) = self.steady_tol {
            let _ = writeln!(out, "steady_tol = {s:e}");
        }
        let _ = writeln!(out, "datum.point = {:e} {:e}", self.datum_point.x, self.datum_point.y);
        let _ = writeln!(out, "datum.value = {:e}", self.datum_value);
        let _ = writeln!(out, "output.every = {}", self.output_every);
        let mut tags: Vec<&String> = self.bcs.keys().collect();
        tags.sort();
        for tag in tags {
            let bc = match self.bcs[tag] {
                SideBc::Essential { velocity } => {
                    format!("essential {:e} {:e}", velocity.x, velocity.y)
                }
                SideBc::Natural { psi } => format!("natural {psi:e}"),
                SideBc::FreeSlip => "freeslip".into(),
            };
            let _ = writeln!(out, "bc.{tag} = {bc}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
        dt = 0.1
        t_end = 1.0
        nu = 1.5e-5
        bc.left = natural 0
    ";

    #[test]
    fn minimal_config_applies_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.tolerances.cp1_toll, 5e-4);
        assert_eq!(c.tolerances.pcg_tol, 1e-10);
        assert_eq!(c.tolerances.ode_tol, 1e-8);
        assert!(c.steady_tol.is_none());
        assert!(c.material.regions.is_empty());
    }

    #[test]
    fn negative_dt_rejected() {
        let err = parse_config("dt = -1\nt_end = 1\nnu = 1e-5\n").unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "dt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("dt = 1\nt_end = 1\nnu = 1e-5\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 4, .. }));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config("dt = 1\ndt = 2\nt_end = 1\nnu = 1e-5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
    }

    #[test]
    fn region_roundtrip() {
        let text = "
            dt = 10
            t_end = 100
            nu = 1.5e-5
            bc.left = natural 5e-7
            bc.right = natural 0
            bc.top = essential 0 0
            bc.bottom = essential 0 0
            material.region.0.kind = linear
            material.region.0.geometry = hline 0.25 fluid-below
            material.region.0.d_tl = 0.08333333333333333
            material.region.0.eps0 = 1.0
            material.region.0.perm.k = 5e-5
            material.region.0.perm.beta = 1
        ";
        let c = parse_config(text).unwrap();
        assert_eq!(c.material.regions.len(), 1);
        let r = &c.material.regions[0];
        assert_eq!(r.kind, ProfileKind::Linear);
        assert!(matches!(r.geometry, TlGeometry::HorizontalLine { fluid_below: true, .. }));
        approx::assert_relative_eq!(r.inv_perm0.xx, 2e4, max_relative = 1e-12);
        match c.bcs["left"] {
            SideBc::Natural { psi } => assert_eq!(psi, 5e-7),
            _ => panic!("left must be natural"),
        }
    }

    #[test]
    fn resolve_rejects_unknown_mesh_tag() {
        let mesh = crate::mesh::test_meshes::unit_right_triangle(); // tag "wall"
        let c = parse_config(MINIMAL).unwrap();
        let err = c.resolve(&mesh).unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "bc.wall"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
