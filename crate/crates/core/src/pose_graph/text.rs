//! Plain-text edge list for inspecting a pose graph with other tools.
//!
//! ```text
//! WEIGHTS rel abs sm edge_weighting
//! VERTEX id qx qy qz qw tx ty tz
//! PRIOR id qx qy qz qw tx ty tz
//! EDGE i j qx qy qz qw tx ty tz shared cluster weight
//! ```
//!
//! Poses are world→camera (edges: `T_j ∘ T_i⁻¹`); `weight` is the effective
//! information scale of the edge and is ignored on reading.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::Vector3;

use super::{PgoWeights, PoseGraph, RelativeEdge};
use crate::geom::Pose;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("pose graph line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn pose_fields(p: &Pose) -> String {
    let q = p.quaternion_xyzw();
    let t = p.translation();
    format!("{} {} {} {} {} {} {}", q[0], q[1], q[2], q[3], t.x, t.y, t.z)
}

pub fn write_text<W: Write>(graph: &PoseGraph, mut w: W) -> std::io::Result<()> {
    let g = &graph.weights;
    writeln!(w, "WEIGHTS {} {} {} {}", g.rel, g.abs, g.sm, u8::from(g.edge_weighting))?;
    for (i, p) in graph.vertices.iter().enumerate() {
        writeln!(w, "VERTEX {i} {}", pose_fields(p))?;
    }
    for (i, p) in graph.priors.iter().enumerate() {
        writeln!(w, "PRIOR {i} {}", pose_fields(p))?;
    }
    for (&(i, j), e) in &graph.edges {
        writeln!(
            w,
            "EDGE {i} {j} {} {} {} {}",
            pose_fields(&e.measurement),
            e.shared,
            e.cluster,
            e.weight(g) * g.rel
        )?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<PoseGraph, TextError> {
    let mut weights = None;
    let mut vertices = BTreeMap::new();
    let mut priors = BTreeMap::new();
    let mut edges = BTreeMap::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let err = |message: String| TextError::Parse { line: n + 1, message };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        let num = |k: usize| -> Result<f64, TextError> {
            f.get(k)
                .ok_or_else(|| err(format!("missing field {k}")))?
                .parse::<f64>()
                .map_err(|e| err(format!("field {k}: {e}")))
        };
        let int = |k: usize| -> Result<u32, TextError> {
            f.get(k)
                .ok_or_else(|| err(format!("missing field {k}")))?
                .parse::<u32>()
                .map_err(|e| err(format!("field {k}: {e}")))
        };
        let pose = |k: usize| -> Result<Pose, TextError> {
            let q = [num(k)?, num(k + 1)?, num(k + 2)?, num(k + 3)?];
            if (q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(err("quaternion is not unit length".into()));
            }
            Ok(Pose::from_xyzw(q, Vector3::new(num(k + 4)?, num(k + 5)?, num(k + 6)?)))
        };
        let expect = |count: usize| {
            if f.len() == count {
                Ok(())
            } else {
                Err(err(format!("{} expects {} fields, found {}", f[0], count, f.len())))
            }
        };
        match f[0] {
            "WEIGHTS" => {
                expect(5)?;
                weights = Some(PgoWeights {
                    rel: num(1)?,
                    abs: num(2)?,
                    sm: num(3)?,
                    edge_weighting: int(4)? != 0,
                });
            }
            "VERTEX" => {
                expect(9)?;
                vertices.insert(int(1)?, pose(2)?);
            }
            "PRIOR" => {
                expect(9)?;
                priors.insert(int(1)?, pose(2)?);
            }
            "EDGE" => {
                expect(13)?;
                let (i, j) = (int(1)?, int(2)?);
                if i >= j {
                    return Err(err(format!("edge ({i}, {j}) is not ordered i < j")));
                }
                edges.insert(
                    (i, j),
                    RelativeEdge {
                        measurement: pose(3)?,
                        shared: int(10)? as usize,
                        cluster: int(11)?,
                    },
                );
            }
            other => return Err(err(format!("unknown record {other}"))),
        }
    }
    let n = vertices.len();
    let dense = |m: BTreeMap<u32, Pose>, what: &str| -> Result<Vec<Pose>, TextError> {
        if m.len() != n || m.keys().enumerate().any(|(k, &id)| k as u32 != id) {
            return Err(TextError::Parse {
                line: 0,
                message: format!("{what} ids must be exactly 0..{n}"),
            });
        }
        Ok(m.into_values().collect())
    };
    let vertices = dense(vertices, "vertex")?;
    let priors = dense(priors, "prior")?;
    if let Some(&(_, j)) = edges.keys().max_by_key(|(_, j)| *j) {
        if j as usize >= n {
            return Err(TextError::Parse {
                line: 0,
                message: format!("edge references vertex {j} of {n}"),
            });
        }
    }
    Ok(PoseGraph {
        vertices,
        priors,
        edges,
        weights: weights.unwrap_or_default(),
    })
}
