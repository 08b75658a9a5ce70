//! Reader and writer for the planar subset of the g2o text format:
//!
//! ```text
//! VERTEX_SE2 id x y theta
//! EDGE_SE2 i j dx dy dtheta I11 I12 I13 I22 I23 I33
//! ```
//!
//! Ids are renumbered densely (in increasing id order) on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Vector2};

use crate::error::G2oError;
use crate::graph::{EdgeSE2, PoseGraph};
use crate::se2::Pose2;

#[derive(Clone, Debug)]
pub struct G2oLoad {
    pub graph: PoseGraph,
    /// Lines with an unrecognized tag.
    pub skipped: usize,
    /// Original id of each dense node index.
    pub original_ids: Vec<u64>,
}

struct RawEdge {
    i: u64,
    j: u64,
    t: Vector2<f64>,
    theta: f64,
    info: Matrix3<f64>,
}

fn fields<const N: usize>(toks: &[&str], line: usize, tag: &str) -> Result<[f64; N], G2oError> {
    if toks.len() < N {
        return Err(G2oError::Parse {
            line,
            message: format!("{tag} expects {N} numeric fields, found {}", toks.len()),
        });
    }
    let mut out = [0.0; N];
    for (k, tok) in toks.iter().take(N).enumerate() {
        out[k] = tok.parse().map_err(|_| G2oError::Parse {
            line,
            message: format!("{tag}: field {} is not a number: {tok:?}", k + 1),
        })?;
    }
    Ok(out)
}

fn parse_id(tok: Option<&&str>, line: usize) -> Result<u64, G2oError> {
    let tok = tok.ok_or_else(|| G2oError::Parse {
        line,
        message: "missing id".into(),
    })?;
    tok.parse().map_err(|_| G2oError::Parse {
        line,
        message: format!("invalid id {tok:?}"),
    })
}

pub fn parse_g2o<R: BufRead>(reader: R) -> Result<G2oLoad, G2oError> {
    let mut vertices: BTreeMap<u64, Pose2> = BTreeMap::new();
    let mut raw_edges = Vec::new();
    let mut skipped = 0;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        let Some(tag) = toks.first() else { continue };
        match *tag {
            "VERTEX_SE2" => {
                let id = parse_id(toks.get(1), line_no)?;
                let [x, y, th] = fields::<3>(&toks[2..], line_no, tag)?;
                vertices.insert(id, Pose2::new(x, y, th));
            }
            "EDGE_SE2" => {
                let i = parse_id(toks.get(1), line_no)?;
                let j = parse_id(toks.get(2), line_no)?;
                let v = fields::<9>(toks.get(3..).unwrap_or(&[]), line_no, tag)?;
                let info = Matrix3::new(v[3], v[4], v[5], v[4], v[6], v[7], v[5], v[7], v[8]);
                raw_edges.push(RawEdge {
                    i,
                    j,
                    t: Vector2::new(v[0], v[1]),
                    theta: v[2],
                    info,
                });
            }
            other => {
                skipped += 1;
                warn!("line {line_no}: skipping unsupported record {other}");
            }
        }
    }

    let mut ids: Vec<u64> = vertices.keys().copied().collect();
    ids.extend(raw_edges.iter().flat_map(|e| [e.i, e.j]));
    ids.sort_unstable();
    ids.dedup();
    let dense: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

    let nodes = ids
        .iter()
        .map(|id| vertices.get(id).copied().unwrap_or_default())
        .collect();
    let edges = raw_edges
        .into_iter()
        .map(|e| EdgeSE2 {
            i: dense[&e.i],
            j: dense[&e.j],
            meas_t: e.t,
            meas_theta: e.theta,
            info: e.info,
        })
        .collect();
    let graph = PoseGraph::new(nodes, edges).map_err(|err| G2oError::Parse {
        line: 0,
        message: err.to_string(),
    })?;
    Ok(G2oLoad {
        graph,
        skipped,
        original_ids: ids,
    })
}

pub fn parse_g2o_str(text: &str) -> Result<G2oLoad, G2oError> {
    parse_g2o(text.as_bytes())
}

pub fn read_g2o(path: impl AsRef<Path>) -> Result<G2oLoad, G2oError> {
    let f = std::fs::File::open(path)?;
    parse_g2o(std::io::BufReader::new(f))
}

/// Serializes with shortest round-trip float formatting, so parsing the
/// output reproduces every field exactly.
pub fn write_g2o(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (k, p) in graph.nodes.iter().enumerate() {
        writeln!(out, "VERTEX_SE2 {k} {} {} {}", p.t.x, p.t.y, p.theta()).unwrap();
    }
    for e in &graph.edges {
        let m = &e.info;
        writeln!(
            out,
            "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
            e.i,
            e.j,
            e.meas_t.x,
            e.meas_t.y,
            e.meas_theta,
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 2)]
        )
        .unwrap();
    }
    out
}

pub fn save_g2o(graph: &PoseGraph, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, write_g2o(graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_line() {
        let g = parse_g2o_str("VERTEX_SE2 0 1.0 2.0 0.5\n").unwrap().graph;
        assert_eq!(g.nodes, vec![Pose2::new(1.0, 2.0, 0.5)]);
    }

    #[test]
    fn edge_line_without_vertices() {
        let load = parse_g2o_str("EDGE_SE2 0 1 1.0 0.0 0.0 100 0 0 100 0 100\n").unwrap();
        let g = load.graph;
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.nodes[1], Pose2::identity());
        let e = &g.edges[0];
        assert_eq!((e.i, e.j), (0, 1));
        assert_eq!(e.meas_t, Vector2::new(1.0, 0.0));
        assert_eq!(e.meas_theta, 0.0);
        assert_eq!(e.info, Matrix3::from_diagonal_element(100.0));
    }

    #[test]
    fn upper_triangle_expands_symmetric() {
        let g = parse_g2o_str("EDGE_SE2 0 1 0 0 0 1 2 3 4 5 6\n").unwrap().graph;
        let m = g.edges[0].info;
        assert_eq!(m, m.transpose());
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 2)], 5.0);
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = "# header\nVERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 x 0 0 1 0 0 1 0 1\n";
        match parse_g2o_str(text) {
            Err(G2oError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_g2o_str("EDGE_SE2 0 1 0 0\n").is_err());
        assert!(parse_g2o_str("VERTEX_SE2 a 0 0 0\n").is_err());
    }

    #[test]
    fn unknown_tags_are_counted_and_comments_ignored() {
        let text = "FIX 0\nVERTEX_SE2 0 0 0 0 # origin\nVERTEX_XY 7 1 1\n\n";
        let load = parse_g2o_str(text).unwrap();
        assert_eq!(load.skipped, 2);
        assert_eq!(load.graph.num_nodes(), 1);
    }

    #[test]
    fn sparse_ids_are_renumbered() {
        let text = "VERTEX_SE2 10 0 0 0\nVERTEX_SE2 20 1 0 0\nEDGE_SE2 10 20 1 0 0 1 0 0 1 0 1\nEDGE_SE2 20 35 1 0 0 1 0 0 1 0 1\n";
        let load = parse_g2o_str(text).unwrap();
        assert_eq!(load.original_ids, vec![10, 20, 35]);
        assert_eq!((load.graph.edges[1].i, load.graph.edges[1].j), (1, 2));
        assert_eq!(load.graph.nodes[2], Pose2::identity());
    }

    #[test]
    fn writer_basics() {
        assert_eq!(write_g2o(&PoseGraph::default()), "");
        let g = PoseGraph::new(vec![Pose2::identity()], vec![]).unwrap();
        assert_eq!(write_g2o(&g), "VERTEX_SE2 0 0 0 0\n");
    }
}
