//! Headed CSV artifacts for graph inputs and refinement outputs.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::align::{FlowField, GRID_NODES};
use crate::error::{Error, Result};
use crate::graph::{build_graph, FilterMode, ImageId, ImageRef, KeypointInput, MatchGraph, PairMatches};
use crate::io::config::{FilterConfig, RATIO_UNSUPPORTED};
use crate::io::image::load_image;
use crate::io::table::{format_float, write_table, Row, Table};
use crate::optimize::{refine_query, GraphPartition, QueryHypothesis, Refinement};
use crate::Point2;

pub const KEYPOINTS_HEADER: [&str; 4] = ["image_id", "kp_id", "x", "y"];
pub const MATCHES_HEADER: [&str; 5] = ["image_a", "kp_a", "image_b", "kp_b", "similarity"];
pub const TRACKS_HEADER: [&str; 4] = ["node_id", "track_id", "component_id", "is_root"];
pub const REFINED_HEADER: [&str; 8] = ["image_id", "kp_id", "x0", "y0", "x", "y", "track_id", "component_id"];
/// Optional trailing column of the flows file.
pub const LOW_CONFIDENCE_COLUMN: &str = "low_confidence";

/// Flows header without the optional low-confidence column: endpoints,
/// spacing, then `dx_{gx}{gy}, dy_{gx}{gy}` per grid node with `gy` outer.
pub fn flows_header() -> Vec<String> {
    let mut h: Vec<String> = ["image_u", "kp_u", "image_v", "kp_v", "spacing"]
        .map(String::from)
        .to_vec();
    for (gx, gy) in GRID_NODES {
        h.push(format!("dx_{gx}{gy}"));
        h.push(format!("dy_{gx}{gy}"));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointRow {
    pub image_id: ImageId,
    pub kp_id: u32,
    pub position: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRow {
    pub image_a: ImageId,
    pub kp_a: u32,
    pub image_b: ImageId,
    pub kp_b: u32,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRow {
    pub image_u: ImageId,
    pub kp_u: u32,
    pub image_v: ImageId,
    pub kp_v: u32,
    pub spacing: f64,
    pub grid: [Point2; 9],
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackRow {
    pub node_id: usize,
    pub track_id: usize,
    pub component_id: usize,
    pub is_root: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedRow {
    pub image_id: ImageId,
    pub kp_id: u32,
    pub initial: Point2,
    pub position: Point2,
    pub track_id: usize,
    pub component_id: usize,
}

fn read_rows<T>(
    path: &Path,
    required: &[&str],
    optional: &[&str],
    mut parse: impl FnMut(&Row<'_>) -> Result<T>,
) -> Result<Vec<(u64, T)>> {
    let mut out = Vec::new();
    Table::open(path, required, optional)?.for_each(|row| {
        out.push((row.line, parse(row)?));
        Ok(())
    })?;
    Ok(out)
}

fn strip<T>(rows: Vec<(u64, T)>) -> Vec<T> {
    rows.into_iter().map(|(_, r)| r).collect()
}

fn read_keypoint_lines(path: &Path) -> Result<Vec<(u64, KeypointRow)>> {
    read_rows(path, &KEYPOINTS_HEADER, &[], |row| {
        Ok(KeypointRow {
            image_id: row.parse(0)?,
            kp_id: row.parse(1)?,
            position: Point2::new(row.finite(2)?, row.finite(3)?),
        })
    })
}

pub fn read_keypoints(path: &Path) -> Result<Vec<KeypointRow>> {
    read_keypoint_lines(path).map(strip)
}

pub fn write_keypoints(path: &Path, rows: &[KeypointRow]) -> Result<()> {
    write_table(
        path,
        &KEYPOINTS_HEADER,
        rows.iter().map(|r| {
            [
                r.image_id.to_string(),
                r.kp_id.to_string(),
                format_float(r.position.x),
                format_float(r.position.y),
            ]
        }),
    )
}

fn read_match_lines(path: &Path) -> Result<Vec<(u64, MatchRow)>> {
    read_rows(path, &MATCHES_HEADER, &[], |row| {
        let similarity = row.finite(4)?;
        if !(similarity > 0.0 && similarity <= 1.0) {
            return Err(row.error(4, format!("similarity {similarity} outside (0, 1]")));
        }
        Ok(MatchRow {
            image_a: row.parse(0)?,
            kp_a: row.parse(1)?,
            image_b: row.parse(2)?,
            kp_b: row.parse(3)?,
            similarity,
        })
    })
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRow>> {
    read_match_lines(path).map(strip)
}

pub fn write_matches(path: &Path, rows: &[MatchRow]) -> Result<()> {
    write_table(
        path,
        &MATCHES_HEADER,
        rows.iter().map(|r| {
            [
                r.image_a.to_string(),
                r.kp_a.to_string(),
                r.image_b.to_string(),
                r.kp_b.to_string(),
                format_float(r.similarity),
            ]
        }),
    )
}

fn read_flow_lines(path: &Path) -> Result<Vec<(u64, FlowRow)>> {
    let header = flows_header();
    let required: Vec<&str> = header.iter().map(String::as_str).collect();
    read_rows(path, &required, &[LOW_CONFIDENCE_COLUMN], |row| {
        let spacing = row.finite(4)?;
        if !(spacing > 0.0) {
            return Err(row.error(4, format!("spacing {spacing} must be positive")));
        }
        let mut grid = [Point2::zeros(); 9];
        for (k, g) in grid.iter_mut().enumerate() {
            // Non-finite displacements are accepted here and reported by the
            // solver against the edge they belong to.
            *g = Point2::new(row.parse(5 + 2 * k)?, row.parse(6 + 2 * k)?);
        }
        let low_confidence = if row.has_column(LOW_CONFIDENCE_COLUMN) {
            row.flag(23)?
        } else {
            false
        };
        Ok(FlowRow {
            image_u: row.parse(0)?,
            kp_u: row.parse(1)?,
            image_v: row.parse(2)?,
            kp_v: row.parse(3)?,
            spacing,
            grid,
            low_confidence,
        })
    })
}

pub fn read_flows(path: &Path) -> Result<Vec<FlowRow>> {
    read_flow_lines(path).map(strip)
}

/// The low-confidence column is written only when some row is flagged.
pub fn write_flows(path: &Path, rows: &[FlowRow]) -> Result<()> {
    let mut header = flows_header();
    let flagged = rows.iter().any(|r| r.low_confidence);
    if flagged {
        header.push(LOW_CONFIDENCE_COLUMN.into());
    }
    write_table(
        path,
        &header,
        rows.iter().map(|r| {
            let mut out = vec![
                r.image_u.to_string(),
                r.kp_u.to_string(),
                r.image_v.to_string(),
                r.kp_v.to_string(),
                format_float(r.spacing),
            ];
            for g in &r.grid {
                out.push(format_float(g.x));
                out.push(format_float(g.y));
            }
            if flagged {
                out.push(u8::from(r.low_confidence).to_string());
            }
            out
        }),
    )
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRow>> {
    read_rows(path, &TRACKS_HEADER, &[], |row| {
        Ok(TrackRow {
            node_id: row.parse(0)?,
            track_id: row.parse(1)?,
            component_id: row.parse(2)?,
            is_root: row.flag(3)?,
        })
    })
    .map(strip)
}

pub fn write_tracks(path: &Path, rows: &[TrackRow]) -> Result<()> {
    write_table(
        path,
        &TRACKS_HEADER,
        rows.iter().map(|r| {
            [
                r.node_id.to_string(),
                r.track_id.to_string(),
                r.component_id.to_string(),
                u8::from(r.is_root).to_string(),
            ]
        }),
    )
}

fn read_refined_lines(path: &Path) -> Result<Vec<(u64, RefinedRow)>> {
    read_rows(path, &REFINED_HEADER, &[], |row| {
        Ok(RefinedRow {
            image_id: row.parse(0)?,
            kp_id: row.parse(1)?,
            initial: Point2::new(row.finite(2)?, row.finite(3)?),
            position: Point2::new(row.finite(4)?, row.finite(5)?),
            track_id: row.parse(6)?,
            component_id: row.parse(7)?,
        })
    })
}

pub fn read_refined(path: &Path) -> Result<Vec<RefinedRow>> {
    read_refined_lines(path).map(strip)
}

pub fn write_refined(path: &Path, rows: &[RefinedRow]) -> Result<()> {
    write_table(
        path,
        &REFINED_HEADER,
        rows.iter().map(|r| {
            [
                r.image_id.to_string(),
                r.kp_id.to_string(),
                format_float(r.initial.x),
                format_float(r.initial.y),
                format_float(r.position.x),
                format_float(r.position.y),
                r.track_id.to_string(),
                r.component_id.to_string(),
            ]
        }),
    )
}

/// Keypoints of `graph` at their initial positions, in node order.
pub fn graph_keypoints(graph: &MatchGraph) -> Vec<KeypointRow> {
    graph
        .nodes()
        .iter()
        .map(|k| KeypointRow {
            image_id: k.image_id,
            kp_id: k.kp_id,
            position: k.initial_position,
        })
        .collect()
}

/// One row per match, oriented like its even directed edge.
pub fn graph_matches(graph: &MatchGraph) -> Vec<MatchRow> {
    (0..graph.num_edges())
        .step_by(2)
        .map(|e| {
            let edge = graph.edge(e);
            let (a, b) = (graph.node(edge.from_node), graph.node(edge.to_node));
            MatchRow {
                image_a: a.image_id,
                kp_a: a.kp_id,
                image_b: b.image_id,
                kp_b: b.kp_id,
                similarity: edge.similarity,
            }
        })
        .collect()
}

/// Flow rows of every edge that carries a field, in edge order.
pub fn graph_flows(graph: &MatchGraph) -> Vec<FlowRow> {
    graph
        .edges()
        .iter()
        .filter_map(|edge| {
            let f = edge.flow.as_ref()?;
            let (u, v) = (graph.node(edge.from_node), graph.node(edge.to_node));
            Some(FlowRow {
                image_u: u.image_id,
                kp_u: u.kp_id,
                image_v: v.image_id,
                kp_v: v.kp_id,
                spacing: f.spacing,
                grid: f.grid,
                low_confidence: f.low_confidence,
            })
        })
        .collect()
}

pub fn track_rows(partition: &GraphPartition) -> Vec<TrackRow> {
    let component = partition.component_of();
    let fixed = partition.fixed_mask();
    (0..partition.assignment.num_nodes())
        .map(|n| TrackRow {
            node_id: n,
            track_id: partition.assignment.track_of(n),
            component_id: component[n],
            is_root: fixed[n],
        })
        .collect()
}

pub fn refined_rows(graph: &MatchGraph, refinement: &Refinement) -> Vec<RefinedRow> {
    let component = refinement.partition.component_of();
    graph
        .nodes()
        .iter()
        .map(|k| RefinedRow {
            image_id: k.image_id,
            kp_id: k.kp_id,
            initial: k.initial_position,
            position: refinement.positions[k.node_id],
            track_id: refinement.partition.assignment.track_of(k.node_id),
            component_id: component[k.node_id],
        })
        .collect()
}

/// Path of the image with id `image_id` inside an images directory.
pub fn image_path(dir: &Path, image_id: ImageId) -> std::path::PathBuf {
    dir.join(format!("{image_id}.pgm"))
}

/// Loads keypoints and matches into a graph, dropping matches below the
/// similarity floor of `filter`. Images are grouped in order of
/// first appearance in the keypoints file. With `images_dir`, pixels are read
/// from `{images_dir}/{image_id}.pgm`; without it, each image is sized to
/// enclose its keypoints and carries no pixels.
pub fn load_graph(
    keypoints_path: &Path,
    matches_path: &Path,
    images_dir: Option<&Path>,
    filter: Option<&FilterConfig>,
) -> Result<MatchGraph> {
    let keypoints = read_keypoint_lines(keypoints_path)?;
    assemble_graph(keypoints_path, &keypoints, matches_path, images_dir, filter)
}

/// Loads a refined keypoints file with its matches. The graph holds the
/// initial positions; the refined ones are returned alongside, in node order.
pub fn load_refined_graph(refined_path: &Path, matches_path: &Path) -> Result<(MatchGraph, Vec<Point2>)> {
    let rows = read_refined_lines(refined_path)?;
    let keypoints: Vec<(u64, KeypointRow)> = rows
        .iter()
        .map(|(line, r)| {
            (
                *line,
                KeypointRow {
                    image_id: r.image_id,
                    kp_id: r.kp_id,
                    position: r.initial,
                },
            )
        })
        .collect();
    let graph = assemble_graph(refined_path, &keypoints, matches_path, None, None)?;
    let mut positions = vec![Point2::zeros(); graph.num_nodes()];
    for (_, r) in &rows {
        let n = graph
            .node_by_keypoint(r.image_id, r.kp_id)
            .expect("every row became a node");
        positions[n] = r.position;
    }
    Ok((graph, positions))
}

fn assemble_graph(
    keypoints_path: &Path,
    keypoints: &[(u64, KeypointRow)],
    matches_path: &Path,
    images_dir: Option<&Path>,
    filter: Option<&FilterConfig>,
) -> Result<MatchGraph> {
    let mut matches = read_match_lines(matches_path)?;
    match filter {
        None => {}
        Some(FilterConfig {
            mode: FilterMode::Similarity,
            threshold,
        }) => matches.retain(|(_, m)| m.similarity >= *threshold),
        Some(FilterConfig {
            mode: FilterMode::Ratio,
            ..
        }) => return Err(Error::InvalidInput(RATIO_UNSUPPORTED.into())),
    }

    let mut order: Vec<ImageId> = Vec::new();
    let mut lists: HashMap<ImageId, Vec<KeypointInput>> = HashMap::new();
    let mut index: HashMap<(ImageId, u32), usize> = HashMap::new();
    for (line, k) in keypoints {
        let list = lists.entry(k.image_id).or_insert_with(|| {
            order.push(k.image_id);
            Vec::new()
        });
        if index.insert((k.image_id, k.kp_id), list.len()).is_some() {
            return Err(Error::Schema {
                path: keypoints_path.to_path_buf(),
                line: *line,
                column: "kp_id".into(),
                message: format!("duplicate keypoint {} in image {}", k.kp_id, k.image_id),
            });
        }
        list.push(KeypointInput {
            kp_id: k.kp_id,
            position: k.position,
        });
    }

    let mut pairs: Vec<PairMatches> = Vec::new();
    let mut pair_slot: HashMap<(ImageId, ImageId), usize> = HashMap::new();
    let mut seen: HashSet<((ImageId, u32), (ImageId, u32))> = HashSet::new();
    for (line, m) in &matches {
        let schema = |column: &str, message: String| Error::Schema {
            path: matches_path.to_path_buf(),
            line: *line,
            column: column.into(),
            message,
        };
        let a = *index
            .get(&(m.image_a, m.kp_a))
            .ok_or_else(|| schema("kp_a", format!("unknown keypoint {} in image {}", m.kp_a, m.image_a)))?;
        let b = *index
            .get(&(m.image_b, m.kp_b))
            .ok_or_else(|| schema("kp_b", format!("unknown keypoint {} in image {}", m.kp_b, m.image_b)))?;
        if m.image_a == m.image_b {
            return Err(schema(
                "image_b",
                format!("match within a single image ({})", m.image_a),
            ));
        }
        let (ka, kb) = ((m.image_a, m.kp_a), (m.image_b, m.kp_b));
        if !seen.insert((ka.min(kb), ka.max(kb))) {
            return Err(schema("kp_b", "duplicate match".into()));
        }
        let slot = *pair_slot.entry((m.image_a, m.image_b)).or_insert_with(|| {
            pairs.push(PairMatches {
                image_a: m.image_a,
                image_b: m.image_b,
                matches: Vec::new(),
            });
            pairs.len() - 1
        });
        pairs[slot].matches.push((a, b, m.similarity));
    }

    let mut images = Vec::with_capacity(order.len());
    let mut kp_lists = Vec::with_capacity(order.len());
    for id in order {
        let kps = lists.remove(&id).expect("every ordered image has a list");
        let image = match images_dir {
            Some(dir) => load_image(&image_path(dir, id), id)?,
            None => {
                let w = kps.iter().map(|k| k.position.x).fold(0.0, f64::max);
                let h = kps.iter().map(|k| k.position.y).fold(0.0, f64::max);
                ImageRef::new(id, w.floor() as usize + 1, h.floor() as usize + 1)?
            }
        };
        images.push(image);
        kp_lists.push(kps);
    }
    build_graph(images, kp_lists, &pairs)
}

/// Attaches the flows in `path` to the matching directed edges of `graph`.
pub fn load_flows(path: &Path, graph: &mut MatchGraph) -> Result<usize> {
    let rows = read_flow_lines(path)?;
    let mut count = 0;
    for (line, r) in rows {
        let schema = |column: &str, message: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            column: column.into(),
            message,
        };
        let u = graph
            .node_by_keypoint(r.image_u, r.kp_u)
            .ok_or_else(|| schema("kp_u", format!("unknown keypoint {} in image {}", r.kp_u, r.image_u)))?;
        let v = graph
            .node_by_keypoint(r.image_v, r.kp_v)
            .ok_or_else(|| schema("kp_v", format!("unknown keypoint {} in image {}", r.kp_v, r.image_v)))?;
        let e = graph
            .find_edge(u, v)
            .ok_or_else(|| schema("kp_v", format!("no match between nodes {u} and {v}")))?;
        graph.set_flow(
            e,
            FlowField {
                grid: r.grid,
                spacing: r.spacing,
                from_node: u,
                to_node: v,
                low_confidence: r.low_confidence,
            },
        );
        count += 1;
    }
    Ok(count)
}

pub const HYPOTHESES_HEADER: [&str; 6] = ["image_id", "kp_id", "hypothesis_id", "similarity", "dx", "dy"];
pub const QUERY_RESULTS_HEADER: [&str; 7] = ["image_id", "kp_id", "hypothesis_id", "x0", "y0", "x", "y"];

/// One observation of a 3D-point hypothesis by a query keypoint: the flow
/// from a matched database keypoint into the query image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisRow {
    pub image_id: ImageId,
    pub kp_id: u32,
    pub hypothesis_id: u64,
    pub similarity: f64,
    pub flow: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResultRow {
    pub image_id: ImageId,
    pub kp_id: u32,
    pub hypothesis_id: u64,
    pub initial: Point2,
    pub position: Point2,
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<HypothesisRow>> {
    read_rows(path, &HYPOTHESES_HEADER, &[], |row| {
        let similarity = row.finite(3)?;
        if !(similarity > 0.0) {
            return Err(row.error(3, format!("similarity {similarity} must be positive")));
        }
        Ok(HypothesisRow {
            image_id: row.parse(0)?,
            kp_id: row.parse(1)?,
            hypothesis_id: row.parse(2)?,
            similarity,
            flow: Point2::new(row.finite(4)?, row.finite(5)?),
        })
    })
    .map(strip)
}

pub fn write_hypotheses(path: &Path, rows: &[HypothesisRow]) -> Result<()> {
    write_table(
        path,
        &HYPOTHESES_HEADER,
        rows.iter().map(|r| {
            [
                r.image_id.to_string(),
                r.kp_id.to_string(),
                r.hypothesis_id.to_string(),
                format_float(r.similarity),
                format_float(r.flow.x),
                format_float(r.flow.y),
            ]
        }),
    )
}

pub fn write_query_results(path: &Path, rows: &[QueryResultRow]) -> Result<()> {
    write_table(
        path,
        &QUERY_RESULTS_HEADER,
        rows.iter().map(|r| {
            [
                r.image_id.to_string(),
                r.kp_id.to_string(),
                r.hypothesis_id.to_string(),
                format_float(r.initial.x),
                format_float(r.initial.y),
                format_float(r.position.x),
                format_float(r.position.y),
            ]
        }),
    )
}

/// Refines every query keypoint against its hypotheses. Queries keep the
/// order of `queries`; hypotheses are listed in order of first appearance.
pub fn refine_queries(queries: &[KeypointRow], hypotheses: &[HypothesisRow]) -> Result<Vec<QueryResultRow>> {
    let mut grouped: HashMap<(ImageId, u32), Vec<QueryHypothesis>> = HashMap::new();
    for h in hypotheses {
        let list = grouped.entry((h.image_id, h.kp_id)).or_default();
        match list.iter_mut().find(|q| q.id == h.hypothesis_id) {
            Some(q) => q.observations.push((h.similarity, h.flow)),
            None => list.push(QueryHypothesis {
                id: h.hypothesis_id,
                observations: vec![(h.similarity, h.flow)],
            }),
        }
    }
    let known: HashSet<(ImageId, u32)> = queries.iter().map(|q| (q.image_id, q.kp_id)).collect();
    if let Some(h) = hypotheses.iter().find(|h| !known.contains(&(h.image_id, h.kp_id))) {
        return Err(Error::InvalidInput(format!(
            "hypothesis {} refers to unknown query keypoint {} of image {}",
            h.hypothesis_id, h.kp_id, h.image_id
        )));
    }
    let mut out = Vec::new();
    for q in queries {
        let Some(list) = grouped.get(&(q.image_id, q.kp_id)) else {
            continue;
        };
        for (position, hypothesis_id) in refine_query(q.position, list)? {
            out.push(QueryResultRow {
                image_id: q.image_id,
                kp_id: q.kp_id,
                hypothesis_id,
                initial: q.position,
                position,
            });
        }
    }
    Ok(out)
}
