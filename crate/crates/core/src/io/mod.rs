//! File artifacts and configuration.
//!
//! Every tabular artifact is a headed CSV file. Floats are written in their
//! shortest exact decimal form, so reading a file and writing it back yields
//! the same bytes.

mod artifacts;
mod config;
mod image;
mod report;
mod scene;
mod table;

pub use artifacts::{
    flows_header, graph_flows, graph_keypoints, graph_matches, image_path, load_flows, load_graph, load_refined_graph,
    read_flows, read_hypotheses, read_keypoints, read_matches, read_refined, read_tracks, refine_queries, refined_rows,
    track_rows, write_flows, write_hypotheses, write_keypoints, write_matches, write_query_results, write_refined,
    write_tracks, FlowRow, HypothesisRow, KeypointRow, MatchRow, QueryResultRow, RefinedRow, TrackRow,
    HYPOTHESES_HEADER, KEYPOINTS_HEADER, LOW_CONFIDENCE_COLUMN, MATCHES_HEADER, QUERY_RESULTS_HEADER, REFINED_HEADER,
    TRACKS_HEADER,
};
pub use config::{FilterConfig, PipelineConfig, SynthConfig};
pub use image::{load_image, save_image};
pub use report::{
    read_report, write_mma_curve, write_report, ComponentStats, EvaluationReport, RefinementReport, Report,
};
pub use scene::{
    read_homographies, read_scene, write_scene, HOMOGRAPHIES_FILE, IMAGES_DIR, PERTURBED_KEYPOINTS_FILE,
    SCENE_CONFIG_FILE, TRUE_KEYPOINTS_FILE,
};
pub use table::format_float;
