use std::fs;
use std::path::Path;

use kprefine::io::{
    format_float, graph_flows, graph_keypoints, graph_matches, load_flows, load_graph, read_flows, read_keypoints,
    read_report, read_scene, refined_rows, track_rows, write_flows, write_keypoints, write_matches, write_refined,
    write_report, write_scene, write_tracks, PipelineConfig, Report, SynthConfig,
};
use kprefine::pipeline::{evaluate_positions, refine_stage, synthesize};
use kprefine::synth::SceneConfig;
use kprefine::{Error, Point2, SolverOptions};
use tempfile::TempDir;

fn small_synth() -> kprefine::pipeline::SynthOutput {
    let config = SynthConfig {
        scene: SceneConfig {
            num_views: 3,
            width: 160,
            height: 120,
            num_keypoints: 12,
            ..SceneConfig::default()
        },
        ..SynthConfig::default()
    };
    synthesize(&config, 5).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn floats_round_trip_exactly() {
    for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE, 7.0] {
        assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

#[test]
fn graph_artifacts_rewrite_to_identical_bytes() {
    let out = small_synth();
    let dir = TempDir::new().unwrap();
    let (kp, matches, flows) = (
        dir.path().join("kp.csv"),
        dir.path().join("m.csv"),
        dir.path().join("f.csv"),
    );
    write_keypoints(&kp, &graph_keypoints(&out.graph)).unwrap();
    write_matches(&matches, &graph_matches(&out.graph)).unwrap();
    write_flows(&flows, &graph_flows(&out.graph)).unwrap();

    let mut graph = load_graph(&kp, &matches, None, None).unwrap();
    assert_eq!(load_flows(&flows, &mut graph).unwrap(), out.graph.num_edges());
    for (a, b) in graph.nodes().iter().zip(out.graph.nodes()) {
        assert_eq!(
            (a.image_id, a.kp_id, a.initial_position),
            (b.image_id, b.kp_id, b.initial_position)
        );
    }
    for (a, b) in graph.edges().iter().zip(out.graph.edges()) {
        assert_eq!(a, b);
    }

    let again = TempDir::new().unwrap();
    let names = ["kp.csv", "m.csv", "f.csv"];
    write_keypoints(&again.path().join(names[0]), &graph_keypoints(&graph)).unwrap();
    write_matches(&again.path().join(names[1]), &graph_matches(&graph)).unwrap();
    write_flows(&again.path().join(names[2]), &graph_flows(&graph)).unwrap();
    for name in names {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn refinement_artifacts_and_report_round_trip() {
    let out = small_synth();
    let dir = TempDir::new().unwrap();
    let result = refine_stage(&out.graph, &SolverOptions::default()).unwrap();
    let evaluation = evaluate_positions(&out.scene, &out.graph, &result.refinement.positions, &[1.0, 2.0]).unwrap();
    write_refined(
        &dir.path().join("refined.csv"),
        &refined_rows(&out.graph, &result.refinement),
    )
    .unwrap();
    write_tracks(
        &dir.path().join("tracks.csv"),
        &track_rows(&result.refinement.partition),
    )
    .unwrap();
    let report = Report {
        refinement: Some(result.report),
        evaluation: Some(evaluation),
    };
    let path = dir.path().join("report.json");
    write_report(&path, &report).unwrap();
    assert_eq!(read_report(&path).unwrap(), report);
    let refinement = report.refinement.unwrap();
    assert!(refinement.initial_objective >= refinement.final_objective);
}

#[test]
fn scene_dump_round_trips() {
    let out = small_synth();
    let dir = TempDir::new().unwrap();
    write_scene(dir.path(), &out.scene, &out.perturbed).unwrap();
    let (scene, perturbed) = read_scene(dir.path(), false).unwrap();
    assert_eq!(perturbed, out.perturbed);
    assert_eq!(scene.homographies, out.scene.homographies);
    assert_eq!(scene.projections, out.scene.projections);
    for (a, b) in scene.canonical_points.iter().zip(&out.scene.canonical_points) {
        assert!((a - b).norm() < 1e-9);
    }
    let (with_pixels, _) = read_scene(dir.path(), true).unwrap();
    assert!(with_pixels.images.iter().all(|i| i.has_pixels()));
}

#[test]
fn unknown_keypoint_is_reported_with_its_line() {
    let dir = TempDir::new().unwrap();
    let kp = write(dir.path(), "kp.csv", "image_id,kp_id,x,y\n0,0,1,1\n1,0,2,2\n");
    let m = write(
        dir.path(),
        "m.csv",
        "image_a,kp_a,image_b,kp_b,similarity\n0,0,1,0,0.9\n0,0,1,7,0.5\n",
    );
    match load_graph(&kp, &m, None, None) {
        Err(Error::Schema { line, column, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(column, "kp_b");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn bad_values_and_headers_are_rejected() {
    let dir = TempDir::new().unwrap();
    let kp = write(dir.path(), "kp.csv", "image_id,kp_id,x,y\n0,0,abc,1\n");
    assert!(matches!(read_keypoints(&kp), Err(Error::Schema { line: 2, ref column, .. }) if column == "x"));

    let kp = write(dir.path(), "kp2.csv", "image,kp,x,y\n0,0,1,1\n");
    assert!(matches!(read_keypoints(&kp), Err(Error::Header { .. })));

    let m = write(
        dir.path(),
        "m.csv",
        "image_a,kp_a,image_b,kp_b,similarity\n0,0,1,0,1.5\n",
    );
    assert!(matches!(
        kprefine::io::read_matches(&m),
        Err(Error::Schema { ref column, .. }) if column == "similarity"
    ));
}

#[test]
fn short_flow_row_is_an_arity_error() {
    let out = small_synth();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("f.csv");
    write_flows(&path, &graph_flows(&out.graph)).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    // Drop the last displacement so the row holds 17 floats instead of 18.
    let cut = lines[1].rfind(',').unwrap();
    lines[1].truncate(cut);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_flows(&path) {
        Err(Error::Schema { line, column, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(column, "dy_11");
        }
        other => panic!("expected an arity error, got {other:?}"),
    }
}

#[test]
fn config_rejects_unknown_keys_and_accepts_known_ones() {
    let dir = TempDir::new().unwrap();
    let good = write(
        dir.path(),
        "good.json",
        r#"{"solver": {"K": 8, "cauchy_scale": 2, "tukey_scale": 1, "mode": "intra-only", "max_iterations": 50}}"#,
    );
    let config = PipelineConfig::from_file(&good).unwrap();
    assert_eq!(config.solver.bound, 8.0);
    assert_eq!(config.solver.mode, kprefine::Mode::IntraOnly);

    let bad = write(dir.path(), "bad.json", r#"{"solver": {"K": 8, "typo": 1}}"#);
    assert!(PipelineConfig::from_file(&bad).is_err());
    let bad = write(dir.path(), "bad2.json", r#"{"solvr": {}}"#);
    assert!(PipelineConfig::from_file(&bad).is_err());
}

#[test]
fn keypoint_rows_survive_a_round_trip() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<_> = (0..20)
        .map(|i| kprefine::io::KeypointRow {
            image_id: i % 3,
            kp_id: i,
            position: Point2::new(f64::from(i) / 7.0, 1e-3 * f64::from(i).sqrt()),
        })
        .collect();
    let path = dir.path().join("kp.csv");
    write_keypoints(&path, &rows).unwrap();
    assert_eq!(read_keypoints(&path).unwrap(), rows);
}
