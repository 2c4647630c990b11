//! End-to-end exercises of the command layer: file formats, reproducibility
//! of artifacts, error surfacing, and the verification battery's verdicts.

use std::path::{Path, PathBuf};

use depo_lab::cli::{
    cmd_certify, cmd_couple, cmd_regen, cmd_simulate, cmd_solve, cmd_verify, ExperimentConfig,
    Overrides,
};
use depo_lab::{Error, RunManifest};

fn write_graph(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn p3_graph(dir: &Path) -> PathBuf {
    write_graph(dir, "p3.json", r#"{"n":3,"edges":[[0,1],[1,2]]}"#)
}

fn k3_graph(dir: &Path) -> PathBuf {
    write_graph(dir, "k3.json", r#"{"n":3,"edges":[[0,1],[0,2],[1,2]]}"#)
}

fn base_config(graph: PathBuf, out: PathBuf) -> ExperimentConfig {
    let overrides = Overrides {
        graph: Some(graph),
        seed: Some(1),
        out: Some(out),
        threads: Some(1),
        ..Default::default()
    };
    ExperimentConfig::from_sources(None, &overrides).unwrap()
}

fn read_out(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn payload(dir: &Path, name: &str) -> serde_json::Value {
    let doc: serde_json::Value = serde_json::from_str(&read_out(dir, name)).unwrap();
    assert!(doc["tool_version"].is_string());
    assert!(doc["config_sha256"].is_string());
    doc["payload"].clone()
}

#[test]
fn simulate_writes_monotone_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out.clone());
    cfg.horizon = 100;
    cfg.replicas = 2;
    let manifest = cmd_simulate(&cfg).unwrap();
    assert_eq!(manifest.artifacts.len(), 2);

    let text = read_out(&out, "trajectory_0.csv");
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# depo-lab"));
    assert_eq!(lines.next().unwrap(), "t,dropped_vertex,max_height,x_0,x_1,x_2");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    let mut last = 0i64;
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[0].parse::<usize>().unwrap(), i + 1);
        let m: i64 = cols[2].parse().unwrap();
        assert!(m >= last, "max height decreased at row {i}");
        last = m;
    }
}

#[test]
fn identical_configs_reproduce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let graph = p3_graph(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let mut cfg_a = base_config(graph.clone(), out_a.clone());
    cfg_a.horizon = 60;
    cfg_a.replicas = 3;
    let mut cfg_b = cfg_a.clone();
    cfg_b.out = out_b.clone();

    let man_a = cmd_simulate(&cfg_a).unwrap();
    let man_b = cmd_simulate(&cfg_b).unwrap();
    let digests = |m: &RunManifest| -> Vec<(String, String)> {
        m.artifacts.iter().map(|a| (a.file.clone(), a.sha256.clone())).collect()
    };
    // The output directory is an execution knob, not part of the
    // experiment: fingerprints and artifact bytes match across it.
    assert_eq!(man_a.config_sha256, man_b.config_sha256);
    assert_eq!(digests(&man_a), digests(&man_b));
    for artifact in &man_a.artifacts {
        assert_eq!(
            read_out(&out_a, &artifact.file),
            read_out(&out_b, &artifact.file),
            "artifact {} differs between identical runs",
            artifact.file
        );
    }
    let man_a2 = cmd_simulate(&cfg_a).unwrap();
    assert_eq!(man_a.config_sha256, man_a2.config_sha256);
    assert_eq!(digests(&man_a), digests(&man_a2));
}

#[test]
fn different_seeds_change_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let graph = p3_graph(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let mut cfg_a = base_config(graph.clone(), out_a.clone());
    cfg_a.horizon = 80;
    cfg_a.replicas = 1;
    let mut cfg_b = cfg_a.clone();
    cfg_b.seed = Some(2);
    cfg_b.out = out_b.clone();
    cmd_simulate(&cfg_a).unwrap();
    cmd_simulate(&cfg_b).unwrap();
    let body = |p: &Path| {
        read_out(p, "trajectory_0.csv")
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_ne!(body(&out_a), body(&out_b));
}

#[test]
fn complete_graph_trajectory_counts_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(k3_graph(dir.path()), out.clone());
    cfg.horizon = 50;
    cfg.replicas = 1;
    cmd_simulate(&cfg).unwrap();
    for (i, row) in read_out(&out, "trajectory_0.csv").lines().skip(2).enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2].parse::<i64>().unwrap(), i as i64 + 1);
    }
}

#[test]
fn solve_reports_uniform_triangle_distribution_and_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(k3_graph(dir.path()), out.clone());
    cfg.depth_bound = Some(12);
    let manifest = cmd_solve(&cfg).unwrap();
    assert!(manifest.certificate.is_some());

    let doc = payload(&out, "distribution.json");
    assert!((doc["rate"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let entries = doc["distribution"]["entries"].as_object().unwrap();
    // Ties are transient on the triangle, so the stationary law projects
    // onto the six strict vertex rankings; symmetry makes them uniform.
    let mut ranking_mass: std::collections::BTreeMap<Vec<usize>, f64> =
        std::collections::BTreeMap::new();
    for (key, p) in entries {
        let coords: Vec<i64> = key
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(|t| t.parse().unwrap())
            .collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by_key(|&v| -coords[v]);
        *ranking_mass.entry(order).or_insert(0.0) += p.as_f64().unwrap();
    }
    assert_eq!(ranking_mass.len(), 6);
    for (order, mass) in &ranking_mass {
        assert!(
            (mass - 1.0 / 6.0).abs() < 1e-3,
            "ranking {order:?} has mass {mass}"
        );
    }

    let states = payload(&out, "states.json");
    assert!(states["states"].as_u64().unwrap() >= 6);
    assert_eq!(states["core_indices"].as_array().unwrap().len(), 3);
    let coords = read_out(&out, "transitions.txt");
    let header = coords.lines().nth(1).unwrap();
    let dims: Vec<usize> = header.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(dims[0] + 1, dims[1], "tail column is one past the square block");
}

#[test]
fn solve_on_a_single_vertex_is_a_point_mass_with_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path(), "k1.json", r#"{"n":1,"edges":[]}"#);
    let out = dir.path().join("run");
    let cfg = base_config(graph, out.clone());
    cmd_solve(&cfg).unwrap();
    let doc = payload(&out, "distribution.json");
    assert_eq!(doc["rate"].as_f64().unwrap(), 1.0);
    let entries = doc["distribution"]["entries"].as_object().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries["(0)"].as_f64().unwrap(), 1.0);
}

#[test]
fn solve_surfaces_a_too_small_depth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out);
    cfg.depth_bound = Some(1);
    match cmd_solve(&cfg) {
        Err(Error::DepthBoundTooSmall { bound: 1, needed }) => assert_eq!(needed, 2),
        other => panic!("expected a depth complaint, got {other:?}"),
    }
}

#[test]
fn regen_estimates_match_the_exact_answer_coarsely() {
    let dir = tempfile::tempdir().unwrap();
    let graph = k3_graph(dir.path());
    let out_exact = dir.path().join("exact");
    let out_regen = dir.path().join("regen");
    let mut cfg = base_config(graph, out_exact.clone());
    cfg.depth_bound = Some(8);
    cmd_solve(&cfg).unwrap();
    cfg.out = out_regen.clone();
    cfg.cycles = 4_000;
    cmd_regen(&cfg).unwrap();

    let exact = payload(&out_exact, "distribution.json");
    let est = payload(&out_regen, "distribution.json");
    let lookup = |doc: &serde_json::Value, key: &str| -> f64 {
        doc["distribution"]["entries"][key].as_f64().unwrap_or(0.0)
    };
    let anchor = "(-2,-1,0)";
    assert!((lookup(&exact, anchor) - lookup(&est, anchor)).abs() < 0.02);
    let record = &est["regeneration"];
    assert_eq!(record["cycles"].as_u64().unwrap(), 4_000);
    assert!(record["mean_return_time"].as_f64().unwrap() > 1.0);
}

#[test]
fn certify_writes_the_full_witness_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = base_config(p3_graph(dir.path()), out.clone());
    cmd_certify(&cfg).unwrap();
    let cert = payload(&out, "certificate.json");
    assert_eq!(cert["kind"].as_str().unwrap(), "iid");
    assert_eq!(cert["s"].as_u64().unwrap(), 6);
    assert!((cert["alpha"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-15);
    assert!((cert["alpha_prime"].as_f64().unwrap() - (1.0f64 / 3.0).powi(6)).abs() < 1e-15);
    assert_eq!(cert["construction_log"].as_array().unwrap().len(), 9);
}

#[test]
fn couple_writes_monotone_decay_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out.clone());
    cfg.replicas = 200;
    cfg.horizon = 12;
    cmd_couple(&cfg).unwrap();
    let text = read_out(&out, "coupling.csv");
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 13);
    let mut last = f64::INFINITY;
    for row in rows {
        let d: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(d <= last + 1e-12);
        last = d;
    }
    let summary = payload(&out, "coupling.json");
    assert_eq!(summary["pass"].as_bool().unwrap(), true);
}

#[test]
fn verify_passes_on_the_default_path_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out.clone());
    cfg.horizon = 400;
    cfg.replicas = 300;
    let (_, report) = cmd_verify(&cfg).unwrap();
    assert!(report.all_pass, "verdicts: {:?}", report.checks);
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    for expected in ["certificate", "coupling", "concentration", "bias", "growth-rate"] {
        assert!(names.contains(&expected), "missing check {expected}");
    }
    let doc = payload(&out, "verify_report.json");
    assert_eq!(doc["all_pass"].as_bool().unwrap(), true);
    assert_eq!(doc["seed"].as_u64().unwrap(), 1);
}

#[test]
fn verify_fails_the_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out);
    cfg.horizon = 200;
    cfg.replicas = 200;
    cfg.alpha_prime_scale = 1_000.0;
    let (_, report) = cmd_verify(&cfg).unwrap();
    assert!(!report.all_pass);
    let cert_check = report.checks.iter().find(|c| c.name == "certificate").unwrap();
    assert!(!cert_check.pass, "inflated demand should fail the matrix check");
}

#[test]
fn verify_reports_walk_rebuild_constants() {
    let dir = tempfile::tempdir().unwrap();
    // Triangle with a pendant vertex, plus an explicit driver arc set.
    let graph = write_graph(
        dir.path(),
        "paw.json",
        r#"{"n":4,"edges":[[0,1],[0,2],[1,2],[2,3]],
            "arcs":[[0,0],[1,1],[2,2],[3,3],[1,2],[1,0],[0,3],[0,2],[2,3],[2,1],[3,1]]}"#,
    );
    let out = dir.path().join("run");
    let overrides = Overrides {
        graph: Some(graph),
        seed: Some(3),
        out: Some(out),
        driver: Some("arc-walk".into()),
        horizon: Some(200),
        replicas: Some(150),
        threads: Some(1),
        ..Default::default()
    };
    let cfg = ExperimentConfig::from_sources(None, &overrides).unwrap();
    let (_, report) = cmd_verify(&cfg).unwrap();
    let rebuild = report.checks.iter().find(|c| c.name == "core-rebuild").unwrap();
    assert!(rebuild.pass);
    assert_eq!(rebuild.details["comm_time"].as_u64().unwrap(), 60);
    let lengths: Vec<u64> = rebuild.details["replay_lengths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(lengths, vec![4, 3, 6, 6]);
}

#[test]
fn manifest_records_every_artifact_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = base_config(p3_graph(dir.path()), out.clone());
    cfg.depth_bound = Some(8);
    let manifest = cmd_solve(&cfg).unwrap();
    let on_disk: serde_json::Value = serde_json::from_str(&read_out(&out, "manifest.json")).unwrap();
    assert_eq!(on_disk["command"].as_str().unwrap(), "solve");
    assert_eq!(
        on_disk["artifacts"].as_array().unwrap().len(),
        manifest.artifacts.len()
    );
    for artifact in &manifest.artifacts {
        let bytes = std::fs::read(out.join(&artifact.file)).unwrap();
        assert_eq!(bytes.len() as u64, artifact.bytes);
    }
    assert!(on_disk["timings_ms"].is_object());
    assert!(on_disk["certificate"]["s"].as_u64().unwrap() == 6);
}
