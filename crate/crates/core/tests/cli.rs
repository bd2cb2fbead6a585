use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spatial_ordinal::diagnostics::{read_diagnostics_csv, read_waic_json};
use spatial_ordinal::model::{CutpointMode, Dimensions, ModelSpec, SurveyDataset, Variant};
use spatial_ordinal::posterior::{
    read_poststrat_csv, read_predictive_csv, ArealSummary, CorrelationReport,
};
use spatial_ordinal::sampler::read_archive;
use spatial_ordinal::synth::{generate_dataset, grid_graph, TrueParameters, TruthRecord};

fn spord(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spord"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// K = 2, 3x3 grid, 200 respondents.
fn tiny_fixture(dir: &Path) {
    let spec = ModelSpec::new(
        Variant::Corr,
        CutpointMode::Shared,
        false,
        Dimensions {
            categories: 4,
            variables: 2,
            cells: 2,
            areas: 9,
        },
    )
    .unwrap();
    let g = grid_graph(3, 3).unwrap();
    let mut truth = TrueParameters::neutral(&spec, 22);
    truth.area_sizes[4] = 24;
    truth.state.mixing[(0, 1)] = 0.6;
    let survey = generate_dataset(&truth, &spec, &g, 5).unwrap();
    assert_eq!(survey.data.num_respondents(), 200);
    survey.data.write_csv(dir.join("data.csv")).unwrap();
    spatial_ordinal::graph::write_adjacency(&g, dir.join("adj.txt")).unwrap();
    write(
        dir,
        "pop.csv",
        "cell,area,count\n1,1,10\n2,1,30\n1,2,5\n2,3,1\n1,4,2\n1,5,2\n1,6,2\n1,7,2\n1,8,2\n2,9,4\n",
    );
}

const TINY: &str = r#"
[paths]
dataset = "data.csv"
adjacency = "adj.txt"
output = "out"
population = "pop.csv"

[model]
variant = "corr"

[sampler]
chains = 2
iterations = 500
burn_in = 100
thin = 1
seed = 3

[reports]
area_filter = [2]
"#;

#[test]
fn tiny_pipeline_emits_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_fixture(dir);
    write(dir, "run.toml", TINY);
    let fit = spord(dir, &["fit", "--config", "run.toml"]);
    let code = fit.status.code().unwrap();
    assert!(
        code == 0 || code == 3,
        "{}",
        String::from_utf8_lossy(&fit.stderr)
    );
    if code == 3 {
        assert!(String::from_utf8_lossy(&fit.stderr).contains("convergence gates failed"));
    }
    let out = dir.join("out");
    for f in [
        "chain_0.csv",
        "chain_1.csv",
        "manifest.json",
        "diagnostics.csv",
        "waic.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (manifest, draws) = read_archive(&out).unwrap();
    assert_eq!(draws.total_draws(), 800);
    let recorded = manifest.run_config.unwrap();
    assert_eq!(recorded["sampler"]["iterations"], 500);
    assert!(!read_diagnostics_csv(out.join("diagnostics.csv"))
        .unwrap()
        .is_empty());
    let w = read_waic_json(out.join("waic.json")).unwrap();
    assert_eq!(w.n_obs, 400);

    for cmd in ["summarize", "predict", "poststratify", "diagnose"] {
        let o = spord(dir, &[cmd, "--config", "run.toml"]);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let areal = ArealSummary::read_csv(out.join("areal_summary.csv")).unwrap();
    assert_eq!(areal.mean.shape(), (9, 2));
    let text = fs::read_to_string(out.join("areal_summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 18);
    let corr = CorrelationReport::read_json(out.join("correlation_areal.json")).unwrap();
    assert_eq!(corr.mean[(0, 0)], 1.0);
    assert!(!out.join("correlation_individual.json").exists());
    assert!(out.join("pca.json").exists());
    assert_eq!(
        fs::read_to_string(out.join("relevance_map.csv"))
            .unwrap()
            .lines()
            .count(),
        19
    );

    let pred = read_predictive_csv(out.join("predictive.csv")).unwrap();
    assert_eq!(pred.len(), 8);
    for (area, model, row) in &pred {
        assert_eq!(area, "2");
        assert_eq!(model, "corr");
        assert!(row.lower <= row.predicted_mean && row.predicted_mean <= row.upper);
    }
    for v in [1, 2] {
        let s: f64 = pred
            .iter()
            .filter(|p| p.2.variable == v)
            .map(|p| p.2.observed)
            .sum();
        assert!((s - 100.0).abs() < 1e-9);
        let s: f64 = pred
            .iter()
            .filter(|p| p.2.variable == v)
            .map(|p| p.2.predicted_mean)
            .sum();
        assert!((s - 100.0).abs() < 1e-9);
    }

    let ps = read_poststrat_csv(out.join("poststrat.csv")).unwrap();
    assert_eq!(ps.len(), 9 * 2 * 4);
    for chunk in ps.chunks(4) {
        let s: f64 = chunk.iter().map(|r| r.mean).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_chain_diagnose_leaves_rhat_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_fixture(dir);
    write(dir, "run.toml", &TINY.replace("chains = 2", "chains = 1"));
    let fit = spord(dir, &["fit", "--config", "run.toml"]);
    assert_eq!(fit.status.code(), Some(3));
    let d = spord(
        dir,
        &["diagnose", "--config", "run.toml", "--output", "diag"],
    );
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    let text = fs::read_to_string(dir.join("diag/diagnostics.csv")).unwrap();
    assert!(text.starts_with("functional,rhat,ess,pass\n"));
    let report = read_diagnostics_csv(dir.join("diag/diagnostics.csv")).unwrap();
    assert!(report
        .iter()
        .all(|r| r.rhat.is_none() && r.ess > 0.0 && !r.pass));
    let first = text.lines().nth(1).unwrap();
    assert!(first.contains(",,"), "{first}");
}

#[test]
fn missing_adjacency_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_fixture(dir);
    write(
        dir,
        "run.toml",
        &TINY.replace("adjacency = \"adj.txt\"\n", ""),
    );
    let o = spord(dir, &["fit", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.adjacency"));
    write(dir, "run.toml", &TINY.replace("adj.txt", "nowhere.txt"));
    let o = spord(dir, &["fit", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.adjacency"));
}

#[test]
fn archive_schema_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_fixture(dir);
    write(
        dir,
        "run.toml",
        &TINY.replace("iterations = 500", "iterations = 150"),
    );
    spord(dir, &["fit", "--config", "run.toml"]);
    let manifest = dir.join("out/manifest.json");
    let text = fs::read_to_string(&manifest)
        .unwrap()
        .replace("\"corr\"", "\"corr_ire\"");
    fs::write(&manifest, text).unwrap();
    let o = spord(dir, &["summarize", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema mismatch"));
}

const SIMULATED: &str = r#"
[paths]
dataset = "sim/dataset.csv"
adjacency = "sim/adjacency.txt"

[model]
variant = "corr_ire"
cutpoint_mode = "per_cell"

[sampler]
chains = 2
iterations = 120
burn_in = 20
thin = 2

[simulate]
rows = 2
cols = 3
per_area = 8
cells = 2
mixing = [[1.0, 0.8], [0.0, 0.6]]
ire_mixing = [[1.0, 0.5], [0.0, 1.0]]
"#;

fn pipeline(dir: &Path, out: &str) {
    let o = spord(
        dir,
        &[
            "simulate", "--config", "run.toml", "--output", "sim", "--seed", "4",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = spord(
        dir,
        &[
            "fit", "--config", "run.toml", "--output", out, "--seed", "8",
        ],
    );
    assert!(matches!(o.status.code(), Some(0 | 3)));
    let o = spord(dir, &["summarize", "--config", "run.toml", "--output", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_fit_summarize_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "run.toml", SIMULATED);
    pipeline(dir, "a");
    let sim: Vec<u8> = fs::read(dir.join("sim/dataset.csv")).unwrap();
    pipeline(dir, "b");
    assert_eq!(sim, fs::read(dir.join("sim/dataset.csv")).unwrap());
    let files = [
        "chain_0.csv",
        "chain_1.csv",
        "diagnostics.csv",
        "waic.json",
        "areal_summary.csv",
        "relevance_map.csv",
        "correlation_areal.csv",
        "correlation_areal.json",
        "correlation_individual.csv",
        "correlation_individual.json",
        "pca.json",
    ];
    for f in files {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    // the manifests differ only in the recorded output directory
    let strip = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .replace("\"output\": \"a\"", "")
            .replace("\"output\": \"b\"", "")
    };
    assert_eq!(
        strip(&dir.join("a/manifest.json")),
        strip(&dir.join("b/manifest.json"))
    );

    let truth = TruthRecord::read_json(dir.join("sim/truth.json")).unwrap();
    assert_eq!(truth.spec.variant, Variant::CorrIre);
    let data = SurveyDataset::read_csv(dir.join("sim/dataset.csv"), 4, Some(2), Some(6)).unwrap();
    assert_eq!(data.num_respondents(), 48);
    let ind = CorrelationReport::read_json(dir.join("a/correlation_individual.json")).unwrap();
    assert_eq!(ind.mean.shape(), (2, 2));
}

#[test]
fn default_protocol_saves_a_thousand_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_fixture(dir);
    let protocol = TINY
        .replace("chains = 2", "chains = 5")
        .replace("iterations = 500", "iterations = 8000")
        .replace("burn_in = 100", "burn_in = 2000")
        .replace("thin = 1", "thin = 30");
    write(dir, "run.toml", &protocol);
    let o = spord(dir, &["fit", "--config", "run.toml"]);
    assert!(matches!(o.status.code(), Some(0 | 3)));
    let (manifest, draws) = read_archive(dir.join("out")).unwrap();
    assert_eq!(draws.total_draws(), 1000);
    assert!(manifest.chains.iter().all(|c| c.draws == 200));
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!spord(tmp.path(), &["bogus"]).status.success());
    let o = spord(tmp.path(), &["summarize"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.archive"));
}
