use std::fs;
use std::path::Path;

use rltb_core::campaign::{
    read_json, run_campaign, CampaignConfig, CampaignSummary, SafetySettings, SearchSettings,
};
use rltb_core::search::SearchResultJson;
use rltb_core::{Error, FuzzParams, PerfParams, PerfReport, VerdictStats};

fn write_grid(dir: &Path, pits: &[[usize; 2]], walls: &[[usize; 2]]) -> String {
    let path = dir.join("grid.json");
    let text = serde_json::json!({
        "width": 5, "height": 5, "start": [0, 0], "goal_cells": [[4, 4]],
        "pit_cells": pits, "wall_cells": walls, "slip_probability": 0.0,
        "reward_mode": "sparse"
    });
    fs::write(&path, text.to_string()).unwrap();
    format!("gridworld:{}", path.display())
}

fn config(env_spec: String, agent: &str, out: &Path) -> CampaignConfig {
    CampaignConfig {
        env_spec,
        agent_spec: agent.into(),
        extra_agents: Vec::new(),
        search: SearchSettings::default(),
        fuzz: FuzzParams { generations: 10, population_size: 12, ..FuzzParams::default() },
        safety: SafetySettings::default(),
        perf: PerfParams { step_width: 4, n_test: 3, n_ep: 2, ..PerfParams::default() },
        seed: 9,
        output_dir: out.to_path_buf(),
        jobs: 1,
    }
}

#[test]
fn walkthrough_campaign_writes_the_golden_search() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("fig2".into(), "scripted:always:a", tmp.path());
    cfg.search.repetitions = Some(1);
    run_campaign(&cfg).unwrap();
    let s: SearchResultJson = read_json(&tmp.path().join("search.json")).unwrap();
    assert_eq!(s.boundary_states, ["s1", "s7"]);
    assert_eq!(s.boundary_depths, [1, 3]);
    assert!(s.success);
    for f in ["fuzz_traces.json", "safety.csv", "perf.csv", "perf_simple.csv", "summary.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn into_pit_agent_fails_every_boundary_case() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_grid(tmp.path(), &[[2, 0], [2, 2]], &[]);
    let summary = run_campaign(&config(spec, "scripted:into-pit", &tmp.path().join("out"))).unwrap();
    assert_eq!(summary.agents[0].aggregate_fail_frequency, 1.0);
    assert!(summary.agents[0].n_cases > 0);
}

#[test]
fn summary_agrees_with_stage_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_grid(tmp.path(), &[[2, 0], [2, 2]], &[]);
    let out = tmp.path().join("out");
    let mut cfg = config(spec, "scripted:shortest-safe", &out);
    cfg.extra_agents = vec!["random:1".into(), "scripted:into-pit".into()];
    cfg.safety.suite = "interval:1".into();
    let summary = run_campaign(&cfg).unwrap();
    let from_disk: CampaignSummary = read_json(&out.join("summary.json")).unwrap();
    assert_eq!(from_disk, summary);
    assert_eq!(summary.agents.len(), 3);
    assert!(summary.agents.iter().all(|a| a.n_cases > 0));
    for agent in &summary.agents {
        let dir = out.join(&agent.artifacts);
        let stats = VerdictStats::read_csv(fs::File::open(dir.join("safety.csv")).unwrap()).unwrap();
        assert_eq!(stats.aggregate_fail_frequency, agent.aggregate_fail_frequency);
        assert_eq!(stats.mean_return, agent.mean_return);
        assert_eq!(stats.per_case.len(), agent.n_cases);
        let robust = PerfReport::read_robust_csv(fs::File::open(dir.join("perf.csv")).unwrap()).unwrap();
        assert_eq!(robust.len(), agent.robust.len());
        for row in &agent.robust {
            let e = robust[&row.pl];
            assert_eq!((e.r_t, e.r_a, e.n_tests_run), (row.r_t, row.r_a, row.n_tests_run));
        }
    }
    assert!(out.join("correlation.csv").exists());
    assert!(summary.correlation.is_some() || summary.correlation_note.is_some());
}

#[test]
fn search_failure_surfaces_and_stops_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    // goal sealed off by walls
    let spec = write_grid(tmp.path(), &[], &[[3, 4], [4, 3]]);
    let out = tmp.path().join("out");
    let err = run_campaign(&config(spec, "random:0", &out)).unwrap_err();
    assert!(matches!(err, Error::SearchExhausted { .. }), "{err}");
    assert!(!out.join("search.json").exists());
    assert!(!out.join("summary.json").exists());
}

#[test]
fn missing_inputs_are_reported_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        format!("gridworld:{}", tmp.path().join("nope.json").display()),
        "random:0",
        tmp.path(),
    );
    assert!(matches!(run_campaign(&cfg), Err(Error::MissingArtifact(p)) if p.ends_with("nope.json")));
    let spec = write_grid(tmp.path(), &[], &[]);
    let cfg = config(spec, &format!("qtable:{}", tmp.path().join("q.json").display()), tmp.path());
    assert!(matches!(run_campaign(&cfg), Err(Error::MissingArtifact(p)) if p.ends_with("q.json")));
}

#[test]
fn config_files_resolve_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    write_grid(tmp.path(), &[[2, 0]], &[]);
    let cfg_path = tmp.path().join("campaign.json");
    fs::write(
        &cfg_path,
        r#"{"env_spec": "gridworld:grid.json", "agent_spec": "random:4", "output_dir": "results",
            "fuzz": {"generations": 3, "population_size": 5, "mutation_effect_size": 15,
                     "mutation_stop_probability": 0.2, "crossover_probability": 0.25,
                     "weights": {"coverage": 2.0, "positive": 1.5, "negative": 1.0},
                     "seed": 0, "evaluation_resets": 1}}"#,
    )
    .unwrap();
    let cfg = CampaignConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.output_dir, tmp.path().join("results"));
    assert!(cfg.env_spec.ends_with("grid.json") && cfg.env_spec.contains(tmp.path().to_str().unwrap()));
    assert_eq!(cfg.safety, SafetySettings::default());
    run_campaign(&cfg).unwrap();
    assert!(tmp.path().join("results/summary.json").exists());
}
