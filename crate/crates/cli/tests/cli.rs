use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rltb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rltb"))
        .args(args)
        .current_dir(dir)
        .env_remove("RLTB_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_grid(dir: &Path, slip: f64) {
    let text = format!(
        r#"{{"width": 5, "height": 5, "start": [0, 0], "goal_cells": [[4, 4]],
            "pit_cells": [[2, 0], [2, 2]], "wall_cells": [], "slip_probability": {slip},
            "reward_mode": "sparse"}}"#
    );
    fs::write(dir.join("grid.json"), text).unwrap();
}

#[test]
fn search_on_the_walkthrough_mdp() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rltb(tmp.path(), &["search", "--env", "fig2", "--confidence", "0.9", "--out", "search.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 boundary states"), "{}", stdout(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("search.json")).unwrap()).unwrap();
    assert_eq!(json["boundary_depths"], serde_json::json!([1, 3]));
    assert_eq!(json["boundary_states"], serde_json::json!(["s1", "s7"]));
}

#[test]
fn correlate_prints_r() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("rows.csv"),
        "agent_label,fail_frequency,mean_return\na,1,6\nb,2,5\nc,3,7\n",
    )
    .unwrap();
    let o = rltb(tmp.path(), &["correlate", "--in", "rows.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.5");

    fs::write(tmp.path().join("flat.csv"), "agent_label,fail_frequency,mean_return\na,0.1,6\nb,0.1,5\n").unwrap();
    let o = rltb(tmp.path(), &["correlate", "--in", "flat.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rltb(tmp.path(), &["fuzz", "--env", "fig2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));

    let o = rltb(tmp.path(), &["correlate", "--in", "absent.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));

    rltb(tmp.path(), &["search", "--env", "fig2"]);
    let o = rltb(tmp.path(), &["safety", "--env", "fig2", "--agent", "random:1", "--suite", "pairs:3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--suite"), "{}", stderr(&o));

    let o = rltb(tmp.path(), &["safety", "--env", "fig2", "--agent", "random:1", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--reps"), "{}", stderr(&o));

    let o = rltb(tmp.path(), &["search", "--env", "mario"]);
    assert_eq!(o.status.code(), Some(2));

    let o = rltb(tmp.path(), &["search", "--env", "fig2", "--confidence", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--confidence"), "{}", stderr(&o));

    let o = rltb(tmp.path(), &["search", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_reproduce_the_campaign_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_grid(dir, 0.1);
    let env = "gridworld:grid.json";
    let agent = "scripted:shortest-safe";
    for args in [
        vec!["search", "--env", env, "--seed", "17"],
        vec!["fuzz", "--env", env, "--ref", "search.json", "--seed", "17", "--jobs", "3"],
        vec!["safety", "--env", env, "--agent", agent, "--seed", "17"],
        vec!["perf", "--env", env, "--agent", agent, "--seed", "17"],
    ] {
        let o = rltb(dir, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    fs::write(
        dir.join("campaign.json"),
        format!(r#"{{"env_spec": "{env}", "agent_spec": "{agent}", "seed": 17, "output_dir": "camp"}}"#),
    )
    .unwrap();
    let o = rltb(dir, &["campaign", "--config", "campaign.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["search.json", "fuzz_traces.json", "safety.csv", "perf.csv", "perf_simple.csv"] {
        let staged = fs::read(dir.join(f)).unwrap();
        let campaign = fs::read(dir.join("camp").join(f)).unwrap();
        assert!(staged == campaign, "{f} differs");
    }
}

#[test]
fn seed_variable_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_grid(dir, 0.1);
    let cfg = |seed: u64, out: &str| {
        format!(
            r#"{{"env_spec": "gridworld:grid.json", "agent_spec": "random:2", "seed": {seed},
                "output_dir": "{out}", "fuzz": {{"generations": 5, "population_size": 8,
                "mutation_effect_size": 15, "mutation_stop_probability": 0.2,
                "crossover_probability": 0.25,
                "weights": {{"coverage": 2.0, "positive": 1.5, "negative": 1.0}},
                "seed": 0, "evaluation_resets": 1}}}}"#
        )
    };
    fs::write(dir.join("a.json"), cfg(0, "a")).unwrap();
    fs::write(dir.join("b.json"), cfg(31, "b")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rltb"))
        .args(["campaign", "--config", "a.json"])
        .current_dir(dir)
        .env("RLTB_SEED", "31")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rltb(dir, &["campaign", "--config", "b.json", "--jobs", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.json", "fuzz_traces.json", "safety.csv", "perf.csv"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn trained_agent_can_be_tested() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_grid(dir, 0.0);
    let o = rltb(dir, &["train", "--env", "gridworld:grid.json", "--episodes", "300", "--out", "q.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    rltb(dir, &["search", "--env", "gridworld:grid.json"]);
    let o = rltb(dir, &["safety", "--env", "gridworld:grid.json", "--agent", "qtable:q.json", "--suite", "coverage:1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("safety.csv")).unwrap();
    assert!(csv.starts_with("boundary_index,offset,suite_kind,"));
    assert!(csv.lines().count() > 1);

    let o = rltb(dir, &["train", "--env", "fig2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_search_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("sealed.json"),
        r#"{"width": 3, "height": 1, "start": [0, 0], "goal_cells": [[2, 0]],
            "pit_cells": [], "wall_cells": [[1, 0]], "slip_probability": 0.0}"#,
    )
    .unwrap();
    let o = rltb(tmp.path(), &["search", "--env", "gridworld:sealed.json"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!tmp.path().join("search.json").exists());
}
