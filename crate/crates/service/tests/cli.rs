mod common;

use std::path::Path;
use std::process::{Command, Output};

use seqref_service::hub::{HubConfig, MemoryStore, Pairing, SessionHub};

fn seqref(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqref"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEQREF_LOG_DIR")
        .env_remove("SEQREF_SCENARIO_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generated_scenarios_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqref(&["generate", "--seed", "42", "--count", "1", "--out", "sc"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let files: Vec<_> = std::fs::read_dir(dir.path().join("sc")).unwrap().collect();
    assert_eq!(files.len(), 1);
    let o = seqref(&["validate", "sc/scenario_42.json"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn scenario_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_seqref"))
        .args(["generate", "--seed", "3"])
        .env("SEQREF_SCENARIO_DIR", dir.path().join("envdir"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(dir.path().join("envdir/scenario_3.json").exists());
}

#[test]
fn corrupted_scenarios_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(seqref(&["generate", "--seed", "5", "--out", "."], dir.path()).status.success());
    let path = dir.path().join("scenario_5.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["shared_sets"][0] = serde_json::json!([0, 1]);
    v["turns"][1][3]["p0"]["x"] = serde_json::json!(0.9);
    std::fs::write(dir.path().join("bad.json"), v.to_string()).unwrap();
    std::fs::write(dir.path().join("junk.json"), "{ nope").unwrap();

    let o = seqref(&["validate", "scenario_5.json", "bad.json", "junk.json"], dir.path());
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.contains("scenario_5.json: ok"), "{text}");
    assert!(text.contains("bad.json:") && text.contains("violation"), "{text}");
    assert!(text.contains("SharedSetMismatch"), "{text}");
    assert!(text.contains("Continuity"), "{text}");
    assert!(text.contains("junk.json:"), "{text}");
}

#[test]
fn unknown_flags_print_usage_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqref(&["generate", "--seed", "1", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(seqref(&["dance"], dir.path()).status.code(), Some(2));
}

#[test]
fn selfplay_stats_and_replay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqref(
        &[
            "selfplay", "--agent-a", "template", "--agent-b", "template", "--games", "12", "--seed", "1", "--pool", "4",
            "--report", "out/report.tsv", "--transcripts", "games.jsonl",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let report = std::fs::read_to_string(dir.path().join("out/report.tsv")).unwrap();
    assert!(report.starts_with("turn\tprevious_target\tshared=4\tshared=5\tshared=6\tavg_lst\n"));
    assert_eq!(report.lines().count(), 4);

    let o = seqref(&["stats", "--corpus", "games.jsonl", "--tables", "2,6", "--out", "rep"], dir.path());
    assert!(o.status.success(), "{o:?}");
    for f in ["table2.tsv", "table2.json", "table6.tsv", "table6.json"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("rep/table4.tsv").exists());
    let t2 = std::fs::read_to_string(dir.path().join("rep/table2.tsv")).unwrap();
    assert!(t2.contains("total_dialogues\t12"), "{t2}");

    let o = seqref(&["export-replay", "--game", "games.jsonl", "--game-id", "selfplay-0", "--format", "json", "--out", "rp"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rp/selfplay-0.replay.json")).unwrap()).unwrap();
    let t1 = &r["turns"][0];
    assert_eq!(t1["turn"], 1);
    assert_eq!(t1["frames"].as_array().unwrap().len(), 10);
    assert_eq!(t1["selectable_ids"].as_array().unwrap().len(), 7);

    let o = seqref(&["export-replay", "--game", "games.jsonl", "--game-id", "selfplay-1", "--format", "svg", "--out", "svg"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let svg = std::fs::read_to_string(dir.path().join("svg/selfplay-1_turn1_A.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="selectable"#).count(), 7);
    assert!(svg.contains("clipPath") && svg.contains("<animate"));

    // A scenario other than the recorded one is rejected.
    assert!(seqref(&["generate", "--seed", "99", "--out", "."], dir.path()).status.success());
    let o = seqref(
        &["export-replay", "--game", "games.jsonl", "--game-id", "selfplay-0", "--format", "json", "--scenario", "scenario_99.json"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = seqref(&["export-replay", "--game", "empty.jsonl", "--format", "svg"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn stats_skip_abandoned_sessions_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let store = MemoryStore::default();
    let config = HubConfig { pairing: Pairing::Bot("template".parse().unwrap()), ..HubConfig::default() };
    let mut hub = SessionHub::new(config, Box::new(common::Cycle { scenarios: common::pool(2), next: 0 }), Box::new(store.clone()));
    let mut done = common::Driver::new(1, Box::new(seqref_core::agents::template_agent(Default::default())), "done");
    done.join(&mut hub, None, None, 0);
    done.play(&mut hub, 0, None);
    let mut idle = common::Driver::new(2, Box::new(seqref_core::agents::random_agent()), "idle");
    idle.join(&mut hub, None, None, 0);
    hub.tick(60 * 60 * 1000);
    let logs = dir.path().join("logs");
    std::fs::create_dir(&logs).unwrap();
    for (id, text) in store.files.lock().unwrap().iter() {
        std::fs::write(logs.join(format!("{id}.jsonl")), text).unwrap();
    }
    let count = |extra: &[&str]| {
        let mut args = vec!["stats", "--corpus", "logs", "--tables", "2", "--out", "rep"];
        args.extend_from_slice(extra);
        let o = seqref(&args, dir.path());
        assert!(o.status.success(), "{o:?}");
        let t = std::fs::read_to_string(dir.path().join("rep/table2.tsv")).unwrap();
        t.lines().find(|l| l.starts_with("total_dialogues")).unwrap().to_string()
    };
    assert_eq!(count(&[]), "total_dialogues\t1");
    assert_eq!(count(&["--include-abandoned"]), "total_dialogues\t2");
}
