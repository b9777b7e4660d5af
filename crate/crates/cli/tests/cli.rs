//! End-to-end checks of the `starsim` binary: exit codes, outputs and
//! configuration precedence.

use std::path::Path;
use std::process::{Command, Output};

fn starsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("STARSIM_MODEL")
        .env_remove("STARSIM_K")
        .env_remove("STARSIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Data rows of a CSV written by the binary, keyed by column name.
fn csv_rows(path: &Path) -> Vec<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let cols: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    lines
        .map(|l| cols.iter().cloned().zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn field<'a>(row: &'a [(String, String)], name: &str) -> &'a str {
    &row.iter().find(|(k, _)| k == name).unwrap().1
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["--model", "sa-lru", "--k", "2", "selftest"],
        &["--model", "star-news", "--k", "40", "selftest"],
        &["--l2-cycles", "0", "selftest"],
        &["--model", "lru", "selftest"],
    ];
    for args in cases {
        let o = starsim(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    let o = starsim(dir.path(), &["--config", cfg.to_str().unwrap(), "selftest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectre_flush_reload_recovers_only_on_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = starsim(dir.path(), &["--trials", "4", "attack", "fr-spectre", "--secret", "30"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("recovered=30"), "{}", stdout(&o));
    assert!(dir.path().join("matrix.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());

    let o = starsim(
        dir.path(),
        &[
            "--model",
            "star-news",
            "--trials",
            "4",
            "attack",
            "fr-spectre",
            "--secret",
            "30",
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("recovered=NONE"), "{}", stdout(&o));
}

#[test]
fn spec_mix_replay_sends_sfill_inv_on_star_only() {
    let dir = tempfile::tempdir().unwrap();
    for (model, expect_inv) in [("star-farr", true), ("sa-lru", false)] {
        let o = starsim(
            dir.path(),
            &["--model", model, "replay", "--synth", "spec-mix", "--length", "20000"],
        );
        assert!(o.status.success());
        let rows = csv_rows(&dir.path().join("stats.csv"));
        assert_eq!(rows.len(), 1);
        let sent: u64 = field(&rows[0], "sfill_inv_sent").parse().unwrap();
        assert_eq!(sent > 0, expect_inv, "{model}: {sent}");
        assert!(field(&rows[0], "squashed_loads").parse::<u64>().unwrap() > 0);
    }
}

#[test]
fn k_sweep_column_does_not_increase() {
    let dir = tempfile::tempdir().unwrap();
    let o = starsim(
        dir.path(),
        &[
            "--model",
            "star-news",
            "replay",
            "--synth",
            "conflict-heavy",
            "--length",
            "20000",
            "--sweep-k",
            "0,2,4,6",
        ],
    );
    assert!(o.status.success());
    let rows = csv_rows(&dir.path().join("stats.csv"));
    let ks: Vec<&str> = rows.iter().map(|r| field(r, "k")).collect();
    assert_eq!(ks, ["0", "2", "4", "6"]);
    let misses: Vec<u64> = rows
        .iter()
        .map(|r| field(r, "tagmiss_forward_nofill").parse().unwrap())
        .collect();
    assert!(misses.windows(2).all(|w| w[1] <= w[0]), "{misses:?}");
    assert!(misses[0] > misses[3]);
}

#[test]
fn sweep_k_needs_news() {
    let dir = tempfile::tempdir().unwrap();
    let o = starsim(
        dir.path(),
        &[
            "replay",
            "--synth",
            "uniform-random",
            "--length",
            "100",
            "--sweep-k",
            "0,2",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    std::fs::write(&trace, "L 0x40\nS 0x80\nFROB 1\n").unwrap();
    let o = starsim(dir.path(), &["replay", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn selftest_passes_and_catches_mutations() {
    let dir = tempfile::tempdir().unwrap();
    let o = starsim(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    for m in ["farr-deterministic-victim", "news-fill-on-spec-tag-miss"] {
        let o = starsim(dir.path(), &["selftest", "--inject-mutation", m]);
        assert_eq!(o.status.code(), Some(1), "{m}");
        assert!(stdout(&o).contains("FAIL"));
    }
}

#[test]
fn flags_beat_env_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "model = star-farr\nseed = 3\n").unwrap();
    let run = |extra: &[&str], env_seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_starsim"));
        c.arg("--config").arg(&cfg).arg("--out").arg(dir.path());
        c.args(extra)
            .args(["replay", "--synth", "uniform-random", "--length", "500"]);
        c.env_remove("STARSIM_SEED")
            .env_remove("STARSIM_MODEL")
            .env_remove("STARSIM_K");
        if let Some(s) = env_seed {
            c.env("STARSIM_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        std::fs::read_to_string(dir.path().join("stats.csv")).unwrap()
    };
    let file_only = run(&[], None);
    assert!(file_only.contains("# model=star-farr") && file_only.contains("# seed=3"));
    let env = run(&[], Some("4"));
    assert!(env.contains("# seed=4"));
    let flag = run(&["--seed", "5", "--model", "sa-lru"], Some("4"));
    assert!(flag.contains("# seed=5") && flag.contains("# model=sa-lru"));
}
