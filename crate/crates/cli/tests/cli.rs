use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use seqopt_cli::config::RunConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_seqopt"));
    c.env("RUST_LOG", "warn");
    c
}

fn seqopt(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {:?}", rows[0]))
}

const SMALL_ORACLE: &str = "budget = 1000\nseeds = [4]\n[env]\nseq_len = 8\nalphabet = \"ACDE\"\n";

#[test]
fn oracle_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_ORACLE);
    let out = dir.path().join("out");
    ok(&seqopt(&["run", "--config", cfg.to_str().unwrap(), "--agent", "mcmc", "--seed", "1", "--seed", "2", "--out", out.to_str().unwrap()]));
    for sub in ["seed_1", "seed_2", "aggregate"] {
        for file in ["curves.csv", "metrics.csv", "pareto_mp_hd.csv", "manifest.json"] {
            assert!(out.join(sub).join(file).is_file(), "{sub}/{file}");
        }
    }
    let curves = csv_rows(&out.join("seed_1/curves.csv"));
    let q = column(&curves, "queries");
    assert_eq!(curves.last().unwrap()[q], "1000");

    let manifest = json(&out.join("seed_2/manifest.json"));
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["run"]["ledger"]["agent_queries"], 1000);
    assert_eq!(manifest["run"]["status"], "completed");
    // Every config key is recorded, defaults included.
    let defaults = serde_json::to_value(RunConfig::default()).unwrap();
    for key in defaults.as_object().unwrap().keys() {
        assert!(manifest["config"].get(key).is_some(), "manifest lacks config key {key}");
    }
    assert_eq!(manifest["config"]["agent"], "mcmc");
}

#[test]
fn proxy_run_ticks_every_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.toml",
        "mode = \"proxy\"\nagent = \"ppo\"\nbudget = 6000\nseeds = [1]\n[env]\nseq_len = 10\n\
         [proxy.pretrain]\nuniform_samples = 300\nclimb_samples = 100\n[proxy.finetune]\ninterval = 2000\n\
         [agents.ppo]\nrollout_steps = 4\n",
    );
    let out = dir.path().join("out");
    ok(&seqopt(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let ticks = csv_rows(&out.join("seed_1/ticks.csv"));
    assert_eq!(ticks.len() - 1, 3);
    let q = column(&ticks, "queries");
    let got: Vec<&str> = ticks[1..].iter().map(|r| r[q].as_str()).collect();
    assert_eq!(got, ["2000", "4000", "6000"]);
    let ledger = &json(&out.join("seed_1/manifest.json"))["run"]["ledger"];
    assert_eq!(ledger["proxy_queries"], 6000);
    assert_eq!(ledger["agent_queries"], 6000);
    assert!(ledger["oracle_finetune"].as_u64().unwrap() > 0);
}

#[test]
fn rejects_budget_not_multiple_of_batch() {
    let out = seqopt(&["run", "--budget", "150", "--out", "/nonexistent/should-not-be-created"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

fn pdb(coords: &[[f64; 3]]) -> String {
    let mut s = String::new();
    for (i, p) in coords.iter().enumerate() {
        s.push_str(&format!(
            "ATOM  {:>5}  CA  ALA A{:>4}    {:8.3}{:8.3}{:8.3}  1.00  0.00           C\n",
            i + 1,
            i + 1,
            p[0],
            p[1],
            p[2]
        ));
    }
    s.push_str("END\n");
    s
}

fn metric(rows: &[Vec<String>], set: &str, name: &str) -> f64 {
    rows.iter()
        .find(|r| r[0] == set && r[1] == name)
        .unwrap_or_else(|| panic!("no metric {set}/{name}"))[2]
        .parse()
        .unwrap()
}

#[test]
fn evaluate_identical_set_has_no_diversity() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write(dir.path(), "same.fasta", ">a score=0.9\nACDEFGHIKLMNPQRSTVWY\n>b score=0.8\nACDEFGHIKLMNPQRSTVWY\n>c score=0.7\nACDEFGHIKLMNPQRSTVWY\n");
    let varied = write(dir.path(), "varied.fasta", ">a score=0.2\nACDEFGHIKLMNPQRSTVWY\n>b score=0.3\nWWWWWWWWWWWWWWWWWWWW\n>c score=0.1\nKKKKKKKKKKLLLLLLLLLL\n");
    let traces = dir.path().join("pdb");
    fs::create_dir(&traces).unwrap();
    let helix: Vec<[f64; 3]> = (0..20)
        .map(|i| {
            let t = i as f64 * 100f64.to_radians();
            [2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64]
        })
        .collect();
    for name in ["a", "b", "c"] {
        fs::write(traces.join(format!("{name}.pdb")), pdb(&helix)).unwrap();
    }
    let out = dir.path().join("eval");
    ok(&seqopt(&[
        "evaluate",
        "--sequences",
        &format!("same={}", fasta.display()),
        "--sequences",
        &format!("varied={}", varied.display()),
        "--traces",
        traces.to_str().unwrap(),
        "--threshold",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]));
    let m = csv_rows(&out.join("metrics.csv"));
    assert_eq!(metric(&m, "same", "mp_hd"), 0.0);
    assert!((metric(&m, "same", "mp_tm") - 1.0).abs() < 1e-9);
    assert!(metric(&m, "same", "mp_rmsd").abs() < 1e-6);
    assert!((metric(&m, "same", "mean_score") - 0.8).abs() < 1e-12);
    assert!(metric(&m, "varied", "mp_hd") > 10.0);

    // Only "same" clears the threshold, so it alone can sit on the front.
    let p = csv_rows(&out.join("pareto_mp_hd.csv"));
    let (label, above, front) = (column(&p, "label"), column(&p, "above_threshold"), column(&p, "on_front"));
    for row in &p[1..] {
        let is_same = row[label] == "same";
        assert_eq!(row[above] == "1", is_same, "{row:?}");
        assert_eq!(row[front] == "1", is_same, "{row:?}");
    }
    assert!(out.join("pareto_mp_tm.csv").is_file());
    assert!(out.join("pareto_mp_rmsd.csv").is_file());
}

#[test]
fn evaluate_requires_scores_or_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write(dir.path(), "s.fasta", ">a\nACDE\n>b\nACDD\n");
    let out = dir.path().join("eval");
    let res = seqopt(&["evaluate", "--sequences", fasta.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    ok(&seqopt(&[
        "evaluate",
        "--sequences",
        fasta.to_str().unwrap(),
        "--oracle",
        "synthetic:3",
        "--out",
        out.to_str().unwrap(),
    ]));
    let m = csv_rows(&out.join("metrics.csv"));
    let s = metric(&m, "s", "mean_score");
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn run_against_served_oracle_matches_local() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_ORACLE);
    let cfg = cfg.to_str().unwrap();
    let mut server = bin()
        .args(["serve-echo-oracle", "--config", cfg, "--oracle", "synthetic:9", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut addr = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut addr).unwrap();
    let remote = dir.path().join("remote");
    let local = dir.path().join("local");
    let r = seqopt(&["run", "--config", cfg, "--oracle", &format!("remote:{}", addr.trim()), "--out", remote.to_str().unwrap()]);
    server.kill().unwrap();
    server.wait().unwrap();
    ok(&r);
    ok(&seqopt(&["run", "--config", cfg, "--oracle", "synthetic:9", "--out", local.to_str().unwrap()]));
    // Curves carry scores at full precision, so the served landscape must agree exactly.
    assert_eq!(
        fs::read(remote.join("seed_4/curves.csv")).unwrap(),
        fs::read(local.join("seed_4/curves.csv")).unwrap()
    );
}

#[test]
fn failing_remote_flushes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("started");
    // Answers three requests on the first launch, then refuses to start again.
    let script = write(
        dir.path(),
        "flaky.sh",
        &format!(
            "if [ -e {m} ]; then exit 1; fi\ntouch {m}\ni=0\n\
             while [ $i -lt 3 ] && read -r line; do echo \"$line\"; i=$((i+1)); done | {bin} serve-echo-oracle --stdio --score 0.25\n",
            m = marker.display(),
            bin = env!("CARGO_BIN_EXE_seqopt")
        ),
    );
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{SMALL_ORACLE}[remote]\ntimeout_ms = 2000\nattempts = 2\nbackoff_ms = 10\n"),
    );
    let out = dir.path().join("out");
    let res = seqopt(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--oracle",
        &format!("remote:exec:sh {}", script.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    let manifest = json(&out.join("seed_4/manifest.json"));
    let status = manifest["run"]["status"].as_str().unwrap();
    assert_ne!(status, "completed");
    let curves = csv_rows(&out.join("seed_4/curves.csv"));
    assert!(curves.len() >= 2, "no partial curve rows");
    let q = column(&curves, "queries");
    let last: u64 = curves.last().unwrap()[q].parse().unwrap();
    assert_eq!(last, 300);
}

#[test]
fn ablation_runs_three_settings_at_equal_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_ORACLE);
    let out = dir.path().join("abl");
    ok(&seqopt(&["ablate-horizon", "--config", cfg.to_str().unwrap(), "--agent", "ppo", "--out", out.to_str().unwrap()]));
    let rows = csv_rows(&out.join("ablation.csv"));
    let setting = column(&rows, "setting");
    let queries = column(&rows, "queries");
    let settings: Vec<&str> = rows[1..].iter().map(|r| r[setting].as_str()).collect();
    assert_eq!(settings, ["T=L_s", "T=5L_s", "infinite"]);
    assert!(rows[1..].iter().all(|r| r[queries] == "1000"));
    for sub in ["t_l_s", "t_5l_s", "infinite"] {
        assert!(out.join(sub).join("seed_4/curves.csv").is_file(), "{sub}");
    }
    assert_eq!(json(&out.join("manifest.json"))["equal_budgets"], true);
}

#[test]
fn mismatch_logs_decoy_and_oracle_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_ORACLE);
    let out = dir.path().join("mm");
    ok(&seqopt(&["mismatch", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let rows = csv_rows(&out.join("mismatch.csv"));
    assert_eq!(rows.len() - 1, 2);
    for agent in ["mcmc", "ppo"] {
        let curves = csv_rows(&out.join(agent).join("seed_4/curves.csv"));
        let oracle = column(&curves, "mean_oracle_score");
        assert!(curves[1..].iter().all(|r| !r[oracle].is_empty()), "{agent} lacks oracle curve");
    }
    let remote = seqopt(&["mismatch", "--config", cfg.to_str().unwrap(), "--oracle", "remote:127.0.0.1:9", "--out", out.to_str().unwrap()]);
    assert!(!remote.status.success());
}
