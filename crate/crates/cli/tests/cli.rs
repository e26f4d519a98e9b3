use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FLAT: &str = r#"{"seed": 4, "n_features": 20, "n_informative": 3, "n_source": 60, "n_target": 48,
    "trial_length": 2, "separation": 1.5, "shift": {"rotation_deg": 30, "offset": 0.5}}"#;

const VOLUME: &str = r#"{"seed": 5, "dims": [5, 5, 5], "informative": [62, 63], "n_source": 40, "n_target": 40,
    "trial_length": 2, "separation": 2.0}"#;

fn xdecode(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xdecode"));
    cmd.args(args).env_remove("XDECODE_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> String {
    assert_eq!(
        code(&o),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, name: &str, config: &str) -> String {
    let cfg = root.join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    let out = root.join(name);
    ok(xdecode(&["synth", "--config", p(&cfg), "--out", p(&out)], &[]));
    out.to_str().unwrap().to_string()
}

fn compare_args<'a>(bundle: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "compare", "--bundle", bundle, "--methods", "baseline,naive,rtlc,fa", "--partitions", "4", "--nt-list",
        "10,20", "--seed", "3", "--out", out,
    ]
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let flat = synth(root, "flat", FLAT);
    for f in ["manifest.txt", "samples.f32le", "mask.u8", "trials.csv", "ground_truth.json"] {
        assert!(Path::new(&flat).join(f).exists(), "{f} missing");
    }
    let text = ok(xdecode(&["inspect", "--bundle", &flat], &[]));
    assert!(text.contains("samples: 108"), "{text}");

    let cmp = root.join("cmp");
    let text = ok(xdecode(&compare_args(&flat, p(&cmp)), &[]));
    assert!(text.contains("aligned Friedman"), "{text}");
    for f in ["results_nt010.csv", "results_nt020.csv", "results_all.csv", "rank_summary.csv", "plans.txt", "manifest.json"] {
        assert!(cmp.join(f).exists(), "{f} missing");
    }
    let header = fs::read_to_string(cmp.join("results_nt010.csv")).unwrap();
    assert!(header.starts_with("partition,baseline,naive,rtlc,fa"), "{header}");
    assert_eq!(header.lines().count(), 5);

    let fr = root.join("fr");
    let pattern = format!("{}/results_nt*.csv", cmp.display());
    ok(xdecode(&["friedman", "--tables", &pattern, "--alpha", "0.05", "--out", p(&fr)], &[]));
    assert!(fr.join("frequency.csv").exists());
    assert!(fr.join("rank_summary_000.csv").exists());

    let vol = synth(root, "vol", VOLUME);
    let mut map_dirs = Vec::new();
    for seed in ["1", "2"] {
        let sl = root.join(format!("sl{seed}"));
        let text = ok(xdecode(
            &[
                "searchlight", "--bundle", &vol, "--radius-mm", "6", "--methods", "baseline,naive,rtlc",
                "--partitions", "3", "--nt", "10", "--seed", seed, "--out", p(&sl),
            ],
            &[],
        ));
        assert!(text.contains("baseline"), "{text}");
        map_dirs.push(sl.join("maps").join("baseline"));
    }
    assert!(map_dirs[0].join("manifest.txt").exists());
    let inspected = ok(xdecode(&["inspect", "--bundle", p(&map_dirs[0])], &[]));
    assert!(inspected.contains("scoremap"), "{inspected}");

    // one map: partitions are the observations
    let single = root.join("pt1");
    ok(xdecode(
        &[
            "permtest", "--maps", p(&map_dirs[0]), "--n-perm", "50", "--sigma-mm", "6", "--tfce-E", "0.5", "--tfce-H",
            "2", "--connectivity", "26", "--alpha", "0.05", "--seed", "1", "--out", p(&single),
        ],
        &[],
    ));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(single.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_observations"], 3);
    assert_eq!(summary["exhaustive"], true);

    // two maps: subjects are the observations
    let group = root.join("pt2");
    let pattern = format!("{}/sl*/maps/baseline", root.display());
    ok(xdecode(
        &["permtest", "--maps", &pattern, "--n-perm", "50", "--seed", "1", "--out", p(&group)],
        &[],
    ));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(group.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_observations"], 2);
    assert!(group.join("significant.csv").exists());
}

#[test]
fn invalid_input_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let flat = synth(root, "flat", FLAT);
    let out = root.join("out");

    let missing = root.join("nope");
    assert_eq!(code(&xdecode(&compare_args(p(&missing), p(&out)), &[])), 2);
    assert_eq!(code(&xdecode(&["inspect", "--bundle", p(&missing)], &[])), 2);

    let mut args = compare_args(&flat, p(&out));
    args[4] = "baseline,warp";
    let o = xdecode(&args, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp"));

    // usage errors from the argument parser
    assert_eq!(code(&xdecode(&["compare", "--out", p(&out)], &[])), 2);
    assert_eq!(code(&xdecode(&["permtest", "--maps", "x", "--out", p(&out), "--bogus"], &[])), 2);

    let o = xdecode(&compare_args(&flat, p(&out)), &[("XDECODE_THREADS", "0")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("XDECODE_THREADS"));

    let o = xdecode(&["friedman", "--tables", &format!("{}/none*.csv", root.display()), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2);

    let bad_cfg = root.join("bad.json");
    fs::write(&bad_cfg, r#"{"seed": 1, "n_features": 5, "n_source": 10, "n_target": 10, "separation": 1, "colour": 3}"#)
        .unwrap();
    assert_eq!(code(&xdecode(&["synth", "--config", p(&bad_cfg), "--out", p(&out)], &[])), 2);

    // a truncated sample file names the offending manifest field
    let samples = Path::new(&flat).join("samples.f32le");
    let bytes = fs::read(&samples).unwrap();
    fs::write(&samples, &bytes[..bytes.len() - 4]).unwrap();
    let o = xdecode(&["inspect", "--bundle", &flat], &[]);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).trim().is_empty());
}

#[test]
fn failed_cells_beyond_threshold_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let flat = synth(root, "flat", FLAT);
    let out = root.join("out");
    let base = [
        "compare", "--bundle", &flat, "--methods", "baseline,kmm", "--partitions", "3", "--nt-list", "10", "--seed",
        "1", "--out", p(&out), "--param", "kmm.max_iter=1",
    ];
    let mut strict = base.to_vec();
    strict.extend(["--max-failures", "0"]);
    let o = xdecode(&strict, &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.lines().count() > 1, "{failures}");

    // the same run is accepted when half the cells may fail
    let mut lenient = base.to_vec();
    lenient.extend(["--max-failures", "0.5"]);
    ok(xdecode(&lenient, &[]));
}

#[test]
fn worker_cap_and_replay_leave_tables_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let flat = synth(root, "flat", FLAT);
    let seq = root.join("seq");
    let capped = root.join("capped");
    let replayed = root.join("replayed");
    let mut args = vec!["--sequential"];
    args.extend(compare_args(&flat, p(&seq)));
    ok(xdecode(&args, &[]));
    ok(xdecode(&compare_args(&flat, p(&capped)), &[("XDECODE_THREADS", "2")]));
    let manifest = seq.join("manifest.json");
    ok(xdecode(&["compare", "--from-manifest", p(&manifest), "--out", p(&replayed)], &[("XDECODE_THREADS", "3")]));
    let run: serde_json::Value = serde_json::from_slice(&fs::read(capped.join("manifest.json")).unwrap()).unwrap();
    assert!(run["workers"].as_u64().unwrap() <= 2);
    for f in ["results_nt010.csv", "results_nt020.csv", "results_all.csv", "rank_summary.csv", "plans.txt"] {
        let a = fs::read(seq.join(f)).unwrap();
        assert_eq!(a, fs::read(capped.join(f)).unwrap(), "{f} differs under XDECODE_THREADS");
        assert_eq!(a, fs::read(replayed.join(f)).unwrap(), "{f} differs after replay");
    }
}
