//! End-to-end runs of the `catrisk` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn catrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catrisk")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture_bundle(root: &Path) -> PathBuf {
    let dir = root.join("in");
    let o = catrisk(&["synth", "--n", "5", "--profile", "fixture", "--out-dir", p(&dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn fixture_scheme(root: &Path, extra: &[&str]) -> PathBuf {
    let input = fixture_bundle(root);
    let out = root.join("scheme");
    let mut args = vec!["scheme", "--in-dir", p(&input), "--peril", "multi", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = catrisk(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn synth_writes_the_shipped_fixture() {
    let t = tempfile::tempdir().unwrap();
    let dir = fixture_bundle(t.path());
    let shipped = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture");
    for f in fs::read_dir(&shipped).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(
            fs::read(shipped.join(&name)).unwrap(),
            fs::read(dir.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    assert!(dir.join("manifest-synth.json").exists());
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            code(&catrisk(&["synth", "--n", "200", "--seed", "7", "--out-dir", p(d)])),
            0
        );
    }
    for f in fs::read_dir(&a).unwrap() {
        let name = f.unwrap().file_name();
        // the manifest records the output directory
        if name.to_str().unwrap().ends_with(".csv") {
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{name:?}"
            );
        }
    }
}

#[test]
fn synth_usage_errors() {
    let t = tempfile::tempdir().unwrap();
    let o = catrisk(&["synth", "--n", "0", "--out-dir", p(t.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--n"), "{}", stderr(&o));
    // a regular file where a directory is needed
    let file = t.path().join("plain");
    fs::write(&file, "x").unwrap();
    let o = catrisk(&["synth", "--n", "5", "--out-dir", p(&file.join("sub"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn assess_reports_totals() {
    let t = tempfile::tempdir().unwrap();
    let input = fixture_bundle(t.path());
    let out = t.path().join("assess");
    let o = catrisk(&["assess", "--in-dir", p(&input), "--peril", "seismic", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("national total: 0.077758 Mln euro"), "{text}");
    assert!(
        text.contains("maximum municipal expected loss: 0.032055 Mln euro (f5)"),
        "{text}"
    );
    let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(out.join("assessment.txt").exists() && out.join("manifest-assess.json").exists());
}

#[test]
fn assess_flood_without_flood_zones_is_zero() {
    let t = tempfile::tempdir().unwrap();
    let input = fixture_bundle(t.path());
    let path = input.join("municipalities.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "p3_ext").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&headers).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        let row: Vec<&str> = r
            .iter()
            .enumerate()
            .map(|(i, v)| if i == col { "0" } else { v })
            .collect();
        w.write_record(&row).unwrap();
    }
    fs::write(&path, w.into_inner().unwrap()).unwrap();
    let o = catrisk(&[
        "assess",
        "--in-dir",
        p(&input),
        "--peril",
        "flood",
        "--out",
        p(&t.path().join("a")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).contains("national total: 0.000000 Mln euro"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn assess_input_errors() {
    let t = tempfile::tempdir().unwrap();
    let input = fixture_bundle(t.path());
    let out = t.path().join("a");

    fs::remove_file(input.join("flood_depths.csv")).unwrap();
    let o = catrisk(&["assess", "--in-dir", p(&input), "--peril", "flood", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flood_depths.csv"), "{}", stderr(&o));
    // seismic inputs are still complete
    let o = catrisk(&["assess", "--in-dir", p(&input), "--peril", "seismic", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let path = input.join("municipalities.csv");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[3] = lines[3].replacen("Fixture f3,42.9", "Fixture f3,north", 1);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = catrisk(&["assess", "--in-dir", p(&input), "--peril", "seismic", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn scheme_writes_reports() {
    let t = tempfile::tempdir().unwrap();
    let out = fixture_scheme(t.path(), &["--samplings", "5"]);
    for f in [
        "scheme.json",
        "scheme_report.txt",
        "premiums.csv",
        "premiums.geojson",
        "quotes.csv",
        "manifest-scheme.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(out.join("scheme_report.txt")).unwrap();
    assert_eq!(report.lines().filter(|l| l.contains(" | ")).count(), 5);
    let geo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("premiums.geojson")).unwrap()).unwrap();
    assert_eq!(geo["features"].as_array().unwrap().len(), 5);
    assert_eq!(
        fs::read_to_string(out.join("premiums.csv")).unwrap().lines().count(),
        1 + 4 * 5
    );
}

#[test]
fn single_sampling_has_zero_cov() {
    let t = tempfile::tempdir().unwrap();
    let out = fixture_scheme(t.path(), &["--samplings", "1", "--seed", "3"]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scheme.json")).unwrap()).unwrap();
    for pol in doc["policies"].as_array().unwrap() {
        for (k, v) in pol["aggregate"].as_object().unwrap() {
            if let Some(cov) = v.get("cov") {
                assert_eq!(cov.as_f64(), Some(0.0), "{k}");
            }
        }
    }
}

#[test]
fn scheme_input_errors() {
    let t = tempfile::tempdir().unwrap();
    let input = fixture_bundle(t.path());
    let out = t.path().join("s");
    let o = catrisk(&[
        "scheme",
        "--in-dir",
        p(&input),
        "--peril",
        "seismic",
        "--eps1",
        "0.05",
        "--eps2",
        "0.01",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("insolvency should never be preferred"),
        "{}",
        stderr(&o)
    );
    fs::remove_file(input.join("flood_counts.csv")).unwrap();
    let o = catrisk(&["scheme", "--in-dir", p(&input), "--peril", "multi", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flood_counts.csv"), "{}", stderr(&o));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let t = tempfile::tempdir().unwrap();
    let input = fixture_bundle(t.path());
    let cfg = t.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[scheme]\nin_dir = {:?}\nperil = \"seismic\"\nsamplings = 3\neps2 = 0.05\n",
            p(&input)
        ),
    )
    .unwrap();
    let samplings = |dir: &Path| -> (u64, f64, f64) {
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("scheme.json")).unwrap()).unwrap();
        let par = &doc["params"];
        (
            par["samplings"].as_u64().unwrap(),
            par["eps1"].as_f64().unwrap(),
            par["eps2"].as_f64().unwrap(),
        )
    };
    let a = t.path().join("a");
    assert_eq!(code(&catrisk(&["--config", p(&cfg), "scheme", "--out", p(&a)])), 0);
    assert_eq!(samplings(&a), (3, 0.01, 0.05));
    let b = t.path().join("b");
    assert_eq!(
        code(&catrisk(&[
            "scheme",
            "--config",
            p(&cfg),
            "--samplings",
            "2",
            "--out",
            p(&b)
        ])),
        0
    );
    assert_eq!(samplings(&b), (2, 0.01, 0.05));

    fs::write(&cfg, "[scheme]\nsampling = 3\n").unwrap();
    let o = catrisk(&["--config", p(&cfg), "scheme", "--out", p(&b)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sampling"), "{}", stderr(&o));
}

#[test]
fn simulate_accepts_fixture_scheme() {
    let t = tempfile::tempdir().unwrap();
    let out = fixture_scheme(t.path(), &[]);
    let input = t.path().join("in");
    let o = catrisk(&[
        "simulate",
        "--in-dir",
        p(&input),
        "--scheme-out",
        p(&out),
        "--draws",
        "100000",
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let csv = fs::read_to_string(out.join("simulation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 100);
    assert!(!csv.contains("bound-violated"));
}

#[test]
fn simulate_rejects_halved_phi() {
    let t = tempfile::tempdir().unwrap();
    let out = fixture_scheme(t.path(), &["--samplings", "10"]);
    let path = out.join("scheme.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for pol in doc["policies"].as_array_mut().unwrap() {
        for phi in pol["phi"].as_array_mut().unwrap() {
            *phi = serde_json::json!(phi.as_f64().unwrap() / 2.0);
        }
    }
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = catrisk(&["simulate", "--scheme-out", p(&out), "--draws", "10000"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("above eps1"), "{}", stdout(&o));
}

#[test]
fn simulate_usage_errors() {
    let t = tempfile::tempdir().unwrap();
    let out = fixture_scheme(t.path(), &["--samplings", "2"]);
    assert_eq!(
        code(&catrisk(&["simulate", "--scheme-out", p(&out), "--draws", "100"])),
        2
    );
    assert_eq!(
        code(&catrisk(&["simulate", "--scheme-out", p(&t.path().join("nowhere"))])),
        2
    );
    // municipalities of the scheme must exist in the bundle
    let other = t.path().join("other");
    assert_eq!(
        code(&catrisk(&[
            "synth",
            "--n",
            "3",
            "--profile",
            "uniform",
            "--out-dir",
            p(&other)
        ])),
        0
    );
    assert_eq!(
        code(&catrisk(&[
            "simulate",
            "--in-dir",
            p(&other),
            "--scheme-out",
            p(&out),
            "--draws",
            "10000"
        ])),
        2
    );
}

#[test]
fn help_lists_every_flag() {
    let cases: [(&str, &[&str]); 4] = [
        (
            "synth",
            &[
                "--n",
                "--seed",
                "--profile",
                "--out-dir",
                "--extent-km",
                "--noise",
                "--config",
            ],
        ),
        ("assess", &["--in-dir", "--peril", "--rc", "--out"]),
        (
            "scheme",
            &[
                "--in-dir",
                "--peril",
                "--deductible",
                "--max-coverage",
                "--eps1",
                "--eps2",
                "--r-km",
                "--samplings",
                "--seed",
                "--mode",
                "--h",
                "--rc",
                "--out",
            ],
        ),
        ("simulate", &["--in-dir", "--scheme-out", "--draws", "--seed", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = catrisk(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert_eq!(code(&catrisk(&["bogus"])), 2);
}
