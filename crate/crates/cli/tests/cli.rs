//! End-to-end command tests against the compiled binary.

use std::path::Path;
use std::process::Output;

fn xattn(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_xattn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_small(dir: &Path, count: &str, seed: &str) {
    let out = xattn(&[
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        count,
        "--seed",
        seed,
        "--frames-min",
        "96",
        "--frames-max",
        "96",
        "--tokens",
        "4",
        "--bins",
        "8",
        "--vocab",
        "8",
    ]);
    assert_success(&out);
}

fn run_small(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "3",
        "--trials-input",
        "60",
        "--trials-encoder",
        "60",
    ];
    args.extend_from_slice(extra);
    xattn(&args)
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

// -- gen ---------------------------------------------------------------------

#[test]
fn gen_single_sample_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "1", "5");
    let mut names: Vec<String> = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec!["manifest.txt", "model.xapw", "sample_0.ref", "sample_0.spg"]
    );
    let manifest = std::fs::read_to_string(data.join("manifest.txt")).unwrap();
    assert!(manifest.contains("count = 1"));
    assert!(manifest.contains("spans="));
}

#[test]
fn gen_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    gen_small(&a, "2", "9");
    gen_small(&b, "2", "9");
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn gen_infeasible_spec_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = xattn(&[
        "gen",
        "--out",
        data.to_str().unwrap(),
        "--count",
        "1",
        "--frames-min",
        "32",
        "--frames-max",
        "32",
        "--tokens",
        "40",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!data.exists(), "no files may be written on failure");
}

// -- run ----------------------------------------------------------------------

#[test]
fn run_emits_reports_with_full_grid_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "1", "2");
    let out1 = dir.path().join("r1");
    let out2 = dir.path().join("r2");
    assert_success(&run_small(&data, &out1, &[]));
    assert_success(&run_small(&data, &out2, &[]));
    for report in ["report_input.csv", "report_encoder.csv"] {
        let text = std::fs::read_to_string(out1.join(report)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // 2 layers x 2 heads grid plus the AVG row and column
        assert_eq!(lines[0], "layer/head,h=1,h=2,h-AVG");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("l=1,"));
        assert!(lines[2].starts_with("l=2,"));
        assert!(lines[3].starts_with("l-AVG,"));
        let parsed = xattn_core::metrics::report_from_csv(&text, report).unwrap();
        assert_eq!(parsed.layers, 2);
        assert_eq!(parsed.heads, 2);
    }
    for curve in ["deletion_input_0.csv", "deletion_encoder_0.csv"] {
        let text = std::fs::read_to_string(out1.join(curve)).unwrap();
        let parsed = xattn_core::metrics::curve_from_csv(&text, curve).unwrap();
        assert_eq!(parsed.points.len(), 21);
        assert_eq!(parsed.points[0].0, 0.0);
        assert_eq!(parsed.points.last().unwrap().0, 1.0);
    }
    assert!(out1.join("summary.csv").exists());
    assert_eq!(tree(&out1), tree(&out2), "reruns must be byte-identical");
}

#[test]
fn run_isolates_broken_samples() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "2", "4");
    // corrupt the second sample: bin count no longer matches the model
    std::fs::write(data.join("sample_1.spg"), "SPG1 4 2\n0 0\n0 0\n0 0\n0 0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run_small(&data, &out_dir, &[]);
    assert_success(&out);
    let errors = std::fs::read_to_string(out_dir.join("errors.txt")).unwrap();
    assert!(errors.contains("sample_1"), "{errors}");
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().count() == 2, "only the good sample is summarized");
}

#[test]
fn run_fails_when_every_sample_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "1", "4");
    std::fs::write(data.join("sample_0.spg"), "SPG1 4 2\n0 0\n0 0\n0 0\n0 0\n").unwrap();
    let out = run_small(&data, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_rejects_missing_dataset_as_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&dir.path().join("nope"), &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_provides_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("run.cfg");
    gen_small(&data, "1", "6");
    std::fs::write(
        &cfg,
        format!(
            "data = {}\nout = {}\ntrials_input = 60\ntrials_encoder = 60\nseed = 3\n",
            data.display(),
            dir.path().join("from_cfg").display()
        ),
    )
    .unwrap();
    let out = xattn(&["run", "--config", cfg.to_str().unwrap()]);
    assert_success(&out);
    assert!(dir.path().join("from_cfg").join("report_input.csv").exists());
    // flag overrides the config file's output directory
    let out = xattn(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("flag_out").to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(dir.path().join("flag_out").join("report_input.csv").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "sede = 9\n").unwrap();
    let out = xattn(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

// -- sweep ---------------------------------------------------------------------

#[test]
fn sweep_single_probability_gives_single_row_and_duplicates_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "1", "8");
    let single = dir.path().join("s1");
    let out = xattn(&[
        "sweep-ph",
        "--data",
        data.to_str().unwrap(),
        "--out",
        single.to_str().unwrap(),
        "--seed",
        "3",
        "--trials-encoder",
        "60",
        "--probs",
        "0.5",
    ]);
    assert_success(&out);
    let table = std::fs::read_to_string(single.join("sweep_ph.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "p,l=1,l=2,l-AVG,deletion");
    assert!(lines[1].starts_with("0.5,"));

    let dedup = dir.path().join("s2");
    let out = xattn(&[
        "sweep-ph",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dedup.to_str().unwrap(),
        "--seed",
        "3",
        "--trials-encoder",
        "60",
        "--probs",
        "0.5,0.5,0.3",
    ]);
    assert_success(&out);
    let table = std::fs::read_to_string(dedup.join("sweep_ph.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "duplicates must collapse: {table}");
    assert!(lines[1].starts_with("0.5,"));
    assert!(lines[2].starts_with("0.3,"));
}

// -- render ---------------------------------------------------------------------

#[test]
fn render_covers_every_pipeline_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "1", "7");
    let run_out = dir.path().join("run");
    assert_success(&run_small(&data, &run_out, &[]));
    for file in [
        data.join("sample_0.spg"),
        run_out.join("sample_0_ca.csv"),
        run_out.join("sample_0_smx.xsal"),
        run_out.join("sample_0_smh.xsalh"),
    ] {
        let out = xattn(&["render", file.to_str().unwrap()]);
        assert_success(&out);
        let pgm = std::fs::read_to_string(format!("{}.pgm", file.display())).unwrap();
        assert!(pgm.starts_with("P2\n"), "{}", file.display());
        let out = xattn(&["render", file.to_str().unwrap(), "--svg"]);
        assert_success(&out);
        let svg = std::fs::read_to_string(format!("{}.svg", file.display())).unwrap();
        assert!(svg.starts_with("<svg"));
    }
}

#[test]
fn render_scales_extremes_and_constant_maps() {
    let dir = tempfile::tempdir().unwrap();
    let binary = dir.path().join("binary.csv");
    std::fs::write(&binary, "0,1\n1,0\n").unwrap();
    let out_path = dir.path().join("binary.pgm");
    assert_success(&xattn(&[
        "render",
        binary.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]));
    let pgm = std::fs::read_to_string(&out_path).unwrap();
    let body: Vec<&str> = pgm.lines().skip(3).collect();
    assert_eq!(body, vec!["0 255", "255 0"]);

    let constant = dir.path().join("constant.csv");
    std::fs::write(&constant, "2,2\n2,2\n").unwrap();
    let out_path = dir.path().join("constant.pgm");
    assert_success(&xattn(&[
        "render",
        constant.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]));
    let pgm = std::fs::read_to_string(&out_path).unwrap();
    for line in pgm.lines().skip(3) {
        for v in line.split_whitespace() {
            assert_eq!(v, "128");
        }
    }
}

#[test]
fn render_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.xsalh");
    std::fs::write(&bad, "XSALH1 2 3\n1 2 3\n").unwrap(); // missing row
    let out = xattn(&["render", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
