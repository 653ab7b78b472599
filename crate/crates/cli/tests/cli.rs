use std::fs;
use std::path::Path;

use biharm_cli::{run, EXIT_CHECK, EXIT_CONFIG, EXIT_OK};
use biharm_core::io::load;

fn biharm(args: &[&str]) -> i32 {
    run(std::iter::once("biharm").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn provenance_line(text: &str) -> &str {
    text.lines().next().unwrap()
}

#[test]
fn zero_data_writes_zero_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fwd");
    assert_eq!(biharm(&["forward", "--out", out.to_str().unwrap(), "--grid", "9x9x5"]), EXIT_OK);
    for name in ["u", "w"] {
        let f = load(&out.join(format!("{name}.bfld"))).unwrap().into_scalar().unwrap();
        assert_eq!(f.grid.counts(), &[9, 9, 5]);
        assert!(f.values.iter().all(|v| v.norm() == 0.0));
    }
    let report = fs::read_to_string(out.join("forward.json")).unwrap();
    assert!(report.contains("config_sha256") && report.contains(biharm_core::VERSION));
}

#[test]
fn mms_table_has_one_row_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[forward]\nmode = \"mms\"\nmms_levels = [5, 9]\n");
    let out = tmp.path().join("mms");
    assert_eq!(biharm(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let csv = fs::read_to_string(out.join("mms.csv")).unwrap();
    assert!(provenance_line(&csv).starts_with("# biharm "));
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    let order: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!(order > 1.9, "{order}");
}

#[test]
fn malformed_configs_exit_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let cfg = write_config(tmp.path(), "[sweep]\ntaus = [1.0]\nprobe_h = 0.2\nnot_a_key = 3\n");
    assert_eq!(biharm(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    let cfg = write_config(tmp.path(), "[schedule]\ns = 1.0\nalpha = 0.5\nh0 = 0.5\neps0 = 0.8\n");
    assert_eq!(biharm(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(biharm(&["forward", "--grid", "9x9", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(biharm(&["forward", "--config", "/nonexistent.toml"]), EXIT_CONFIG);
    // nothing is written before validation succeeds
    assert!(!out.exists());
}

#[test]
fn single_tau_sweep_gives_one_row_and_one_marker_per_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\ntaus = [1.0]\nprobe_h = 0.2\n");
    let out = tmp.path().join("sweep");
    assert_eq!(biharm(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(",ok"));
    let svg = fs::read_to_string(out.join("loglog.svg")).unwrap();
    // A, q and dA errors
    assert_eq!(svg.matches("class=\"marker\"").count(), 3);
    assert_eq!(svg.matches("class=\"overlay\"").count(), 2);
    assert!(svg.contains(&provenance_line(&csv)[2..]));
    // plot re-renders the same figure from the CSV
    let again = tmp.path().join("plot");
    assert_eq!(
        biharm(&[
            "plot",
            "--config",
            &cfg,
            "--out",
            again.to_str().unwrap(),
            "--input",
            out.join("sweep.csv").to_str().unwrap()
        ]),
        EXIT_OK
    );
    let svg2 = fs::read_to_string(again.join("loglog.svg")).unwrap();
    // only the provenance comment differs: the output directory is part of the config
    let body = |s: &str| s.lines().filter(|l| !l.starts_with("<!--")).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&svg), body(&svg2));
}

#[test]
fn check_reports_every_invariant_and_catches_the_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    assert_eq!(biharm(&["check", "--out", ok.to_str().unwrap()]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ok.join("check.json")).unwrap()).unwrap();
    let items = report["result"]["items"].as_array().unwrap();
    for suite in biharm_cli::check::SUITES {
        assert!(items.iter().any(|i| i["suite"] == suite), "{suite}");
    }
    assert!(items.iter().all(|i| i["pass"] == true && i.get("measured").is_some()));
    let bad = tmp.path().join("bad");
    assert_eq!(biharm(&["check", "--out", bad.to_str().unwrap(), "--inject-fault", "reflection-sign"]), EXIT_CHECK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(bad.join("check.json")).unwrap()).unwrap();
    let failures = report["result"]["failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|f| f.as_str().unwrap().starts_with("gamma0/")));
}
