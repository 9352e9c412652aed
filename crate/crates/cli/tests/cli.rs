use std::fs;
use std::path::Path;
use std::process::Command;

use scenid::abstraction::LaneChangeMode;
use scenid::roles::Side;
use scenid::synth::{ManeuverKind, ManeuverSpec};
use scenid::DriveSpec;
use scenid_cli::{
    cmd_abstract, cmd_detect, cmd_eval, cmd_synth, load_definitions, read_log, RunConfig, Settings,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scenid"))
}

fn cut_in_spec(name: &str) -> DriveSpec {
    let mut spec = DriveSpec::new(name);
    spec.duration = 30.0;
    spec.noise = 0.02;
    spec.seed = 5;
    let mut m = ManeuverSpec::new(ManeuverKind::CutIn, 12.0);
    m.origin = Side::Right;
    m.gap = 22.0;
    m.dv = 0.5;
    spec.maneuvers.push(m);
    spec
}

fn synth_one(dir: &Path) -> std::path::PathBuf {
    cmd_synth(&[cut_in_spec("one")], dir, false).unwrap().remove(0)
}

#[test]
fn precedence_flag_over_file_over_default() {
    let file = RunConfig::from_toml("d_abs_m = 30.0\nlane_change_mode = \"simplified\"\n").unwrap();
    let flags = RunConfig {
        lane_change_mode: Some("precise".into()),
        ..RunConfig::default()
    };
    let s = Settings::resolve(Some(&file), &flags).unwrap();
    assert_eq!(s.abstraction.d_abs, 30.0);
    assert_eq!(s.abstraction.mode, LaneChangeMode::Precise);
    assert_eq!(s.abstraction.tau_follow, 2.0);
    assert_eq!(s.eval_tolerance, 0.5);
}

#[test]
fn config_errors() {
    assert!(RunConfig::from_toml("d_abs = 3\n").is_err());
    let bad = RunConfig {
        tau_follow_s: Some(-1.0),
        ..RunConfig::default()
    };
    assert!(Settings::resolve(None, &bad).is_err());
    let bad = RunConfig {
        lane_change_mode: Some("psychic".into()),
        ..RunConfig::default()
    };
    assert!(Settings::resolve(None, &bad).is_err());
}

#[test]
fn printed_config_reads_back() {
    let s = Settings::default();
    let again = Settings::resolve(Some(&RunConfig::from_toml(&s.to_toml()).unwrap()), &RunConfig::default()).unwrap();
    assert_eq!(again, s);
}

#[test]
fn approach_max_applies_to_builtins() {
    let flags = RunConfig {
        approach_max_s: Some(4.0),
        ..RunConfig::default()
    };
    let s = Settings::resolve(None, &flags).unwrap();
    let defs = load_definitions(None, &s).unwrap();
    assert!(defs.iter().all(|d| d.acts[0].max_duration == Some(4.0)));
}

#[test]
fn detect_output_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = read_log(&synth_one(dir.path())).unwrap();
    let s = Settings::default();
    let mut out = Vec::new();
    cmd_detect(&log, &load_definitions(None, &s).unwrap(), &s, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    assert!(lines[0].starts_with("scenario=cut-in t_start="));
    assert!(lines[0].contains(" target=10 acts="));
    let dx: f64 = lines[0]
        .split_whitespace()
        .find_map(|t| t.strip_prefix("dx="))
        .unwrap()
        .parse()
        .unwrap();
    // gap at the marking crossing, read one frame away at most
    assert!((dx - 22.0).abs() < 0.05, "{}", lines[0]);
}

#[test]
fn abstract_dump_has_all_record_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let log = read_log(&synth_one(dir.path())).unwrap();
    let mut out = Vec::new();
    cmd_abstract(&log, &Settings::default(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("# source="));
    for prefix in ["activity actor=ego kind=LaneKeeping", "event kind=LeadChange", "condition kind=Following", "role role=FirstRight track=10"] {
        assert!(text.contains(prefix), "missing {prefix}");
    }
    assert!(text.contains("kind=LaneChangeLeftValid"));
}

#[test]
fn user_definition_file() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = synth_one(dir.path());
    let defs_path = dir.path().join("mine.scn");
    fs::write(
        &defs_path,
        "# target settles in front of the ego\n\
         scenario merge-ahead\n\
         act beside\n  require target LaneKeeping\n  hold target DrivingParallel\n  candidates FirstLeft,FirstRight\n\
         act merge\n  require target LaneChangeValid\n",
    )
    .unwrap();
    let s = Settings::default();
    let defs = load_definitions(Some(&defs_path), &s).unwrap();
    let mut out = Vec::new();
    cmd_detect(&read_log(&log_path).unwrap(), &defs, &s, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("scenario=merge-ahead "), "{text}");
}

#[test]
fn eval_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut specs = vec![cut_in_spec("a"), cut_in_spec("b")];
    specs[1].maneuvers[0].kind = ManeuverKind::Overtake;
    cmd_synth(&specs, dir.path(), false).unwrap();
    let s = Settings::default();
    let report = cmd_eval(dir.path(), &load_definitions(None, &s).unwrap(), &s).unwrap();
    assert_eq!(report.drives, 2);
    let cut_in = report.scores["cut-in"];
    assert_eq!((cut_in.tp, cut_in.fp, cut_in.fn_), (1, 0, 0));
    assert!(report.to_string().contains("eval scenario=cut-in tp=1 fp=0 fn=0 flagged_fp=0"));
}

#[test]
fn binary_detect_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let log = synth_one(dir.path());
    let run = || bin().arg("detect").arg(&log).output().unwrap();
    let (a, b) = (run(), run());
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["detect", "/nonexistent/drive.log"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "tau = 1\n").unwrap();
    let log = synth_one(dir.path());
    let out = bin().arg("detect").arg(&log).arg("--config").arg(&bad_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let garbage = dir.path().join("garbage.log");
    fs::write(&garbage, "t=0 ego=30,2,0,3.5\nt=0 ego=30,2,0,3.5\n").unwrap();
    let out = bin().arg("detect").arg(&garbage).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn binary_print_config() {
    let out = bin().args(["detect", "x.log", "--print-config", "--mode", "simplified"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lane_change_mode = \"simplified\""), "{text}");
}

#[test]
fn binary_synth_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("drives.spec");
    fs::write(&spec, cut_in_spec("from-file").to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin().arg("synth").arg(&spec).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("from-file.truth").is_file());
    let out = bin().arg("eval").arg(&out_dir).args(["--mode", "simplified"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval scenario=cut-in tp=1 fp=0 fn=0"));
}
