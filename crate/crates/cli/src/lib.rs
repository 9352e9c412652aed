//! Commands behind the `scenid` binary, usable without spawning a process.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scenid::abstraction::{AbstractionConfig, LaneChangeMode};
use scenid::field_data::{parse_drive_log_str, TrackId, DEFAULT_GAP_TOLERANCE_S};
use scenid::matcher::InstanceLine;
use scenid::ontology::{builtin_definitions, load_scenario_definitions};
use scenid::pipeline::{abstract_segments, identify, PipelineError};
use scenid::synth::{generate_drive, parse_ground_truth, strip_precision};
use scenid::{DriveLog, DriveSpec, GroundTruth, ScenarioDefinition, ScenarioInstance};

/// Default slack when matching detections to labels in `eval`.
pub const DEFAULT_EVAL_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input file, flag or configuration.
    #[error("{0}")]
    Input(String),
    /// A result that should be impossible for valid input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Abstraction(e) => CliError::Input(e.to_string()),
            PipelineError::Parameters(e) => CliError::Internal(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn out_err(e: io::Error) -> CliError {
    CliError::Input(format!("write failed: {e}"))
}

/// Every tunable, as read from a TOML file. Absent keys keep their default.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sensor_range_m: Option<f64>,
    pub dx_beside_m: Option<f64>,
    pub tau_follow_s: Option<f64>,
    pub d_abs_m: Option<f64>,
    pub dv_max_mps: Option<f64>,
    pub t_pre_s: Option<f64>,
    pub t_post_s: Option<f64>,
    pub lane_change_mode: Option<String>,
    pub min_hold_s: Option<f64>,
    pub gap_tolerance_s: Option<f64>,
    /// Overrides the first-act max duration of the built-in definitions.
    pub approach_max_s: Option<f64>,
    pub eval_tolerance_s: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: &RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            sensor_range_m, dx_beside_m, tau_follow_s, d_abs_m, dv_max_mps, t_pre_s, t_post_s,
            lane_change_mode, min_hold_s, gap_tolerance_s, approach_max_s, eval_tolerance_s
        );
        self
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub abstraction: AbstractionConfig<f64>,
    pub gap_tolerance: f64,
    pub approach_max: Option<f64>,
    pub eval_tolerance: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            abstraction: AbstractionConfig::default(),
            gap_tolerance: DEFAULT_GAP_TOLERANCE_S,
            approach_max: None,
            eval_tolerance: DEFAULT_EVAL_TOLERANCE_S,
        }
    }
}

impl Settings {
    /// Resolves defaults, then the config file, then flag overrides.
    pub fn resolve(file: Option<&RunConfig>, flags: &RunConfig) -> Result<Self, CliError> {
        let cfg = file.cloned().unwrap_or_default().overlay(flags);
        let mut s = Settings::default();
        let a = &mut s.abstraction;
        let set = |slot: &mut f64, v: Option<f64>, name: &str, positive: bool| -> Result<(), CliError> {
            if let Some(v) = v {
                if !v.is_finite() || (positive && v <= 0.0) {
                    return Err(CliError::Input(format!("config: {name} out of range: {v}")));
                }
                *slot = v;
            }
            Ok(())
        };
        set(&mut a.roles.sensor_range, cfg.sensor_range_m, "sensor_range_m", true)?;
        set(&mut a.roles.dx_beside, cfg.dx_beside_m, "dx_beside_m", false)?;
        set(&mut a.tau_follow, cfg.tau_follow_s, "tau_follow_s", true)?;
        set(&mut a.d_abs, cfg.d_abs_m, "d_abs_m", true)?;
        set(&mut a.dv_max, cfg.dv_max_mps, "dv_max_mps", true)?;
        set(&mut a.t_pre, cfg.t_pre_s, "t_pre_s", true)?;
        set(&mut a.t_post, cfg.t_post_s, "t_post_s", true)?;
        set(&mut a.min_hold, cfg.min_hold_s, "min_hold_s", false)?;
        if a.min_hold < 0.0 {
            return Err(CliError::Input("config: min_hold_s must be >= 0".into()));
        }
        if let Some(mode) = &cfg.lane_change_mode {
            a.mode = mode
                .parse()
                .map_err(|e: String| CliError::Input(format!("config: {e}")))?;
        }
        set(&mut s.gap_tolerance, cfg.gap_tolerance_s, "gap_tolerance_s", true)?;
        set(&mut s.eval_tolerance, cfg.eval_tolerance_s, "eval_tolerance_s", false)?;
        if s.eval_tolerance < 0.0 {
            return Err(CliError::Input("config: eval_tolerance_s must be >= 0".into()));
        }
        if let Some(max) = cfg.approach_max_s {
            if !(max.is_finite() && max > 0.0) {
                return Err(CliError::Input(format!("config: approach_max_s out of range: {max}")));
            }
            s.approach_max = Some(max);
        }
        Ok(s)
    }

    /// The effective configuration, as TOML.
    pub fn to_toml(&self) -> String {
        let a = &self.abstraction;
        let cfg = RunConfig {
            sensor_range_m: Some(a.roles.sensor_range),
            dx_beside_m: Some(a.roles.dx_beside),
            tau_follow_s: Some(a.tau_follow),
            d_abs_m: Some(a.d_abs),
            dv_max_mps: Some(a.dv_max),
            t_pre_s: Some(a.t_pre),
            t_post_s: Some(a.t_post),
            lane_change_mode: Some(a.mode.name().to_string()),
            min_hold_s: Some(a.min_hold),
            gap_tolerance_s: Some(self.gap_tolerance),
            approach_max_s: self.approach_max,
            eval_tolerance_s: Some(self.eval_tolerance),
        };
        toml::to_string(&cfg).expect("plain struct serializes")
    }

    /// Built-in definitions with the configured approach limit applied.
    pub fn builtin_definitions(&self) -> Vec<ScenarioDefinition> {
        let mut defs = builtin_definitions();
        if let Some(max) = self.approach_max {
            for d in &mut defs {
                d.acts[0].max_duration = Some(max);
            }
        }
        defs
    }
}

/// Loads definitions from `path`, or the built-ins when `None`.
pub fn load_definitions(path: Option<&Path>, settings: &Settings) -> Result<Vec<ScenarioDefinition>, CliError> {
    match path {
        None => Ok(settings.builtin_definitions()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            load_scenario_definitions(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

pub fn read_log(path: &Path) -> Result<DriveLog, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_drive_log_str(&text, &path.display().to_string())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn f3(t: f64) -> String {
    format!("{t:.3}")
}

fn opt_id(id: Option<TrackId>) -> String {
    id.map_or_else(|| "-".to_string(), |i| i.to_string())
}

/// Writes the abstract layer of every segment of `log`.
pub fn cmd_abstract(log: &DriveLog, settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    for seg in abstract_segments(log, settings.gap_tolerance, &settings.abstraction)? {
        let d = &seg.drive;
        writeln!(
            out,
            "# source={} segment={} mode={} span={},{}",
            seg.log.meta.source,
            seg.log.meta.segment,
            d.mode.name(),
            f3(d.span.start),
            f3(d.span.end)
        )
        .map_err(out_err)?;
        for a in &d.activities {
            writeln!(
                out,
                "activity actor={} kind={} t_start={} t_end={}",
                a.actor,
                a.kind,
                f3(a.interval.start),
                f3(a.interval.end)
            )
            .map_err(out_err)?;
        }
        for e in &d.events {
            write!(out, "event kind={} t={} actor={}", e.kind, f3(e.t), opt_id(e.actor)).map_err(out_err)?;
            if let Some(lead) = e.lead {
                write!(out, " old={} new={}", opt_id(lead.old), opt_id(lead.new)).map_err(out_err)?;
            }
            writeln!(out).map_err(out_err)?;
        }
        for c in &d.conditions {
            for iv in &c.intervals {
                writeln!(
                    out,
                    "condition kind={} actor={} t_start={} t_end={}",
                    c.kind,
                    c.actor,
                    f3(iv.start),
                    f3(iv.end)
                )
                .map_err(out_err)?;
            }
        }
        for r in &d.roles {
            writeln!(
                out,
                "role role={} track={} t_start={} t_end={}",
                r.role,
                r.track,
                f3(r.interval.start),
                f3(r.interval.end)
            )
            .map_err(out_err)?;
        }
    }
    Ok(())
}

pub fn detect(log: &DriveLog, defs: &[ScenarioDefinition], settings: &Settings) -> Result<Vec<ScenarioInstance>, CliError> {
    Ok(identify(log, defs, settings.gap_tolerance, &settings.abstraction)?)
}

/// Writes one line per identified instance.
pub fn cmd_detect(
    log: &DriveLog,
    defs: &[ScenarioDefinition],
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    for inst in detect(log, defs, settings)? {
        writeln!(out, "{}", InstanceLine(&inst)).map_err(out_err)?;
    }
    Ok(())
}

/// Generates every drive in `specs` into `dir` as `<name>.log` and
/// `<name>.truth`. Returns the written log paths.
pub fn cmd_synth(specs: &[DriveSpec], dir: &Path, strip: bool) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for spec in specs {
        let (log, truth) = generate_drive(spec).map_err(|e| CliError::Input(e.to_string()))?;
        let log = if strip { strip_precision(&log) } else { log };
        let log_path = dir.join(format!("{}.log", spec.name));
        let header = format!("# synth drive={} seed={}\n", spec.name, spec.seed);
        fs::write(&log_path, header + &log.to_string()).map_err(|e| io_err(&log_path, e))?;
        let truth_path = dir.join(format!("{}.truth", spec.name));
        fs::write(&truth_path, truth.to_string()).map_err(|e| io_err(&truth_path, e))?;
        written.push(log_path);
    }
    Ok(written)
}

/// One detection or label that found no partner.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub drive: String,
    pub scenario: String,
    pub target: Option<TrackId>,
    pub t_start: f64,
    pub t_end: f64,
    /// False positive that overlaps a label marked ambiguous for this mode.
    pub undecidable: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// False positives flagged undecidable.
    pub flagged_fp: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub mode: String,
    pub drives: usize,
    pub scores: BTreeMap<String, ScenarioScore>,
    pub false_positives: Vec<Mismatch>,
    pub false_negatives: Vec<Mismatch>,
}

fn widened_overlap(a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    a.0 - tol < b.1 && b.0 < a.1 + tol
}

/// Greedy matching in order of detection start: each detection takes the
/// earliest unmatched label with the same scenario and target whose
/// interval overlaps its own widened by `tolerance`.
pub fn score_drive(
    drive: &str,
    detections: &[ScenarioInstance],
    truth: &GroundTruth,
    mode: LaneChangeMode,
    tolerance: f64,
    report: &mut EvaluationReport,
) {
    let mut dets: Vec<&ScenarioInstance> = detections.iter().collect();
    dets.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let mut labels: Vec<_> = truth.labels.iter().collect();
    labels.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let mut used = vec![false; labels.len()];
    for name in truth.labels.iter().map(|l| &l.scenario).chain(detections.iter().map(|d| &d.definition)) {
        report.scores.entry(name.clone()).or_default();
    }
    for d in dets {
        let hit = labels.iter().enumerate().position(|(i, l)| {
            !used[i]
                && l.scenario == d.definition
                && l.target == d.target
                && widened_overlap((d.t_start, d.t_end), (l.t_start, l.t_end), tolerance)
        });
        let score = report.scores.get_mut(&d.definition).expect("inserted");
        match hit {
            Some(i) => {
                used[i] = true;
                score.tp += 1;
            }
            None => {
                let undecidable = truth.ambiguous.iter().any(|a| {
                    a.mode == mode
                        && a.label.scenario == d.definition
                        && a.label.target == d.target
                        && widened_overlap((d.t_start, d.t_end), (a.label.t_start, a.label.t_end), tolerance)
                });
                score.fp += 1;
                score.flagged_fp += usize::from(undecidable);
                report.false_positives.push(Mismatch {
                    drive: drive.to_string(),
                    scenario: d.definition.clone(),
                    target: d.target,
                    t_start: d.t_start,
                    t_end: d.t_end,
                    undecidable,
                });
            }
        }
    }
    for (l, _) in labels.iter().zip(&used).filter(|(_, u)| !**u) {
        report.scores.get_mut(&l.scenario).expect("inserted").fn_ += 1;
        report.false_negatives.push(Mismatch {
            drive: drive.to_string(),
            scenario: l.scenario.clone(),
            target: l.target,
            t_start: l.t_start,
            t_end: l.t_end,
            undecidable: false,
        });
    }
}

/// Runs detection on every `<name>.log` in `dir` that has a `<name>.truth`
/// next to it and scores the result.
pub fn cmd_eval(dir: &Path, defs: &[ScenarioDefinition], settings: &Settings) -> Result<EvaluationReport, CliError> {
    let mut logs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log") && p.with_extension("truth").is_file())
        .collect();
    logs.sort();
    if logs.is_empty() {
        return Err(CliError::Input(format!("{}: no .log files with .truth labels", dir.display())));
    }
    let mut report = EvaluationReport {
        mode: settings.abstraction.mode.name().to_string(),
        ..EvaluationReport::default()
    };
    for path in &logs {
        let log = read_log(path)?;
        let truth_path = path.with_extension("truth");
        let text = fs::read_to_string(&truth_path).map_err(|e| io_err(&truth_path, e))?;
        let truth: GroundTruth = parse_ground_truth(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", truth_path.display())))?;
        let mode = settings.abstraction.mode.resolve(&log);
        let found = detect(&log, defs, settings)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        score_drive(&name, &found, &truth, mode, settings.eval_tolerance, &mut report);
        report.drives += 1;
    }
    Ok(report)
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# drives={} mode={}", self.drives, self.mode)?;
        writeln!(f, "# {:<16} {:>6} {:>6} {:>6} {:>10}", "scenario", "TP", "FP", "FN", "flagged")?;
        for (name, s) in &self.scores {
            writeln!(f, "# {:<16} {:>6} {:>6} {:>6} {:>10}", name, s.tp, s.fp, s.fn_, s.flagged_fp)?;
        }
        for (name, s) in &self.scores {
            writeln!(
                f,
                "eval scenario={name} tp={} fp={} fn={} flagged_fp={}",
                s.tp, s.fp, s.fn_, s.flagged_fp
            )?;
        }
        for (tag, list) in [("fp", &self.false_positives), ("fn", &self.false_negatives)] {
            for m in list {
                write!(
                    f,
                    "{tag} drive={} scenario={} target={} t_start={} t_end={}",
                    m.drive,
                    m.scenario,
                    opt_id(m.target),
                    f3(m.t_start),
                    f3(m.t_end)
                )?;
                if m.undecidable {
                    f.write_str(" undecidable")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}
