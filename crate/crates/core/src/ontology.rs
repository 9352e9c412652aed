//! Scenario metamodel: definitions made of ordered acts, and the text format
//! they are loaded from.
//!
//! ```text
//! # comment
//! scenario <name>
//!   version <tag>
//!   act <name> [min=<s>] [max=<s>]
//!     require <ego|target> <activity>
//!     hold target <Following|DrivingParallel>
//!     candidates <Role>,<Role>,...
//!     direction toward-ego | same-as <act-name>
//! ```
//!
//! Activities are the five [`ActivityKind`] names plus `LaneChangeValid` and
//! `LaneChangeInvalid`, which match either direction. Indentation is not
//! significant; `act` lines attach to the preceding `scenario`, act
//! attributes to the preceding `act`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::abstraction::{ActivityKind, EventKind};
use crate::field_data::TrackId;
use crate::num::Scalar;
use crate::roles::Role;

/// Version tag carried by the built-in definitions.
pub const BUILTIN_VERSION: &str = "reconstructed-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorRole {
    Ego,
    Target,
}

impl ActorRole {
    pub fn name(self) -> &'static str {
        match self {
            ActorRole::Ego => "ego",
            ActorRole::Target => "target",
        }
    }
}

impl FromStr for ActorRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ego" => Ok(ActorRole::Ego),
            "target" => Ok(ActorRole::Target),
            other => Err(format!("unknown actor {other:?}")),
        }
    }
}

/// Activity requirement of an act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActivityPattern {
    Exact(ActivityKind),
    /// A valid lane change in either direction.
    AnyValidChange,
    /// An invalid lane change in either direction.
    AnyInvalidChange,
}

impl ActivityPattern {
    pub fn matches(self, kind: ActivityKind) -> bool {
        match self {
            ActivityPattern::Exact(k) => k == kind,
            ActivityPattern::AnyValidChange => kind.is_valid_change(),
            ActivityPattern::AnyInvalidChange => kind.is_lane_change() && !kind.is_valid_change(),
        }
    }

    pub fn is_lane_change(self) -> bool {
        match self {
            ActivityPattern::Exact(k) => k.is_lane_change(),
            _ => true,
        }
    }
}

impl fmt::Display for ActivityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityPattern::Exact(k) => write!(f, "{k}"),
            ActivityPattern::AnyValidChange => f.write_str("LaneChangeValid"),
            ActivityPattern::AnyInvalidChange => f.write_str("LaneChangeInvalid"),
        }
    }
}

impl FromStr for ActivityPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LaneChangeValid" => Ok(ActivityPattern::AnyValidChange),
            "LaneChangeInvalid" => Ok(ActivityPattern::AnyInvalidChange),
            other => other.parse().map(ActivityPattern::Exact),
        }
    }
}

/// Constraint on the direction of the target's lane change within an act.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DirectionConstraint {
    /// Toward the ego lane, judged from the side the target was bound on.
    TowardEgo,
    /// Same direction as the target's lane change in the named earlier act.
    SameAs(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActSpec<T> {
    pub name: String,
    pub required_activities: Vec<(ActorRole, ActivityPattern)>,
    /// Threshold conditions that must hold throughout the act.
    pub required_conditions: Vec<(ActorRole, EventKind)>,
    /// Roles the target may be bound from; first act only.
    pub candidate_roles: Vec<Role>,
    pub min_duration: T,
    pub max_duration: Option<T>,
    pub direction: Option<DirectionConstraint>,
}

impl<T: Scalar> ActSpec<T> {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            required_activities: Vec::new(),
            required_conditions: Vec::new(),
            candidate_roles: Vec::new(),
            min_duration: T::zero(),
            max_duration: None,
            direction: None,
        }
    }

    fn require(mut self, actor: ActorRole, pattern: ActivityPattern) -> Self {
        self.required_activities.push((actor, pattern));
        self
    }

    fn hold(mut self, kind: EventKind) -> Self {
        self.required_conditions.push((ActorRole::Target, kind));
        self
    }

    fn references_target(&self) -> bool {
        self.required_activities
            .iter()
            .any(|(a, _)| *a == ActorRole::Target)
            || self
                .required_conditions
                .iter()
                .any(|(a, _)| *a == ActorRole::Target)
    }

    pub fn target_lane_change(&self) -> Option<ActivityPattern> {
        self.required_activities
            .iter()
            .find(|(a, p)| *a == ActorRole::Target && p.is_lane_change())
            .map(|(_, p)| *p)
    }

    fn content_key(&self) -> (Vec<(ActorRole, ActivityPattern)>, Vec<(ActorRole, EventKind)>, Option<DirectionConstraint>) {
        let mut acts = self.required_activities.clone();
        acts.sort();
        acts.dedup();
        let mut conds = self.required_conditions.clone();
        conds.sort();
        conds.dedup();
        (acts, conds, self.direction.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDefinition<T> {
    pub name: String,
    pub version: Option<String>,
    pub acts: Vec<ActSpec<T>>,
}

impl<T: Scalar> ScenarioDefinition<T> {
    pub fn references_target(&self) -> bool {
        self.acts.iter().any(ActSpec::references_target)
    }

    pub fn act_index(&self, name: &str) -> Option<usize> {
        self.acts.iter().position(|a| a.name == name)
    }
}

/// Concrete values measured for an identified instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterRecord<T> {
    /// Gap ego to target at the middle of the target's lane change.
    pub dx_at_crossing: T,
    pub dv_at_crossing: T,
    pub v_ego_at_crossing: T,
    pub lane_change_duration: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance<T> {
    pub definition: String,
    pub target: Option<TrackId>,
    pub t_start: T,
    pub t_end: T,
    /// Entry time of every act; the first equals `t_start`.
    pub act_boundaries: Vec<T>,
    pub parameters: Option<ParameterRecord<T>>,
}

/// Adjacent-lane roles a cut-in or cut-through vehicle is picked up from.
pub const ADJACENT_ROLES: [Role; 4] = [
    Role::FirstLeft,
    Role::FirstRight,
    Role::SecondLeft,
    Role::SecondRight,
];

/// Cut-in: parallel in an adjacent lane, valid lane change toward the ego
/// lane, then followed by the ego.
pub fn builtin_cut_in<T: Scalar>() -> ScenarioDefinition<T> {
    use ActivityKind::LaneKeeping;
    use ActivityPattern::{AnyValidChange, Exact};
    let mut approach = ActSpec::new("approach")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, Exact(LaneKeeping))
        .hold(EventKind::DrivingParallel);
    approach.candidate_roles = ADJACENT_ROLES.to_vec();
    approach.max_duration = Some(T::lit(10.0));
    let mut change = ActSpec::new("lane-change")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, AnyValidChange);
    change.direction = Some(DirectionConstraint::TowardEgo);
    let mut follow = ActSpec::new("follow")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, Exact(LaneKeeping))
        .hold(EventKind::Following);
    follow.min_duration = T::lit(1.0);
    ScenarioDefinition {
        name: "cut-in".to_string(),
        version: Some(BUILTIN_VERSION.to_string()),
        acts: vec![approach, change, follow],
    }
}

/// Cut-through: into the ego lane and out to the opposite adjacent lane,
/// both changes in the same direction.
pub fn builtin_cut_through<T: Scalar>() -> ScenarioDefinition<T> {
    use ActivityKind::LaneKeeping;
    use ActivityPattern::{AnyValidChange, Exact};
    let mut approach = ActSpec::new("approach")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, Exact(LaneKeeping))
        .hold(EventKind::DrivingParallel);
    approach.candidate_roles = ADJACENT_ROLES.to_vec();
    approach.max_duration = Some(T::lit(10.0));
    let mut enter = ActSpec::new("enter")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, AnyValidChange);
    enter.direction = Some(DirectionConstraint::TowardEgo);
    let pass = ActSpec::new("pass")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, Exact(LaneKeeping));
    let mut exit = ActSpec::new("exit")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, AnyValidChange);
    exit.direction = Some(DirectionConstraint::SameAs("enter".to_string()));
    let mut depart = ActSpec::new("depart")
        .require(ActorRole::Ego, Exact(LaneKeeping))
        .require(ActorRole::Target, Exact(LaneKeeping));
    depart.min_duration = T::lit(1.0);
    ScenarioDefinition {
        name: "cut-through".to_string(),
        version: Some(BUILTIN_VERSION.to_string()),
        acts: vec![approach, enter, pass, exit, depart],
    }
}

pub fn builtin_definitions<T: Scalar>() -> Vec<ScenarioDefinition<T>> {
    vec![builtin_cut_in(), builtin_cut_through()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub act: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.act {
            Some(i) => write!(f, "act {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks the structural invariants of a definition. Empty means valid.
pub fn validate_definition<T: Scalar>(def: &ScenarioDefinition<T>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |act: Option<usize>, message: &str| {
        out.push(Diagnostic {
            act,
            message: message.to_string(),
        })
    };
    if def.acts.len() < 2 {
        diag(None, "fewer than two acts");
    }
    let uses_target = def.references_target();
    for (i, act) in def.acts.iter().enumerate() {
        if def.acts[..i].iter().any(|a| a.name == act.name) {
            diag(Some(i), "duplicate act name");
        }
        if act.required_activities.is_empty() {
            diag(Some(i), "no required activities");
        }
        if act.min_duration < T::zero() {
            diag(Some(i), "negative min duration");
        }
        if let Some(max) = act.max_duration {
            if max <= T::zero() {
                diag(Some(i), "max duration must be positive");
            }
            if act.min_duration > max {
                diag(Some(i), "min duration exceeds max duration");
            }
        }
        if act
            .required_conditions
            .iter()
            .any(|(a, _)| *a == ActorRole::Ego)
        {
            diag(Some(i), "conditions must refer to the target");
        }
        if act
            .required_conditions
            .iter()
            .any(|(_, k)| !k.is_threshold())
        {
            diag(Some(i), "only threshold events can be held");
        }
        if i > 0 && !act.candidate_roles.is_empty() {
            diag(Some(i), "candidate roles only allowed in the first act");
        }
        if let Some(dir) = &act.direction {
            if act.target_lane_change().is_none() {
                diag(Some(i), "direction constraint needs a target lane change");
            }
            if let DirectionConstraint::SameAs(name) = dir {
                match def.act_index(name) {
                    Some(j) if j < i && def.acts[j].target_lane_change().is_some() => {}
                    _ => diag(
                        Some(i),
                        "same-as must name an earlier act with a target lane change",
                    ),
                }
            }
        }
        if i > 0 && act.content_key() == def.acts[i - 1].content_key() {
            diag(Some(i), "consecutive acts identical");
        }
    }
    if uses_target && def.acts.first().map_or(true, |a| a.candidate_roles.is_empty()) {
        diag(Some(0), "first act needs candidate roles to bind the target");
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum DefinitionError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown activity {0:?}")]
    UnknownActivity(String),
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("scenario {scenario:?}: invalid act sequence: {reason}")]
    InvalidActSequence { scenario: String, reason: String },
}

fn syntax(line: usize, msg: impl Into<String>) -> DefinitionError {
    DefinitionError::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Parses and validates every scenario block in `text`.
pub fn load_scenario_definitions<T: Scalar>(
    text: &str,
) -> Result<Vec<ScenarioDefinition<T>>, DefinitionError> {
    let mut defs: Vec<ScenarioDefinition<T>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut words = trimmed.split_whitespace();
        let keyword = words.next().expect("non-empty line");
        let args: Vec<&str> = words.collect();
        if keyword == "scenario" {
            let [name] = args[..] else {
                return Err(syntax(line, "expected: scenario <name>"));
            };
            defs.push(ScenarioDefinition {
                name: name.to_string(),
                version: None,
                acts: Vec::new(),
            });
            continue;
        }
        let def = defs
            .last_mut()
            .ok_or_else(|| syntax(line, format!("{keyword:?} outside a scenario block")))?;
        match keyword {
            "version" => {
                let [tag] = args[..] else {
                    return Err(syntax(line, "expected: version <tag>"));
                };
                def.version = Some(tag.to_string());
            }
            "act" => {
                let Some((name, opts)) = args.split_first() else {
                    return Err(syntax(line, "expected: act <name> [min=<s>] [max=<s>]"));
                };
                let mut act = ActSpec::new(name);
                for opt in opts {
                    let (key, value) = opt
                        .split_once('=')
                        .ok_or_else(|| syntax(line, format!("bad act option {opt:?}")))?;
                    let v: T = value
                        .parse()
                        .ok()
                        .filter(|v: &T| v.is_finite())
                        .ok_or_else(|| syntax(line, format!("bad duration {value:?}")))?;
                    match key {
                        "min" => act.min_duration = v,
                        "max" => act.max_duration = Some(v),
                        other => return Err(syntax(line, format!("unknown act option {other:?}"))),
                    }
                }
                def.acts.push(act);
            }
            "require" | "hold" | "candidates" | "direction" => {
                let act = def
                    .acts
                    .last_mut()
                    .ok_or_else(|| syntax(line, format!("{keyword:?} outside an act")))?;
                match (keyword, &args[..]) {
                    ("require", [actor, activity]) => {
                        let actor = actor.parse().map_err(|e: String| syntax(line, e))?;
                        let pattern = activity
                            .parse()
                            .map_err(|_| DefinitionError::UnknownActivity(activity.to_string()))?;
                        act.required_activities.push((actor, pattern));
                    }
                    ("hold", [actor, event]) => {
                        let actor = actor.parse().map_err(|e: String| syntax(line, e))?;
                        let kind = event
                            .parse()
                            .map_err(|_| DefinitionError::UnknownEvent(event.to_string()))?;
                        act.required_conditions.push((actor, kind));
                    }
                    ("candidates", [list]) => {
                        act.candidate_roles = list
                            .split(',')
                            .map(|r| r.parse::<Role>().map_err(|e| syntax(line, e)))
                            .collect::<Result<_, _>>()?;
                    }
                    ("direction", ["toward-ego"]) => {
                        act.direction = Some(DirectionConstraint::TowardEgo)
                    }
                    ("direction", ["same-as", name]) => {
                        act.direction = Some(DirectionConstraint::SameAs(name.to_string()))
                    }
                    _ => return Err(syntax(line, format!("malformed {keyword} line"))),
                }
            }
            other => return Err(syntax(line, format!("unknown keyword {other:?}"))),
        }
    }
    for def in &defs {
        let diags = validate_definition(def);
        if !diags.is_empty() {
            return Err(DefinitionError::InvalidActSequence {
                scenario: def.name.clone(),
                reason: diags
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
    }
    Ok(defs)
}

impl<T: Scalar> fmt::Display for ScenarioDefinition<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.name)?;
        if let Some(v) = &self.version {
            writeln!(f, "  version {v}")?;
        }
        for act in &self.acts {
            write!(f, "  act {}", act.name)?;
            if act.min_duration != T::zero() {
                write!(f, " min={}", act.min_duration)?;
            }
            if let Some(max) = act.max_duration {
                write!(f, " max={max}")?;
            }
            writeln!(f)?;
            for (actor, pattern) in &act.required_activities {
                writeln!(f, "    require {} {pattern}", actor.name())?;
            }
            for (actor, kind) in &act.required_conditions {
                writeln!(f, "    hold {} {kind}", actor.name())?;
            }
            if !act.candidate_roles.is_empty() {
                let roles: Vec<&str> = act.candidate_roles.iter().map(|r| r.name()).collect();
                writeln!(f, "    candidates {}", roles.join(","))?;
            }
            match &act.direction {
                Some(DirectionConstraint::TowardEgo) => writeln!(f, "    direction toward-ego")?,
                Some(DirectionConstraint::SameAs(n)) => writeln!(f, "    direction same-as {n}")?,
                None => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_in_shape() {
        let def = builtin_cut_in::<f64>();
        assert_eq!(def.acts.len(), 3);
        let events: std::collections::BTreeSet<EventKind> = def
            .acts
            .iter()
            .flat_map(|a| a.required_conditions.iter().map(|c| c.1))
            .collect();
        assert_eq!(
            events.into_iter().collect::<Vec<_>>(),
            vec![EventKind::Following, EventKind::DrivingParallel]
        );
        for act in &def.acts {
            assert!(act
                .required_activities
                .contains(&(ActorRole::Ego, ActivityPattern::Exact(ActivityKind::LaneKeeping))));
        }
        assert_eq!(def.version.as_deref(), Some(BUILTIN_VERSION));
    }

    #[test]
    fn cut_through_shape() {
        let def = builtin_cut_through::<f64>();
        assert_eq!(def.acts.len(), 5);
        assert_eq!(def.acts[2].min_duration, 0.0);
        assert_eq!(def.acts[4].min_duration, 1.0);
        assert_eq!(
            def.acts[3].direction,
            Some(DirectionConstraint::SameAs("enter".into()))
        );
    }

    #[test]
    fn builtins_validate_clean() {
        for def in builtin_definitions::<f64>() {
            assert!(validate_definition(&def).is_empty(), "{}", def.name);
        }
    }

    #[test]
    fn builtins_roundtrip() {
        for def in builtin_definitions::<f64>() {
            let text = def.to_string();
            let parsed = load_scenario_definitions::<f64>(&text).unwrap();
            assert_eq!(parsed, vec![def]);
        }
    }

    #[test]
    fn one_act_rejected() {
        let text = "scenario lonely\n act only\n  require ego LaneKeeping\n";
        let err = load_scenario_definitions::<f64>(text).unwrap_err();
        assert!(matches!(err, DefinitionError::InvalidActSequence { .. }));
    }

    #[test]
    fn unknown_names_rejected() {
        let text = "scenario x\n act a\n  require target Overtaking\n";
        assert_eq!(
            load_scenario_definitions::<f64>(text).unwrap_err(),
            DefinitionError::UnknownActivity("Overtaking".into())
        );
        let text = "scenario x\n act a\n  hold target Tailgating\n";
        assert_eq!(
            load_scenario_definitions::<f64>(text).unwrap_err(),
            DefinitionError::UnknownEvent("Tailgating".into())
        );
    }

    #[test]
    fn syntax_errors_have_lines() {
        for (text, line) in [
            ("act a\n", 1),
            ("scenario x\n\nrequire ego LaneKeeping\n", 3),
            ("scenario x\n act a min=abc\n", 2),
            ("scenario x\n act a\n  candidates FirstLeft,Third\n", 3),
            ("scenario x\n act a\n  frobnicate\n", 3),
        ] {
            match load_scenario_definitions::<f64>(text) {
                Err(DefinitionError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn diagnostics_for_broken_definitions() {
        let mut def = builtin_cut_in::<f64>();
        def.acts[1] = def.acts[0].clone();
        def.acts[1].name = "again".into();
        def.acts[1].candidate_roles.clear();
        let d = validate_definition(&def);
        assert!(d.iter().any(|d| d.message == "consecutive acts identical" && d.act == Some(1)));

        let mut def = builtin_cut_in::<f64>();
        def.acts[0].min_duration = 11.0;
        let d = validate_definition(&def);
        assert!(d.iter().any(|d| d.message.contains("exceeds max")));

        let mut def = builtin_cut_through::<f64>();
        def.acts[3].direction = Some(DirectionConstraint::SameAs("pass".into()));
        assert!(!validate_definition(&def).is_empty());

        let mut def = builtin_cut_in::<f64>();
        def.acts[0].candidate_roles.clear();
        assert!(!validate_definition(&def).is_empty());
    }

    #[test]
    fn patterns() {
        assert!(ActivityPattern::AnyValidChange.matches(ActivityKind::LaneChangeLeftValid));
        assert!(!ActivityPattern::AnyValidChange.matches(ActivityKind::LaneChangeLeftInvalid));
        assert!(ActivityPattern::AnyInvalidChange.matches(ActivityKind::LaneChangeRightInvalid));
        assert!(!ActivityPattern::AnyInvalidChange.matches(ActivityKind::LaneKeeping));
    }
}
