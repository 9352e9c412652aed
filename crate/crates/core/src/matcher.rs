//! Act-by-act matching of scenario definitions against an abstract drive.
//!
//! One candidate per (definition, target) is live at a time. Candidates are
//! spawned when a track bound to one of the first act's candidate roles
//! satisfies the first act, advance one act when the current act stops
//! holding and the next one holds, and emit once the final act has lasted
//! its minimum duration.
//!
//! Between interval boundaries the snapshot is constant, so stepping only
//! at boundary frames plus duration timers gives the same result as
//! stepping every frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::abstraction::{AbstractDrive, Actor, Snapshot};
use crate::field_data::{DriveLog, TrackId};
use crate::interval::Interval;
use crate::num::Scalar;
use crate::ontology::{
    ActorRole, DirectionConstraint, ParameterRecord, ScenarioDefinition, ScenarioInstance,
};
use crate::roles::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatcherStatus {
    Active,
    Emitted,
    Discarded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateState<T> {
    pub definition: usize,
    pub target: Option<TrackId>,
    /// Index of the current act.
    pub act: usize,
    /// Entry time of every act entered so far.
    pub act_entry: Vec<T>,
    /// Side the target was bound on at spawn.
    pub side: Option<Side>,
    /// Target lane-change direction recorded on entering each act.
    pub directions: Vec<Option<Side>>,
    pub status: MatcherStatus,
}

impl<T: Scalar> CandidateState<T> {
    fn new(definition: usize, target: Option<TrackId>, side: Option<Side>, t: T, snap: &Snapshot<T>) -> Self {
        Self {
            definition,
            target,
            act: 0,
            act_entry: vec![t],
            side,
            directions: vec![target_direction(target, snap)],
            status: MatcherStatus::Active,
        }
    }

    fn entry(&self) -> T {
        self.act_entry[self.act]
    }
}

fn target_direction<T: Scalar>(target: Option<TrackId>, snap: &Snapshot<T>) -> Option<Side> {
    target
        .and_then(|id| snap.activity(Actor::Object(id)))
        .and_then(|k| k.side())
}

/// Whether act `act` of `def` is satisfied for `cand` in `snap`.
pub fn act_holds<T: Scalar>(
    def: &ScenarioDefinition<T>,
    act: usize,
    cand: &CandidateState<T>,
    snap: &Snapshot<T>,
) -> bool {
    let spec = &def.acts[act];
    let actor = |role: ActorRole| match role {
        ActorRole::Ego => Some(Actor::Ego),
        ActorRole::Target => cand.target.map(Actor::Object),
    };
    let activities_ok = spec.required_activities.iter().all(|(role, pattern)| {
        actor(*role)
            .and_then(|a| snap.activity(a))
            .is_some_and(|k| pattern.matches(k))
    });
    if !activities_ok {
        return false;
    }
    let conditions_ok = spec.required_conditions.iter().all(|(role, kind)| {
        *role == ActorRole::Target && cand.target.is_some_and(|id| snap.holds(*kind, id))
    });
    if !conditions_ok {
        return false;
    }
    match &spec.direction {
        None => true,
        Some(constraint) => {
            let Some(dir) = target_direction(cand.target, snap) else {
                return false;
            };
            match constraint {
                DirectionConstraint::TowardEgo => cand.side.map(Side::opposite) == Some(dir),
                DirectionConstraint::SameAs(name) => def
                    .act_index(name)
                    .and_then(|j| cand.directions.get(j).copied().flatten())
                    == Some(dir),
            }
        }
    }
}

fn emit<T: Scalar>(def: &ScenarioDefinition<T>, cand: &CandidateState<T>, t: T) -> ScenarioInstance<T> {
    let first = cand.act_entry[0];
    let t_start = match (def.acts[0].max_duration, cand.act_entry.get(1)) {
        (Some(max), Some(&second)) => first.max(second - max),
        _ => first,
    };
    let mut act_boundaries = cand.act_entry.clone();
    act_boundaries[0] = t_start;
    ScenarioInstance {
        definition: def.name.clone(),
        target: cand.target,
        t_start,
        t_end: t,
        act_boundaries,
        parameters: None,
    }
}

/// Advances one candidate to time `snap.t`.
pub fn step<T: Scalar>(
    def: &ScenarioDefinition<T>,
    cand: &mut CandidateState<T>,
    snap: &Snapshot<T>,
) -> Option<ScenarioInstance<T>> {
    let t = snap.t;
    let last = def.acts.len() - 1;
    let cur = cand.act;
    let spec = &def.acts[cur];
    let dwell = t - cand.entry();
    if cur > 0 && cur < last && spec.max_duration.is_some_and(|max| dwell > max) {
        cand.status = MatcherStatus::Discarded;
        return None;
    }
    if act_holds(def, cur, cand, snap) {
        if cur == last && dwell >= spec.min_duration {
            cand.status = MatcherStatus::Emitted;
            return Some(emit(def, cand, t));
        }
        return None;
    }
    if cur < last && dwell >= spec.min_duration && act_holds(def, cur + 1, cand, snap) {
        cand.act += 1;
        cand.act_entry.push(t);
        cand.directions.push(target_direction(cand.target, snap));
        if cand.act == last && def.acts[last].min_duration <= T::zero() {
            cand.status = MatcherStatus::Emitted;
            return Some(emit(def, cand, t));
        }
        return None;
    }
    cand.status = MatcherStatus::Discarded;
    None
}

type Key = (usize, Option<TrackId>);

/// Matching state over a set of definitions.
#[derive(Debug, Clone)]
pub struct Matcher<'a, T> {
    defs: &'a [ScenarioDefinition<T>],
    live: BTreeMap<Key, CandidateState<T>>,
    emitted: Vec<ScenarioInstance<T>>,
}

impl<'a, T: Scalar> Matcher<'a, T> {
    pub fn new(defs: &'a [ScenarioDefinition<T>]) -> Self {
        Self {
            defs,
            live: BTreeMap::new(),
            emitted: Vec::new(),
        }
    }

    pub fn live(&self) -> impl Iterator<Item = &CandidateState<T>> + '_ {
        self.live.values()
    }

    /// Steps every live candidate, then spawns new ones.
    pub fn step(&mut self, snap: &Snapshot<T>) {
        let defs = self.defs;
        let emitted = &mut self.emitted;
        self.live.retain(|_, cand| {
            if let Some(inst) = step(&defs[cand.definition], cand, snap) {
                emitted.push(inst);
            }
            cand.status == MatcherStatus::Active
        });
        for (d, def) in defs.iter().enumerate() {
            if def.references_target() {
                for (&id, &role) in &snap.roles {
                    if !def.acts[0].candidate_roles.contains(&role)
                        || self.live.contains_key(&(d, Some(id)))
                    {
                        continue;
                    }
                    let cand = CandidateState::new(d, Some(id), role.side(), snap.t, snap);
                    if act_holds(def, 0, &cand, snap) {
                        self.live.insert((d, Some(id)), cand);
                    }
                }
            } else if !self.live.contains_key(&(d, None)) {
                let cand = CandidateState::new(d, None, None, snap.t, snap);
                if act_holds(def, 0, &cand, snap) {
                    self.live.insert((d, None), cand);
                }
            }
        }
    }

    /// Earliest frame after `k` at which a duration check of a live
    /// candidate changes outcome.
    pub fn next_timer(&self, frame_times: &[T], k: usize) -> Option<usize> {
        self.live
            .values()
            .filter_map(|cand| {
                let def = &self.defs[cand.definition];
                let last = def.acts.len() - 1;
                let spec = &def.acts[cand.act];
                let entry = cand.entry();
                let idx = if cand.act == last {
                    frame_times.partition_point(|&t| !(t - entry >= spec.min_duration))
                } else if cand.act > 0 {
                    let max = spec.max_duration?;
                    frame_times.partition_point(|&t| !(t - entry > max))
                } else {
                    return None;
                };
                (idx > k && idx < frame_times.len()).then_some(idx)
            })
            .min()
    }

    /// Emitted instances sorted by `(t_start, name, target)`.
    pub fn finish(mut self) -> Vec<ScenarioInstance<T>> {
        sort_instances(&mut self.emitted);
        self.emitted
    }
}

pub fn sort_instances<T: Scalar>(instances: &mut [ScenarioInstance<T>]) {
    instances.sort_by(|a, b| {
        a.t_start
            .partial_cmp(&b.t_start)
            .expect("finite")
            .then_with(|| a.definition.cmp(&b.definition))
            .then(a.target.cmp(&b.target))
    });
}

/// Matches all definitions against one abstract drive.
pub fn match_scenarios<T: Scalar>(
    drive: &AbstractDrive<T>,
    defs: &[ScenarioDefinition<T>],
) -> Vec<ScenarioInstance<T>> {
    let times = &drive.frame_times;
    if times.is_empty() {
        return Vec::new();
    }
    let mut pending: BTreeSet<usize> = drive
        .boundaries()
        .into_iter()
        .map(|b| times.partition_point(|&t| t < b))
        .filter(|&k| k < times.len())
        .collect();
    pending.insert(0);
    let mut matcher = Matcher::new(defs);
    while let Some(k) = pending.pop_first() {
        matcher.step(&drive.snapshot_at(times[k]));
        if let Some(timer) = matcher.next_timer(times, k) {
            pending.insert(timer);
        }
    }
    matcher.finish()
}

#[derive(Debug, Error, PartialEq)]
pub enum ParameterError {
    #[error("anchor of instance {definition}@{t_start} has no frame with its target")]
    AnchorOutsideLog { definition: String, t_start: f64 },
}

/// Measures the instance at the middle of the target's first lane change
/// inside the instance. Ego-only instances, and instances without a target
/// lane change, have no parameters.
pub fn extract_parameters<T: Scalar>(
    instance: &ScenarioInstance<T>,
    drive: &AbstractDrive<T>,
    log: &DriveLog<T>,
) -> Result<Option<ParameterRecord<T>>, ParameterError> {
    let Some(target) = instance.target else {
        return Ok(None);
    };
    let span = Interval::new(instance.t_start, instance.t_end);
    let change = drive
        .activities_of(Actor::Object(target))
        .filter(|a| a.kind.is_lane_change())
        .find(|a| a.interval.overlaps(&span) || span.contains(a.interval.start));
    let Some(change) = change else {
        return Ok(None);
    };
    let anchor = change.interval.midpoint();
    let err = || ParameterError::AnchorOutsideLog {
        definition: instance.definition.clone(),
        t_start: instance.t_start.as_f64(),
    };
    if !(log.start_time() <= anchor && anchor < log.end_time()) {
        return Err(err());
    }
    let frame = log
        .frames
        .iter()
        .filter(|f| f.object(target).is_some())
        .min_by(|a, b| {
            (a.t - anchor)
                .abs()
                .partial_cmp(&(b.t - anchor).abs())
                .expect("finite")
        })
        .ok_or_else(err)?;
    let obj = frame.object(target).expect("filtered");
    Ok(Some(ParameterRecord {
        dx_at_crossing: obj.dx,
        dv_at_crossing: obj.dv,
        v_ego_at_crossing: frame.ego.speed,
        lane_change_duration: change.interval.len(),
    }))
}

/// One-line rendering used by the `detect` output.
pub struct InstanceLine<'a, T>(pub &'a ScenarioInstance<T>);

impl<T: Scalar> fmt::Display for InstanceLine<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inst = self.0;
        write!(
            f,
            "scenario={} t_start={:.3} t_end={:.3} target=",
            inst.definition,
            inst.t_start.as_f64(),
            inst.t_end.as_f64()
        )?;
        match inst.target {
            Some(id) => write!(f, "{id}")?,
            None => f.write_str("-")?,
        }
        let acts: Vec<String> = inst
            .act_boundaries
            .iter()
            .map(|t| format!("{:.3}", t.as_f64()))
            .collect();
        write!(f, " acts={}", acts.join(","))?;
        match &inst.parameters {
            Some(p) => write!(
                f,
                " dx={:.3} dv={:.3} v_ego={:.3} lc_dur={:.3}",
                p.dx_at_crossing.as_f64(),
                p.dv_at_crossing.as_f64(),
                p.v_ego_at_crossing.as_f64(),
                p.lane_change_duration.as_f64()
            ),
            None => f.write_str(" dx=- dv=- v_ego=- lc_dur=-"),
        }
    }
}
