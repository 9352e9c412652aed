//! Qualitative abstraction of a drive segment: event instants, condition
//! hold-intervals, and per-actor lateral activities.
//!
//! Threshold events (`Following`, `DrivingParallel`) come with the intervals
//! over which their conditions keep holding. State-change events
//! (`LeadChange`, `EgoLaneChange`) anchor the lane-change classifiers.
//!
//! All intervals are half-open. Frame `k` covers `[t_k, t_{k+1})`; the last
//! frame covers one sample period.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::field_data::{DriveLog, TrackId};
use crate::interval::{self, Interval};
use crate::num::Scalar;
use crate::roles::{Role, RoleConfig, RoleTimeline, Side};

/// Distance a vehicle center must keep from both markings, as a fraction of
/// the lane width, to count as being in the lane's center band.
pub const MARKING_CLEARANCE_RATIO: f64 = 0.35;

/// Half-width of the center band: `0.5 * w - 0.35 * w`.
pub fn center_band_half_width<T: Scalar>(lane_width: T) -> T {
    lane_width * T::lit(0.5) - lane_width * T::lit(MARKING_CLEARANCE_RATIO)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Following,
    DrivingParallel,
    LeadChange,
    EgoLaneChange,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [
        EventKind::Following,
        EventKind::DrivingParallel,
        EventKind::LeadChange,
        EventKind::EgoLaneChange,
    ];

    /// Threshold events carry hold intervals; state-change events do not.
    pub fn is_threshold(self) -> bool {
        matches!(self, EventKind::Following | EventKind::DrivingParallel)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Following => "Following",
            EventKind::DrivingParallel => "DrivingParallel",
            EventKind::LeadChange => "LeadChange",
            EventKind::EgoLaneChange => "EgoLaneChange",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Old and new first-ego track of a lead change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeadDetail {
    pub old: Option<TrackId>,
    pub new: Option<TrackId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventInstance<T> {
    pub kind: EventKind,
    pub t: T,
    pub actor: Option<TrackId>,
    pub lead: Option<LeadDetail>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTimeline<T> {
    pub kind: EventKind,
    pub actor: TrackId,
    pub intervals: Vec<Interval<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActivityKind {
    LaneKeeping,
    LaneChangeLeftValid,
    LaneChangeRightValid,
    LaneChangeLeftInvalid,
    LaneChangeRightInvalid,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 5] = [
        ActivityKind::LaneKeeping,
        ActivityKind::LaneChangeLeftValid,
        ActivityKind::LaneChangeRightValid,
        ActivityKind::LaneChangeLeftInvalid,
        ActivityKind::LaneChangeRightInvalid,
    ];

    pub fn lane_change(side: Side, valid: bool) -> Self {
        match (side, valid) {
            (Side::Left, true) => ActivityKind::LaneChangeLeftValid,
            (Side::Right, true) => ActivityKind::LaneChangeRightValid,
            (Side::Left, false) => ActivityKind::LaneChangeLeftInvalid,
            (Side::Right, false) => ActivityKind::LaneChangeRightInvalid,
        }
    }

    pub fn is_lane_change(self) -> bool {
        self != ActivityKind::LaneKeeping
    }

    pub fn is_valid_change(self) -> bool {
        matches!(
            self,
            ActivityKind::LaneChangeLeftValid | ActivityKind::LaneChangeRightValid
        )
    }

    pub fn side(self) -> Option<Side> {
        match self {
            ActivityKind::LaneKeeping => None,
            ActivityKind::LaneChangeLeftValid | ActivityKind::LaneChangeLeftInvalid => {
                Some(Side::Left)
            }
            ActivityKind::LaneChangeRightValid | ActivityKind::LaneChangeRightInvalid => {
                Some(Side::Right)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityKind::LaneKeeping => "LaneKeeping",
            ActivityKind::LaneChangeLeftValid => "LaneChangeLeftValid",
            ActivityKind::LaneChangeRightValid => "LaneChangeRightValid",
            ActivityKind::LaneChangeLeftInvalid => "LaneChangeLeftInvalid",
            ActivityKind::LaneChangeRightInvalid => "LaneChangeRightInvalid",
        }
    }
}

impl fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Ego,
    Object(TrackId),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Ego => f.write_str("ego"),
            Actor::Object(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for Actor {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ego" {
            Ok(Actor::Ego)
        } else {
            s.parse().map(Actor::Object)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityInterval<T> {
    pub actor: Actor,
    pub kind: ActivityKind,
    pub interval: Interval<T>,
}

/// A maximal run during which `track` is bound to `role`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleInterval<T> {
    pub role: Role,
    pub track: TrackId,
    pub interval: Interval<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneChangeMode {
    /// Center-band classification from per-object in-lane offsets.
    Precise,
    /// Constant windows around lead-change events.
    Simplified,
    /// Precise when every object carries an in-lane offset.
    Auto,
}

impl LaneChangeMode {
    pub fn name(self) -> &'static str {
        match self {
            LaneChangeMode::Precise => "precise",
            LaneChangeMode::Simplified => "simplified",
            LaneChangeMode::Auto => "auto",
        }
    }

    pub fn resolve<T: Scalar>(self, log: &DriveLog<T>) -> Self {
        match self {
            LaneChangeMode::Auto if log.has_object_lane_positions() => LaneChangeMode::Precise,
            LaneChangeMode::Auto => LaneChangeMode::Simplified,
            m => m,
        }
    }
}

impl fmt::Display for LaneChangeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LaneChangeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "precise" => Ok(LaneChangeMode::Precise),
            "simplified" => Ok(LaneChangeMode::Simplified),
            "auto" => Ok(LaneChangeMode::Auto),
            other => Err(format!("unknown lane change mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractionConfig<T> {
    pub roles: RoleConfig<T>,
    /// Time headway for the speed-dependent following distance.
    pub tau_follow: T,
    /// Speed-independent following distance; satisfies the distance check alone.
    pub d_abs: T,
    /// Maximum absolute relative speed while following.
    pub dv_max: T,
    pub t_pre: T,
    pub t_post: T,
    pub mode: LaneChangeMode,
    /// Condition runs shorter than this are ignored.
    pub min_hold: T,
}

impl<T: Scalar> Default for AbstractionConfig<T> {
    fn default() -> Self {
        Self {
            roles: RoleConfig::default(),
            tau_follow: T::lit(2.0),
            d_abs: T::lit(25.0),
            dv_max: T::lit(5.0),
            t_pre: T::lit(1.0),
            t_post: T::lit(1.0),
            mode: LaneChangeMode::Auto,
            min_hold: T::zero(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AbstractionError {
    #[error("ego in-lane offset missing at t={t}")]
    MissingLaneOffset { t: f64 },
}

/// Derived qualitative layer of one contiguous segment.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractDrive<T> {
    pub events: Vec<EventInstance<T>>,
    pub conditions: Vec<ConditionTimeline<T>>,
    pub activities: Vec<ActivityInterval<T>>,
    pub roles: Vec<RoleInterval<T>>,
    pub span: Interval<T>,
    /// Native frame timestamps; the matcher steps on these.
    pub frame_times: Vec<T>,
    /// Lane-change mode actually used (never `Auto`).
    pub mode: LaneChangeMode,
}

/// State of the abstract layer at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub t: T,
    pub ego: Option<ActivityKind>,
    pub activities: BTreeMap<TrackId, ActivityKind>,
    pub conditions: BTreeSet<(EventKind, TrackId)>,
    pub roles: BTreeMap<TrackId, Role>,
}

impl<T: Scalar> Snapshot<T> {
    pub fn activity(&self, actor: Actor) -> Option<ActivityKind> {
        match actor {
            Actor::Ego => self.ego,
            Actor::Object(id) => self.activities.get(&id).copied(),
        }
    }

    pub fn holds(&self, kind: EventKind, id: TrackId) -> bool {
        self.conditions.contains(&(kind, id))
    }
}

impl<T: Scalar> AbstractDrive<T> {
    pub fn snapshot_at(&self, t: T) -> Snapshot<T> {
        let mut snap = Snapshot {
            t,
            ego: None,
            activities: BTreeMap::new(),
            conditions: BTreeSet::new(),
            roles: BTreeMap::new(),
        };
        for a in self.activities.iter().filter(|a| a.interval.contains(t)) {
            match a.actor {
                Actor::Ego => snap.ego = Some(a.kind),
                Actor::Object(id) => {
                    snap.activities.insert(id, a.kind);
                }
            }
        }
        for c in &self.conditions {
            if c.intervals.iter().any(|i| i.contains(t)) {
                snap.conditions.insert((c.kind, c.actor));
            }
        }
        for r in self.roles.iter().filter(|r| r.interval.contains(t)) {
            snap.roles.insert(r.track, r.role);
        }
        snap
    }

    /// Every instant at which any activity, condition or role interval
    /// starts or ends, sorted and deduplicated.
    pub fn boundaries(&self) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        let mut push = |iv: &Interval<T>| {
            out.push(iv.start);
            out.push(iv.end);
        };
        self.activities.iter().for_each(|a| push(&a.interval));
        self.conditions
            .iter()
            .flat_map(|c| c.intervals.iter())
            .for_each(&mut push);
        self.roles.iter().for_each(|r| push(&r.interval));
        out.sort_by(|a, b| a.partial_cmp(b).expect("finite boundary"));
        out.dedup();
        out
    }

    pub fn activities_of(&self, actor: Actor) -> impl Iterator<Item = &ActivityInterval<T>> + '_ {
        self.activities.iter().filter(move |a| a.actor == actor)
    }
}

fn frame_index<T: Scalar>(log: &DriveLog<T>, t: T) -> usize {
    log.frames.partition_point(|f| f.t < t)
}

/// One `EgoLaneChange` at each frame whose lane id differs from the previous one.
pub fn detect_ego_lane_change_events<T: Scalar>(log: &DriveLog<T>) -> Vec<EventInstance<T>> {
    log.frames
        .windows(2)
        .filter(|w| w[0].ego.lane_id != w[1].ego.lane_id)
        .map(|w| EventInstance {
            kind: EventKind::EgoLaneChange,
            t: w[1].t,
            actor: None,
            lead: None,
        })
        .collect()
}

/// One `LeadChange` whenever the first-ego binding changes, including
/// appearance and disappearance.
pub fn detect_lead_change_events<T: Scalar>(roles: &RoleTimeline<T>) -> Vec<EventInstance<T>> {
    roles
        .maps
        .windows(2)
        .filter_map(|w| {
            let old = w[0].get(Role::FirstEgo);
            let new = w[1].get(Role::FirstEgo);
            (old != new).then(|| EventInstance {
                kind: EventKind::LeadChange,
                t: w[1].t,
                actor: new.or(old),
                lead: Some(LeadDetail { old, new }),
            })
        })
        .collect()
}

/// Turns per-frame holding sets into per-track maximal runs.
fn condition_runs<T: Scalar>(
    log: &DriveLog<T>,
    kind: EventKind,
    min_hold: T,
    mut holding: impl FnMut(usize) -> Vec<TrackId>,
) -> Vec<ConditionTimeline<T>> {
    let mut open: BTreeMap<TrackId, T> = BTreeMap::new();
    let mut done: BTreeMap<TrackId, Vec<Interval<T>>> = BTreeMap::new();
    for k in 0..log.frames.len() {
        let t = log.frames[k].t;
        let now: BTreeSet<TrackId> = holding(k).into_iter().collect();
        let closed: Vec<TrackId> = open.keys().filter(|id| !now.contains(id)).copied().collect();
        for id in closed {
            let start = open.remove(&id).expect("open run");
            done.entry(id).or_default().push(Interval::new(start, t));
        }
        for id in now {
            open.entry(id).or_insert(t);
        }
    }
    let end = log.end_time();
    for (id, start) in open {
        done.entry(id).or_default().push(Interval::new(start, end));
    }
    done.into_iter()
        .filter_map(|(actor, intervals)| {
            let intervals: Vec<_> = intervals
                .into_iter()
                .filter(|i| i.len() >= min_hold)
                .collect();
            (!intervals.is_empty()).then_some(ConditionTimeline {
                kind,
                actor,
                intervals,
            })
        })
        .collect()
}

/// Following holds for the first-ego object when its gap is within
/// `max(d_abs, tau_follow * v_ego)` and `|dv| <= dv_max`.
pub fn evaluate_following<T: Scalar>(
    log: &DriveLog<T>,
    roles: &RoleTimeline<T>,
    cfg: &AbstractionConfig<T>,
) -> Vec<ConditionTimeline<T>> {
    condition_runs(log, EventKind::Following, cfg.min_hold, |k| {
        let frame = &log.frames[k];
        let Some(id) = roles.maps[k].get(Role::FirstEgo) else {
            return Vec::new();
        };
        let Some(obj) = frame.object(id) else {
            return Vec::new();
        };
        let max_gap = cfg.d_abs.max(cfg.tau_follow * frame.ego.speed);
        if obj.dx <= max_gap && obj.dv.abs() <= cfg.dv_max {
            vec![id]
        } else {
            Vec::new()
        }
    })
}

/// Driving parallel holds for each adjacent-lane role holder inside
/// `[dx_beside, sensor_range]`.
pub fn evaluate_driving_parallel<T: Scalar>(
    log: &DriveLog<T>,
    roles: &RoleTimeline<T>,
    cfg: &AbstractionConfig<T>,
) -> Vec<ConditionTimeline<T>> {
    condition_runs(log, EventKind::DrivingParallel, cfg.min_hold, |k| {
        let frame = &log.frames[k];
        roles.maps[k]
            .iter()
            .filter(|(role, _)| role.is_adjacent())
            .filter_map(|(_, id)| frame.object(id))
            .filter(|o| o.dx >= cfg.roles.dx_beside && o.dx <= cfg.roles.sensor_range)
            .map(|o| o.track_id)
            .collect()
    })
}

/// Onset events for every condition interval.
pub fn condition_events<T: Scalar>(conditions: &[ConditionTimeline<T>]) -> Vec<EventInstance<T>> {
    conditions
        .iter()
        .flat_map(|c| {
            c.intervals.iter().map(move |iv| EventInstance {
                kind: c.kind,
                t: iv.start,
                actor: Some(c.actor),
                lead: None,
            })
        })
        .collect()
}

/// Lateral position sample for the center-band classifier. `lane` is an
/// absolute lane index increasing to the left.
#[derive(Debug, Clone, Copy)]
struct LaneSample<T> {
    t: T,
    lane: i32,
    offset: T,
    width: T,
}

impl<T: Scalar> LaneSample<T> {
    fn in_band(&self) -> bool {
        self.offset.abs() <= center_band_half_width(self.width)
    }
}

/// Classifies the excursion around every lane flip. `flips` are sample
/// indices where the lane differs from the previous sample; `end` closes
/// excursions that never reach a center band.
fn band_lane_changes<T: Scalar>(
    samples: &[LaneSample<T>],
    flips: &[usize],
    end: T,
) -> Vec<(Interval<T>, ActivityKind)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for &k in flips {
        let back = (0..k).rev().find(|&i| samples[i].in_band());
        let start = back.unwrap_or(0);
        if !seen.insert(start) {
            continue;
        }
        let origin = samples[start].lane;
        let first_flip_side = samples[start..]
            .iter()
            .find(|s| s.lane != origin)
            .and_then(|s| Side::of_delta(s.lane - origin))
            .expect("excursion contains a flip");
        let kind_and_end = match (k..samples.len()).find(|&j| samples[j].in_band()) {
            Some(j) => {
                let dest = samples[j].lane;
                let kind = match Side::of_delta(dest - origin) {
                    Some(side) => ActivityKind::lane_change(side, true),
                    None => ActivityKind::lane_change(first_flip_side, false),
                };
                (kind, samples[j].t)
            }
            None => (ActivityKind::lane_change(first_flip_side, false), end),
        };
        out.push((Interval::new(samples[start].t, kind_and_end.1), kind_and_end.0));
    }
    out
}

/// Valid and invalid ego lane changes around each `EgoLaneChange` event.
pub fn classify_ego_lane_changes<T: Scalar>(
    log: &DriveLog<T>,
    ego_lc_events: &[EventInstance<T>],
    _cfg: &AbstractionConfig<T>,
) -> Result<Vec<ActivityInterval<T>>, AbstractionError> {
    let samples = log
        .frames
        .iter()
        .map(|f| {
            let offset = f
                .ego
                .lateral_offset_in_lane
                .ok_or(AbstractionError::MissingLaneOffset { t: f.t.as_f64() })?;
            Ok(LaneSample {
                t: f.t,
                lane: f.ego.lane_id,
                offset,
                width: f.ego.lane_width,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let flips: Vec<usize> = ego_lc_events
        .iter()
        .filter(|e| e.kind == EventKind::EgoLaneChange)
        .map(|e| frame_index(log, e.t))
        .filter(|&k| k > 0 && k < samples.len())
        .collect();
    Ok(band_lane_changes(&samples, &flips, log.end_time())
        .into_iter()
        .map(|(interval, kind)| ActivityInterval {
            actor: Actor::Ego,
            kind,
            interval,
        })
        .collect())
}

/// Maximal runs of consecutive frames in which each track is present.
fn track_runs<T: Scalar>(log: &DriveLog<T>) -> BTreeMap<TrackId, Vec<(usize, usize)>> {
    let mut runs: BTreeMap<TrackId, Vec<(usize, usize)>> = BTreeMap::new();
    for (k, frame) in log.frames.iter().enumerate() {
        for o in &frame.objects {
            let list = runs.entry(o.track_id).or_default();
            match list.last_mut() {
                Some(last) if last.1 + 1 == k => last.1 = k,
                _ => list.push((k, k)),
            }
        }
    }
    runs
}

fn run_span<T: Scalar>(log: &DriveLog<T>, run: (usize, usize)) -> Interval<T> {
    Interval::new(log.frames[run.0].t, log.frame_end(run.1))
}

/// Lane-change windows of tracked objects.
///
/// Precise mode runs the center-band classifier on each object's absolute
/// lane position. Simplified mode places a `[t - t_pre, t + t_post)` window
/// around every lead change that the object's lane offset one frame
/// before/after attributes to a lane change. Windows are clipped to the
/// object's observed span but may overlap each other.
pub fn classify_target_lane_changes<T: Scalar>(
    log: &DriveLog<T>,
    _roles: &RoleTimeline<T>,
    lead_changes: &[EventInstance<T>],
    cfg: &AbstractionConfig<T>,
) -> Vec<ActivityInterval<T>> {
    let runs = track_runs(log);
    let mut out = Vec::new();
    match cfg.mode.resolve(log) {
        LaneChangeMode::Precise | LaneChangeMode::Auto => {
            for (&id, id_runs) in &runs {
                for &(first, last) in id_runs {
                    let samples: Option<Vec<LaneSample<T>>> = (first..=last)
                        .map(|k| {
                            let f = &log.frames[k];
                            let o = f.object(id).expect("present within run");
                            o.lateral_offset_in_lane.map(|offset| LaneSample {
                                t: f.t,
                                lane: f.ego.lane_id + o.resolved_lane_offset(&f.ego),
                                offset,
                                width: f.ego.lane_width,
                            })
                        })
                        .collect();
                    // objects without in-lane positions cannot be classified
                    let Some(samples) = samples else { continue };
                    let flips: Vec<usize> = (1..samples.len())
                        .filter(|&i| samples[i].lane != samples[i - 1].lane)
                        .collect();
                    let end = log.frame_end(last);
                    out.extend(band_lane_changes(&samples, &flips, end).into_iter().map(
                        |(interval, kind)| ActivityInterval {
                            actor: Actor::Object(id),
                            kind,
                            interval,
                        },
                    ));
                }
            }
        }
        LaneChangeMode::Simplified => {
            for ev in lead_changes.iter().filter(|e| e.kind == EventKind::LeadChange) {
                let Some(detail) = ev.lead else { continue };
                let k = frame_index(log, ev.t);
                if k == 0 || k >= log.frames.len() {
                    continue;
                }
                let (before, after) = (&log.frames[k - 1], &log.frames[k]);
                let mut attribute = |id: TrackId, side: Option<Side>, present_at: usize| {
                    let Some(side) = side else { return };
                    let window = Interval::new(ev.t - cfg.t_pre, ev.t + cfg.t_post);
                    let clipped = runs
                        .get(&id)
                        .and_then(|rs| rs.iter().find(|r| r.0 <= present_at && present_at <= r.1))
                        .and_then(|&r| window.intersect(&run_span(log, r)));
                    if let Some(interval) = clipped {
                        out.push(ActivityInterval {
                            actor: Actor::Object(id),
                            kind: ActivityKind::lane_change(side, true),
                            interval,
                        });
                    }
                };
                if let Some(new) = detail.new {
                    // arrived from an adjacent lane
                    let side = before
                        .object(new)
                        .map(|o| o.resolved_lane_offset(&before.ego))
                        .filter(|off| off.abs() == 1)
                        .and_then(|off| Side::of_delta(-off));
                    attribute(new, side, k - 1);
                }
                if let Some(old) = detail.old {
                    // departed to an adjacent lane
                    let side = after
                        .object(old)
                        .map(|o| o.resolved_lane_offset(&after.ego))
                        .filter(|off| off.abs() == 1)
                        .and_then(Side::of_delta);
                    attribute(old, side, k);
                }
            }
        }
    }
    out
}

/// Per actor, the complement of its lane changes within each of its spans.
pub fn derive_lane_keeping<T: Scalar>(
    activities: &[ActivityInterval<T>],
    spans: &[(Actor, Interval<T>)],
) -> Vec<ActivityInterval<T>> {
    spans
        .iter()
        .flat_map(|&(actor, span)| {
            let changes: Vec<Interval<T>> = activities
                .iter()
                .filter(|a| a.actor == actor && a.kind.is_lane_change())
                .map(|a| a.interval)
                .collect();
            interval::subtract(span, &changes)
                .into_iter()
                .map(move |interval| ActivityInterval {
                    actor,
                    kind: ActivityKind::LaneKeeping,
                    interval,
                })
        })
        .collect()
}

/// Merges overlapping windows of one actor. Merged valid windows keep the
/// net direction; windows that cancel out become an invalid change.
fn merge_overlapping<T: Scalar>(mut windows: Vec<ActivityInterval<T>>) -> Vec<ActivityInterval<T>> {
    windows.sort_by(|a, b| {
        a.interval
            .start
            .partial_cmp(&b.interval.start)
            .expect("finite")
    });
    let mut groups: Vec<Vec<ActivityInterval<T>>> = Vec::new();
    for w in windows {
        match groups.last_mut() {
            Some(g) if w.interval.start < g.iter().map(|x| x.interval.end).fold(T::neg_infinity(), T::max) => {
                g.push(w)
            }
            _ => groups.push(vec![w]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            if g.len() == 1 {
                return g[0];
            }
            let net: i32 = g
                .iter()
                .filter(|w| w.kind.is_valid_change())
                .map(|w| match w.kind.side() {
                    Some(Side::Left) => 1,
                    _ => -1,
                })
                .sum();
            let first_side = g[0].kind.side().unwrap_or(Side::Left);
            let kind = match Side::of_delta(net) {
                Some(side) => ActivityKind::lane_change(side, true),
                None => ActivityKind::lane_change(first_side, false),
            };
            let end = g.iter().map(|x| x.interval.end).fold(T::neg_infinity(), T::max);
            ActivityInterval {
                actor: g[0].actor,
                kind,
                interval: Interval::new(g[0].interval.start, end),
            }
        })
        .collect()
}

/// Runs all detectors on one segment and assembles the abstract layer.
///
/// Non-ego activities are only registered while the ego keeps its lane:
/// object lane changes and observed spans are cut by ego lane-change
/// intervals before lane keeping is derived.
pub fn abstract_drive<T: Scalar>(
    log: &DriveLog<T>,
    roles: &RoleTimeline<T>,
    cfg: &AbstractionConfig<T>,
) -> Result<AbstractDrive<T>, AbstractionError> {
    let span = Interval::new(log.start_time(), log.end_time());
    let mode = cfg.mode.resolve(log);
    let cfg = AbstractionConfig { mode, ..*cfg };

    let ego_events = detect_ego_lane_change_events(log);
    let lead_events = detect_lead_change_events(roles);
    let mut conditions = evaluate_following(log, roles, &cfg);
    conditions.extend(evaluate_driving_parallel(log, roles, &cfg));

    let ego_changes = classify_ego_lane_changes(log, &ego_events, &cfg)?;
    let ego_busy: Vec<Interval<T>> = ego_changes.iter().map(|a| a.interval).collect();

    let mut per_actor: BTreeMap<TrackId, Vec<ActivityInterval<T>>> = BTreeMap::new();
    for w in classify_target_lane_changes(log, roles, &lead_events, &cfg) {
        if let Actor::Object(id) = w.actor {
            per_actor.entry(id).or_default().push(w);
        }
    }

    let mut activities = ego_changes.clone();
    activities.extend(derive_lane_keeping(&ego_changes, &[(Actor::Ego, span)]));

    for (id, id_runs) in track_runs(log) {
        let actor = Actor::Object(id);
        let gated_spans: Vec<(Actor, Interval<T>)> = id_runs
            .iter()
            .flat_map(|&r| interval::subtract(run_span(log, r), &ego_busy))
            .map(|iv| (actor, iv))
            .collect();
        let changes: Vec<ActivityInterval<T>> =
            merge_overlapping(per_actor.remove(&id).unwrap_or_default())
                .into_iter()
                .flat_map(|w| {
                    interval::subtract(w.interval, &ego_busy)
                        .into_iter()
                        .map(move |interval| ActivityInterval { interval, ..w })
                })
                .collect();
        activities.extend(derive_lane_keeping(&changes, &gated_spans));
        activities.extend(changes);
    }
    activities.sort_by(|a, b| {
        a.actor.cmp(&b.actor).then(
            a.interval
                .start
                .partial_cmp(&b.interval.start)
                .expect("finite"),
        )
    });

    let mut events = ego_events;
    events.extend(lead_events);
    events.extend(condition_events(&conditions));
    events.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .expect("finite")
            .then(a.kind.cmp(&b.kind))
            .then(a.actor.cmp(&b.actor))
    });

    Ok(AbstractDrive {
        events,
        conditions,
        activities,
        roles: role_intervals(log, roles),
        span,
        frame_times: log.times(),
        mode,
    })
}

fn role_intervals<T: Scalar>(log: &DriveLog<T>, roles: &RoleTimeline<T>) -> Vec<RoleInterval<T>> {
    let mut out = Vec::new();
    for role in Role::ALL {
        let mut open: Option<(TrackId, T)> = None;
        for (k, map) in roles.maps.iter().enumerate() {
            let now = map.get(role);
            if let Some((id, start)) = open {
                if now != Some(id) {
                    out.push(RoleInterval {
                        role,
                        track: id,
                        interval: Interval::new(start, log.frames[k].t),
                    });
                    open = None;
                }
            }
            if open.is_none() {
                open = now.map(|id| (id, log.frames[k].t));
            }
        }
        if let Some((id, start)) = open {
            out.push(RoleInterval {
                role,
                track: id,
                interval: Interval::new(start, log.end_time()),
            });
        }
    }
    out
}
