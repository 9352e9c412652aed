//! Synthetic highway drives with analytic ground truth.
//!
//! The ego starts centered in lane id 2 at `y = 0`. Each maneuver adds one
//! vehicle (track id `10 + index`) or, for `EgoLaneChange`, moves the ego.
//! Lateral moves follow the cubic ease `3s^2 - 2s^3`, so band exit and entry
//! times have closed forms.
//!
//! Spec format, one or more `drive` blocks:
//!
//! ```text
//! drive cut-in-01
//! duration 60
//! sample_period 0.04
//! lane_width 3.5
//! ego_speed 0:30 25:28
//! noise 0.02
//! seed 7
//! maneuver CutIn
//!   t_start 20
//!   origin left
//!   gap 25
//!   dv 1
//!   duration 4
//! ```

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::abstraction::{
    center_band_half_width, AbstractionConfig, ActivityInterval, ActivityKind, Actor,
    EventKind, LaneChangeMode,
};
use crate::field_data::{DriveLog, EgoState, Frame, LogMeta, ObjectState, TrackId};
use crate::interval::Interval;
use crate::num::Scalar;
use crate::ontology::builtin_cut_in;
use crate::roles::Side;

/// Objects are reported while `dx` is inside this range.
pub const SENSOR_DX_MIN: f64 = -50.0;
pub const SENSOR_DX_MAX: f64 = 150.0;
/// Ego lane id at `y = 0`.
pub const EGO_START_LANE: i32 = 2;
pub const FIRST_TRACK_ID: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManeuverKind {
    CutIn,
    CutThrough,
    InvalidCutIn,
    Overtake,
    LeadRangeExit,
    EgoLaneChange,
}

impl ManeuverKind {
    pub const ALL: [ManeuverKind; 6] = [
        ManeuverKind::CutIn,
        ManeuverKind::CutThrough,
        ManeuverKind::InvalidCutIn,
        ManeuverKind::Overtake,
        ManeuverKind::LeadRangeExit,
        ManeuverKind::EgoLaneChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManeuverKind::CutIn => "CutIn",
            ManeuverKind::CutThrough => "CutThrough",
            ManeuverKind::InvalidCutIn => "InvalidCutIn",
            ManeuverKind::Overtake => "Overtake",
            ManeuverKind::LeadRangeExit => "LeadRangeExit",
            ManeuverKind::EgoLaneChange => "EgoLaneChange",
        }
    }
}

impl FromStr for ManeuverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ManeuverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown maneuver {s:?}"))
    }
}

/// One maneuver. Fields a kind does not use are ignored.
///
/// `origin` is the side the vehicle starts on (for `EgoLaneChange`, the
/// direction of the ego's move). `gap` is `dx` at the first marking
/// crossing for lane-changing kinds, at `t_start` otherwise. `dv` is the
/// speed relative to the ego.
#[derive(Debug, Clone, PartialEq)]
pub struct ManeuverSpec<T> {
    pub kind: ManeuverKind,
    pub t_start: T,
    pub origin: Side,
    pub gap: T,
    pub dv: T,
    pub duration: T,
    /// Time spent in the ego lane (`CutThrough`) or at the peak (`InvalidCutIn`).
    pub hold: T,
    /// How far an `InvalidCutIn` reaches past the marking.
    pub overlap: T,
}

impl<T: Scalar> ManeuverSpec<T> {
    pub fn new(kind: ManeuverKind, t_start: T) -> Self {
        Self {
            kind,
            t_start,
            origin: Side::Left,
            gap: T::lit(30.0),
            dv: T::zero(),
            duration: T::lit(4.0),
            hold: T::zero(),
            overlap: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveSpec<T> {
    pub name: String,
    pub duration: T,
    pub sample_period: T,
    pub lane_width: T,
    /// Piecewise-constant ego speed as `(from_time, speed)`, sorted by time.
    pub ego_speed: Vec<(T, T)>,
    pub maneuvers: Vec<ManeuverSpec<T>>,
    /// Standard deviation of the lateral position jitter.
    pub noise: T,
    pub seed: u64,
}

impl<T: Scalar> DriveSpec<T> {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            duration: T::lit(60.0),
            sample_period: T::lit(0.04),
            lane_width: T::lit(3.5),
            ego_speed: vec![(T::zero(), T::lit(30.0))],
            maneuvers: Vec::new(),
            noise: T::zero(),
            seed: 0,
        }
    }

    pub fn speed_at(&self, t: T) -> T {
        self.ego_speed
            .iter()
            .take_while(|(from, _)| *from <= t)
            .last()
            .or(self.ego_speed.first())
            .map_or_else(T::zero, |&(_, v)| v)
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.sample_period)
            .round()
            .to_usize()
            .unwrap_or(0)
    }

    pub fn frame_time(&self, k: usize) -> T {
        T::from_usize(k).expect("frame index fits") * self.sample_period
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("drive {drive:?}: conflicting spec: {msg}")]
    SpecConflict { drive: String, msg: String },
}

/// A scenario the drive is known to contain.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthLabel<T> {
    pub scenario: String,
    pub target: Option<TrackId>,
    pub t_start: T,
    pub t_end: T,
}

/// A scenario that only the given lane-change mode can be expected to
/// report, because its inputs cannot tell it apart.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguousLabel<T> {
    pub label: TruthLabel<T>,
    pub mode: LaneChangeMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub drive: String,
    pub seed: u64,
    pub labels: Vec<TruthLabel<T>>,
    pub ambiguous: Vec<AmbiguousLabel<T>>,
    /// Noise-free lane-change intervals of the ego and every vehicle.
    pub activities: Vec<ActivityInterval<T>>,
    /// Noise-free instants at which the ego crosses a marking.
    pub ego_lane_changes: Vec<T>,
}

/// Cubic ease-in-out on `[0, 1]`.
pub fn ease<T: Scalar>(s: T) -> T {
    let s = s.max(T::zero()).min(T::one());
    s * s * (T::lit(3.0) - T::lit(2.0) * s)
}

/// Inverse of [`ease`] on `[0, 1]`.
pub fn ease_inverse<T: Scalar>(f: T) -> T {
    let f = f.max(T::zero()).min(T::one());
    T::lit(0.5) - ((T::one() - T::lit(2.0) * f).asin() / T::lit(3.0)).sin()
}

#[derive(Debug, Clone, Copy)]
struct Move<T> {
    t0: T,
    dur: T,
    dy: T,
}

impl<T: Scalar> Move<T> {
    fn offset(&self, t: T) -> T {
        self.dy * ease((t - self.t0) / self.dur)
    }

    /// Time at which the move has covered fraction `f`.
    fn time_at(&self, f: T) -> T {
        self.t0 + self.dur * ease_inverse(f)
    }
}

#[derive(Debug, Clone)]
struct Path<T> {
    y0: T,
    moves: Vec<Move<T>>,
}

impl<T: Scalar> Path<T> {
    fn y(&self, t: T) -> T {
        self.moves.iter().fold(self.y0, |y, m| y + m.offset(t))
    }
}

#[derive(Debug, Clone, Copy)]
enum Longitudinal<T> {
    /// `dx = gap + dv (t - t_ref)`.
    Linear { gap: T, dv: T, t_ref: T },
    /// Constant gap until `t_start`, then pulls away at `dv`.
    Exit { gap: T, dv: T, t_start: T },
}

impl<T: Scalar> Longitudinal<T> {
    fn dx(&self, t: T) -> T {
        match *self {
            Longitudinal::Linear { gap, dv, t_ref } => gap + dv * (t - t_ref),
            Longitudinal::Exit { gap, dv, t_start } => gap + dv * (t - t_start).max(T::zero()),
        }
    }

    fn dv(&self, t: T) -> T {
        match *self {
            Longitudinal::Linear { dv, .. } => dv,
            Longitudinal::Exit { dv, t_start, .. } => {
                if t < t_start {
                    T::zero()
                } else {
                    dv
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Vehicle<T> {
    id: TrackId,
    path: Path<T>,
    lon: Longitudinal<T>,
}

fn side_sign<T: Scalar>(side: Side) -> T {
    match side {
        Side::Left => T::one(),
        Side::Right => -T::one(),
    }
}

/// Noise-free world built from a spec.
struct World<'a, T> {
    spec: &'a DriveSpec<T>,
    ego: Path<T>,
    vehicles: Vec<(usize, Vehicle<T>)>,
}

impl<'a, T: Scalar> World<'a, T> {
    fn build(spec: &'a DriveSpec<T>) -> Self {
        let w = spec.lane_width;
        let mut ego = Path {
            y0: T::zero(),
            moves: Vec::new(),
        };
        let mut vehicles = Vec::new();
        for (i, m) in spec.maneuvers.iter().enumerate() {
            let s = side_sign::<T>(m.origin);
            let id = TrackId(FIRST_TRACK_ID + i as u64);
            let half = m.duration / T::lit(2.0);
            let (path, lon) = match m.kind {
                ManeuverKind::EgoLaneChange => {
                    ego.moves.push(Move {
                        t0: m.t_start,
                        dur: m.duration,
                        dy: s * w,
                    });
                    continue;
                }
                ManeuverKind::CutIn => (
                    Path {
                        y0: s * w,
                        moves: vec![Move {
                            t0: m.t_start,
                            dur: m.duration,
                            dy: -s * w,
                        }],
                    },
                    m.t_start + half,
                ),
                ManeuverKind::CutThrough => (
                    Path {
                        y0: s * w,
                        moves: vec![
                            Move {
                                t0: m.t_start,
                                dur: m.duration,
                                dy: -s * w,
                            },
                            Move {
                                t0: m.t_start + m.duration + m.hold,
                                dur: m.duration,
                                dy: -s * w,
                            },
                        ],
                    },
                    m.t_start + half,
                ),
                ManeuverKind::InvalidCutIn => {
                    let reach = w / T::lit(2.0) + m.overlap;
                    let first = Move {
                        t0: m.t_start,
                        dur: half,
                        dy: -s * reach,
                    };
                    let crossing = first.time_at(w / T::lit(2.0) / reach);
                    (
                        Path {
                            y0: s * w,
                            moves: vec![
                                first,
                                Move {
                                    t0: m.t_start + half + m.hold,
                                    dur: half,
                                    dy: s * reach,
                                },
                            ],
                        },
                        crossing,
                    )
                }
                ManeuverKind::Overtake => (
                    Path {
                        y0: s * w,
                        moves: Vec::new(),
                    },
                    m.t_start,
                ),
                ManeuverKind::LeadRangeExit => {
                    let path = Path {
                        y0: T::zero(),
                        moves: Vec::new(),
                    };
                    let lon = Longitudinal::Exit {
                        gap: m.gap,
                        dv: m.dv,
                        t_start: m.t_start,
                    };
                    vehicles.push((i, Vehicle { id, path, lon }));
                    continue;
                }
            };
            let lon = Longitudinal::Linear {
                gap: m.gap,
                dv: m.dv,
                t_ref: lon,
            };
            vehicles.push((i, Vehicle { id, path, lon }));
        }
        Self { spec, ego, vehicles }
    }

    fn lane(&self, y: T) -> i32 {
        (y / self.spec.lane_width).round().to_i32().unwrap_or(i32::MAX)
    }

    fn lane_offset(&self, v: &Vehicle<T>, t: T) -> i32 {
        self.lane(v.path.y(t)) - self.lane(self.ego.y(t))
    }

    fn ego_busy(&self) -> Vec<Interval<T>> {
        let band = center_band_half_width(self.spec.lane_width) / self.spec.lane_width;
        self.ego
            .moves
            .iter()
            .map(|m| Interval::new(m.time_at(band), m.time_at(T::one() - band)))
            .collect()
    }

    fn sensed(&self, v: &Vehicle<T>, t: T) -> bool {
        let dx = v.lon.dx(t);
        dx >= T::lit(SENSOR_DX_MIN) && dx <= T::lit(SENSOR_DX_MAX)
    }

    /// Rank of `v` among vehicles in its lane whose dx lies in `(lower, range]`.
    fn rank(&self, v: &Vehicle<T>, t: T, lower: T, range: T) -> Option<usize> {
        let in_window = |x: &Vehicle<T>| {
            let dx = x.lon.dx(t);
            self.sensed(x, t) && dx > lower && dx <= range
        };
        if !in_window(v) {
            return None;
        }
        let lane = self.lane_offset(v, t);
        let key = (v.lon.dx(t), v.id);
        Some(
            self.vehicles
                .iter()
                .map(|(_, x)| x)
                .filter(|x| x.id != v.id && in_window(x) && self.lane_offset(x, t) == lane)
                .filter(|x| (x.lon.dx(t), x.id) < key)
                .count(),
        )
    }

    fn parallel(&self, v: &Vehicle<T>, t: T, cfg: &AbstractionConfig<T>) -> bool {
        self.lane_offset(v, t).abs() == 1
            && self
                .rank(v, t, cfg.roles.dx_beside, cfg.roles.sensor_range)
                .is_some_and(|r| r < 2)
    }

    fn following(&self, v: &Vehicle<T>, t: T, cfg: &AbstractionConfig<T>) -> bool {
        let dx = v.lon.dx(t);
        self.lane_offset(v, t) == 0
            && self.rank(v, t, cfg.roles.dx_min_role, cfg.roles.sensor_range) == Some(0)
            && dx <= cfg.d_abs.max(cfg.tau_follow * self.spec.speed_at(t))
            && v.lon.dv(t).abs() <= cfg.dv_max
    }

    /// Frame times inside `[a, b]`.
    fn frames_in(&self, a: T, b: T) -> impl Iterator<Item = T> + '_ {
        (0..self.spec.frame_count())
            .map(|k| self.spec.frame_time(k))
            .filter(move |&t| t >= a && t <= b)
    }

    /// Start of the uninterrupted parallel run ending at the last frame
    /// before `t`, or `None` if the vehicle is not parallel there.
    fn approach_start(&self, v: &Vehicle<T>, t: T, cfg: &AbstractionConfig<T>) -> Option<T> {
        let n = self.spec.frame_count();
        let mut k = (0..n).rev().find(|&k| self.spec.frame_time(k) < t)?;
        if !self.parallel(v, self.spec.frame_time(k), cfg) {
            return None;
        }
        while k > 0 && self.parallel(v, self.spec.frame_time(k - 1), cfg) {
            k -= 1;
        }
        Some(self.spec.frame_time(k))
    }

    fn follows_over(&self, v: &Vehicle<T>, a: T, b: T, cfg: &AbstractionConfig<T>) -> bool {
        self.frames_in(a, b).all(|t| self.following(v, t, cfg))
    }

    fn sensed_over(&self, v: &Vehicle<T>, a: T, b: T) -> bool {
        self.frames_in(a, b).all(|t| self.sensed(v, t))
    }
}

fn conflict<T>(spec: &DriveSpec<T>, msg: impl Into<String>) -> SynthError {
    SynthError::SpecConflict {
        drive: spec.name.clone(),
        msg: msg.into(),
    }
}

fn check_spec<T: Scalar>(spec: &DriveSpec<T>) -> Result<(), SynthError> {
    if !(spec.duration > T::zero() && spec.sample_period > T::zero()) {
        return Err(conflict(spec, "duration and sample_period must be positive"));
    }
    if spec.lane_width <= T::zero() {
        return Err(conflict(spec, "lane_width must be positive"));
    }
    if spec.noise < T::zero() {
        return Err(conflict(spec, "noise must be non-negative"));
    }
    if spec.ego_speed.is_empty() || spec.ego_speed.iter().any(|(_, v)| *v < T::zero()) {
        return Err(conflict(spec, "ego_speed needs non-negative entries"));
    }
    if spec.ego_speed.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(conflict(spec, "ego_speed times must increase"));
    }
    let max_overlap = spec.lane_width * T::lit(crate::abstraction::MARKING_CLEARANCE_RATIO);
    for m in &spec.maneuvers {
        if m.duration <= T::zero() || m.hold < T::zero() {
            return Err(conflict(spec, format!("{}: bad duration or hold", m.kind.name())));
        }
        if m.kind == ManeuverKind::InvalidCutIn && !(m.overlap > T::zero() && m.overlap < max_overlap) {
            return Err(conflict(
                spec,
                "InvalidCutIn overlap must be positive and below the marking clearance",
            ));
        }
    }
    let mut ego: Vec<&ManeuverSpec<T>> = spec
        .maneuvers
        .iter()
        .filter(|m| m.kind == ManeuverKind::EgoLaneChange)
        .collect();
    ego.sort_by(|a, b| a.t_start.partial_cmp(&b.t_start).expect("finite"));
    if ego
        .windows(2)
        .any(|w| w[1].t_start < w[0].t_start + w[0].duration)
    {
        return Err(conflict(spec, "overlapping EgoLaneChange maneuvers"));
    }
    Ok(())
}

/// Renders the drive as a log and derives its ground truth.
pub fn generate_drive<T: Scalar>(spec: &DriveSpec<T>) -> Result<(DriveLog<T>, GroundTruth<T>), SynthError> {
    check_spec(spec)?;
    let world = World::build(spec);
    let log = render(&world);
    let truth = ground_truth(&world);
    Ok((log, truth))
}

fn render<T: Scalar>(world: &World<'_, T>) -> DriveLog<T> {
    let spec = world.spec;
    let w = spec.lane_width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise.as_f64()).expect("checked noise");
    let mut jitter = || {
        if spec.noise > T::zero() {
            T::lit(normal.sample(&mut rng))
        } else {
            T::zero()
        }
    };
    let frames = (0..spec.frame_count())
        .map(|k| {
            let t = spec.frame_time(k);
            let y_e = world.ego.y(t) + jitter();
            let ego_lane = world.lane(y_e);
            let ego = EgoState {
                speed: spec.speed_at(t),
                lane_id: EGO_START_LANE + ego_lane,
                lateral_offset_in_lane: Some(y_e - T::from_i32(ego_lane).expect("small") * w),
                lane_width: w,
            };
            let mut objects = Vec::new();
            for (_, v) in &world.vehicles {
                // draw for every vehicle so the noise stream does not depend on visibility
                let y_o = v.path.y(t) + jitter();
                if !world.sensed(v, t) {
                    continue;
                }
                let lane = world.lane(y_o);
                objects.push(ObjectState {
                    track_id: v.id,
                    dx: v.lon.dx(t),
                    dy: y_o - y_e,
                    dv: v.lon.dv(t),
                    lane_offset: Some(lane - ego_lane),
                    lateral_offset_in_lane: Some(y_o - T::from_i32(lane).expect("small") * w),
                });
            }
            Frame { t, ego, objects }
        })
        .collect();
    DriveLog {
        frames,
        sample_period: spec.sample_period,
        meta: LogMeta {
            source: spec.name.clone(),
            ..LogMeta::default()
        },
    }
}

fn ground_truth<T: Scalar>(world: &World<'_, T>) -> GroundTruth<T> {
    let spec = world.spec;
    let w = spec.lane_width;
    let cfg = AbstractionConfig::<T>::default();
    let cut_in = builtin_cut_in::<T>();
    let approach_max = cut_in.acts[0].max_duration.expect("built-in approach has a max");
    let follow_min = cut_in.acts[2].min_duration;
    let band = center_band_half_width(w);
    let ego_busy = world.ego_busy();
    let clear_of_ego = |a: T, b: T| {
        let iv = Interval::new(a, b);
        !ego_busy.iter().any(|e| e.overlaps(&iv))
    };

    let mut truth = GroundTruth {
        drive: spec.name.clone(),
        seed: spec.seed,
        labels: Vec::new(),
        ambiguous: Vec::new(),
        activities: Vec::new(),
        ego_lane_changes: world.ego.moves.iter().map(|m| m.time_at(T::lit(0.5))).collect(),
    };
    for (m, iv) in world.ego.moves.iter().zip(&ego_busy) {
        let side = if m.dy > T::zero() { Side::Left } else { Side::Right };
        truth.activities.push(ActivityInterval {
            actor: Actor::Ego,
            kind: ActivityKind::lane_change(side, true),
            interval: *iv,
        });
    }

    let label = |truth: &mut GroundTruth<T>, scenario: &str, v: &Vehicle<T>, a: T, b: T| {
        truth.labels.push(TruthLabel {
            scenario: scenario.to_string(),
            target: Some(v.id),
            t_start: a,
            t_end: b,
        })
    };

    for (i, v) in &world.vehicles {
        let m = &spec.maneuvers[*i];
        let actor = Actor::Object(v.id);
        let toward = m.origin.opposite();
        match m.kind {
            ManeuverKind::CutIn | ManeuverKind::CutThrough => {
                let band_frac = band / w;
                let changes: Vec<Interval<T>> = v
                    .path
                    .moves
                    .iter()
                    .map(|mv| Interval::new(mv.time_at(band_frac), mv.time_at(T::one() - band_frac)))
                    .collect();
                for iv in &changes {
                    truth.activities.push(ActivityInterval {
                        actor,
                        kind: ActivityKind::lane_change(toward, true),
                        interval: *iv,
                    });
                }
                let enter = changes[0];
                let Some(t0) = world.approach_start(v, enter.start, &cfg) else {
                    continue;
                };
                let start = t0.max(enter.start - approach_max);
                let cut_in_end = enter.end + follow_min;
                let keeps_lane = changes.get(1).map_or(true, |exit| exit.start > cut_in_end);
                if keeps_lane
                    && world.follows_over(v, enter.end, cut_in_end, &cfg)
                    && clear_of_ego(start, cut_in_end)
                {
                    label(&mut truth, "cut-in", v, start, cut_in_end);
                }
                if let Some(exit) = changes.get(1) {
                    let end = exit.end + follow_min;
                    if world.sensed_over(v, start, end) && clear_of_ego(start, end) {
                        label(&mut truth, "cut-through", v, start, end);
                    }
                }
            }
            ManeuverKind::InvalidCutIn => {
                let reach = w / T::lit(2.0) + m.overlap;
                let (out, back) = (v.path.moves[0], v.path.moves[1]);
                let exit_frac = band / reach;
                truth.activities.push(ActivityInterval {
                    actor,
                    kind: ActivityKind::lane_change(toward, false),
                    interval: Interval::new(out.time_at(exit_frac), back.time_at(T::one() - exit_frac)),
                });
                // lead-change windows around the two marking crossings stay
                // apart long enough for a follow phase in between
                let cross_frac = w / T::lit(2.0) / reach;
                let t_in = out.time_at(cross_frac);
                let t_out = back.time_at(T::one() - cross_frac);
                let follow_from = t_in + cfg.t_post;
                let follow_to = follow_from + follow_min;
                if t_out - cfg.t_pre < follow_to {
                    continue;
                }
                let Some(t0) = world.approach_start(v, t_in - cfg.t_pre, &cfg) else {
                    continue;
                };
                let start = t0.max(t_in - cfg.t_pre - approach_max);
                if world.follows_over(v, follow_from, follow_to, &cfg) && clear_of_ego(start, follow_to) {
                    truth.ambiguous.push(AmbiguousLabel {
                        label: TruthLabel {
                            scenario: "cut-in".to_string(),
                            target: Some(v.id),
                            t_start: start,
                            t_end: follow_to,
                        },
                        mode: LaneChangeMode::Simplified,
                    });
                }
            }
            ManeuverKind::Overtake | ManeuverKind::LeadRangeExit | ManeuverKind::EgoLaneChange => {}
        }
    }
    let by_time = |a: &T, b: &T| a.partial_cmp(b).expect("finite");
    truth
        .labels
        .sort_by(|a, b| by_time(&a.t_start, &b.t_start).then_with(|| a.scenario.cmp(&b.scenario)));
    truth.activities.sort_by(|a, b| {
        a.actor
            .cmp(&b.actor)
            .then_with(|| by_time(&a.interval.start, &b.interval.start))
    });
    truth
}

/// Drive families of [`corpus`], cycled by index.
pub const CORPUS_FAMILIES: [&str; 10] = [
    "cut-in",
    "cut-through",
    "invalid-short",
    "overtake",
    "lead-exit",
    "ego-change",
    "double-cut-in",
    "mixed",
    "invalid-long",
    "cut-in-then-ego-change",
];

/// A reproducible mix of 60 s drives at 25 Hz covering every maneuver kind.
///
/// Parameters are drawn away from detection thresholds so the analytic
/// labels are unambiguous: cut-through vehicles are too fast to be
/// followed but leave the ego lane well inside role range, invalid cut-ins either linger briefly or for several seconds,
/// and ego lane changes stay clear of cut-ins.
pub fn corpus<T: Scalar>(count: usize, seed: u64) -> Vec<DriveSpec<T>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let family = CORPUS_FAMILIES[i % CORPUS_FAMILIES.len()];
            let mut spec = DriveSpec::new(&format!("corpus-{i:04}-{family}"));
            spec.noise = T::lit(0.02);
            spec.seed = rng.gen();
            spec.lane_width = T::lit([3.0, 3.5, 3.75][rng.gen_range(0..3)]);
            let v0 = rng.gen_range(25.0..33.0);
            spec.ego_speed = vec![(T::zero(), T::lit(v0))];
            if rng.gen_bool(0.5) {
                spec.ego_speed.push((T::lit(30.0), T::lit(rng.gen_range(25.0..33.0))));
            }
            let side = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Side::Left } else { Side::Right };
            let push = |spec: &mut DriveSpec<T>, kind, t: f64, origin, gap: f64, dv: f64, dur: f64| {
                let mut m = ManeuverSpec::new(kind, T::lit(t));
                m.origin = origin;
                m.gap = T::lit(gap);
                m.dv = T::lit(dv);
                m.duration = T::lit(dur);
                spec.maneuvers.push(m);
            };
            match family {
                "cut-in" => {
                    let o = side(&mut rng);
                    let (t, gap, dv, dur) = (
                        rng.gen_range(12.0..45.0),
                        rng.gen_range(12.0..40.0),
                        rng.gen_range(0.0..2.0),
                        rng.gen_range(3.0..6.0),
                    );
                    push(&mut spec, ManeuverKind::CutIn, t, o, gap, dv, dur);
                }
                "cut-through" => {
                    let o = side(&mut rng);
                    let (t, gap, dv, dur) = (
                        rng.gen_range(12.0..35.0),
                        rng.gen_range(10.0..20.0),
                        rng.gen_range(6.0..7.0),
                        rng.gen_range(3.0..3.5),
                    );
                    push(&mut spec, ManeuverKind::CutThrough, t, o, gap, dv, dur);
                    spec.maneuvers[0].hold = T::lit(rng.gen_range(2.5..3.0));
                }
                "invalid-short" | "invalid-long" => {
                    let o = side(&mut rng);
                    let long = family == "invalid-long";
                    let (t, gap, dv) = (
                        rng.gen_range(12.0..40.0),
                        rng.gen_range(15.0..35.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let dur = if long { rng.gen_range(3.0..5.0) } else { rng.gen_range(2.5..3.5) };
                    push(&mut spec, ManeuverKind::InvalidCutIn, t, o, gap, dv, dur);
                    let m = &mut spec.maneuvers[0];
                    m.hold = T::lit(if long { rng.gen_range(4.5..7.0) } else { rng.gen_range(0.0..0.3) });
                    m.overlap = T::lit(rng.gen_range(0.3..0.8));
                }
                "overtake" => {
                    let o = side(&mut rng);
                    let (gap, dv) = (rng.gen_range(-40.0..-20.0), rng.gen_range(2.0..5.0));
                    push(&mut spec, ManeuverKind::Overtake, 0.0, o, gap, dv, 1.0);
                }
                "lead-exit" => {
                    let (t, gap, dv) = (
                        rng.gen_range(5.0..30.0),
                        rng.gen_range(30.0..60.0),
                        rng.gen_range(3.0..6.0),
                    );
                    push(&mut spec, ManeuverKind::LeadRangeExit, t, Side::Left, gap, dv, 1.0);
                }
                "ego-change" => {
                    let o = side(&mut rng);
                    let (t, dur, gap) = (
                        rng.gen_range(15.0..40.0),
                        rng.gen_range(3.0..6.0),
                        rng.gen_range(15.0..40.0),
                    );
                    push(&mut spec, ManeuverKind::EgoLaneChange, t, o, 0.0, 0.0, dur);
                    push(&mut spec, ManeuverKind::Overtake, 0.0, o, gap, 0.0, 1.0);
                }
                "double-cut-in" => {
                    let (t, dur) = (rng.gen_range(15.0..35.0), rng.gen_range(3.0..4.5));
                    let (dv1, dv2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    push(&mut spec, ManeuverKind::CutIn, t, Side::Left, 40.0, dv1, dur);
                    push(&mut spec, ManeuverKind::CutIn, t + 3.0, Side::Right, 20.0, dv2, dur);
                }
                "mixed" => {
                    let o = side(&mut rng);
                    let (t_lead, t, gap, dv, dur) = (
                        rng.gen_range(2.0..5.0),
                        rng.gen_range(12.0..18.0),
                        rng.gen_range(12.0..35.0),
                        rng.gen_range(0.0..2.0),
                        rng.gen_range(3.0..6.0),
                    );
                    push(&mut spec, ManeuverKind::LeadRangeExit, t_lead, Side::Left, 55.0, 5.0, 1.0);
                    push(&mut spec, ManeuverKind::CutIn, t, o, gap, dv, dur);
                    let (ogap, odv) = (rng.gen_range(-40.0..-20.0), rng.gen_range(2.0..5.0));
                    push(&mut spec, ManeuverKind::Overtake, 0.0, o.opposite(), ogap, odv, 1.0);
                }
                _ => {
                    let o = side(&mut rng);
                    let (t, gap, dv, dur) = (
                        rng.gen_range(10.0..15.0),
                        rng.gen_range(12.0..30.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(3.0..5.0),
                    );
                    push(&mut spec, ManeuverKind::CutIn, t, o, gap, dv, dur);
                    let (te, de) = (rng.gen_range(40.0..50.0), rng.gen_range(3.0..6.0));
                    push(&mut spec, ManeuverKind::EgoLaneChange, te, side(&mut rng), 0.0, 0.0, de);
                }
            }
            spec
        })
        .collect()
}

/// Copy of `log` without per-object in-lane offsets, as delivered by
/// sensors that only assign lanes.
pub fn strip_precision<T: Scalar>(log: &DriveLog<T>) -> DriveLog<T> {
    let mut out = log.clone();
    for o in out.frames.iter_mut().flat_map(|f| f.objects.iter_mut()) {
        o.lateral_offset_in_lane = None;
    }
    out
}

fn syntax(line: usize, msg: impl Into<String>) -> SynthError {
    SynthError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn num<T: Scalar>(line: usize, s: &str) -> Result<T, SynthError> {
    s.parse::<T>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, format!("not a number: {s:?}")))
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Left => "left",
        Side::Right => "right",
    }
}

/// Parses every `drive` block in `text`. Specs are checked for conflicts.
pub fn parse_drive_specs<T: Scalar>(text: &str) -> Result<Vec<DriveSpec<T>>, SynthError> {
    let mut specs: Vec<DriveSpec<T>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, rest) = trimmed
            .split_once(char::is_whitespace)
            .map_or((trimmed, ""), |(k, r)| (k, r.trim()));
        if key == "drive" {
            if rest.is_empty() || rest.contains(char::is_whitespace) {
                return Err(syntax(line, "expected: drive <name>"));
            }
            specs.push(DriveSpec::new(rest));
            continue;
        }
        let spec = specs
            .last_mut()
            .ok_or_else(|| syntax(line, format!("{key:?} outside a drive block")))?;
        if key == "maneuver" {
            let kind = rest.parse().map_err(|e: String| syntax(line, e))?;
            spec.maneuvers.push(ManeuverSpec::new(kind, T::zero()));
            continue;
        }
        if rest.is_empty() {
            return Err(syntax(line, format!("{key}: missing value")));
        }
        if let Some(m) = spec.maneuvers.last_mut() {
            let handled = match key {
                "t_start" => Some(m.t_start = num(line, rest)?),
                "origin" => Some(
                    m.origin = match rest {
                        "left" => Side::Left,
                        "right" => Side::Right,
                        other => return Err(syntax(line, format!("bad origin {other:?}"))),
                    },
                ),
                "gap" => Some(m.gap = num(line, rest)?),
                "dv" => Some(m.dv = num(line, rest)?),
                "duration" => Some(m.duration = num(line, rest)?),
                "hold" => Some(m.hold = num(line, rest)?),
                "overlap" => Some(m.overlap = num(line, rest)?),
                _ => None,
            };
            if handled.is_some() {
                continue;
            }
            return Err(syntax(line, format!("unknown maneuver key {key:?}")));
        }
        match key {
            "duration" => spec.duration = num(line, rest)?,
            "sample_period" => spec.sample_period = num(line, rest)?,
            "lane_width" => spec.lane_width = num(line, rest)?,
            "noise" => spec.noise = num(line, rest)?,
            "seed" => {
                spec.seed = rest
                    .parse()
                    .map_err(|_| syntax(line, format!("bad seed {rest:?}")))?
            }
            "ego_speed" => {
                spec.ego_speed = rest
                    .split_whitespace()
                    .map(|pair| {
                        let (t, v) = pair
                            .split_once(':')
                            .ok_or_else(|| syntax(line, format!("expected t:v, got {pair:?}")))?;
                        Ok((num(line, t)?, num(line, v)?))
                    })
                    .collect::<Result<_, SynthError>>()?
            }
            other => return Err(syntax(line, format!("unknown drive key {other:?}"))),
        }
    }
    for spec in &specs {
        check_spec(spec)?;
    }
    Ok(specs)
}

impl<T: Scalar> fmt::Display for DriveSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "drive {}", self.name)?;
        writeln!(f, "duration {}", self.duration)?;
        writeln!(f, "sample_period {}", self.sample_period)?;
        writeln!(f, "lane_width {}", self.lane_width)?;
        let speeds: Vec<String> = self.ego_speed.iter().map(|(t, v)| format!("{t}:{v}")).collect();
        writeln!(f, "ego_speed {}", speeds.join(" "))?;
        writeln!(f, "noise {}", self.noise)?;
        writeln!(f, "seed {}", self.seed)?;
        for m in &self.maneuvers {
            writeln!(f, "maneuver {}", m.kind.name())?;
            writeln!(f, "  t_start {}", m.t_start)?;
            writeln!(f, "  origin {}", side_name(m.origin))?;
            writeln!(f, "  gap {}", m.gap)?;
            writeln!(f, "  dv {}", m.dv)?;
            writeln!(f, "  duration {}", m.duration)?;
            writeln!(f, "  hold {}", m.hold)?;
            writeln!(f, "  overlap {}", m.overlap)?;
        }
        Ok(())
    }
}

fn target_str(target: Option<TrackId>) -> String {
    target.map_or_else(|| "-".to_string(), |id| id.to_string())
}

fn write_label<T: Scalar>(f: &mut fmt::Formatter<'_>, l: &TruthLabel<T>) -> fmt::Result {
    write!(
        f,
        "scenario={} target={} t_start={:.3} t_end={:.3}",
        l.scenario,
        target_str(l.target),
        l.t_start.as_f64(),
        l.t_end.as_f64()
    )
}

impl<T: Scalar> fmt::Display for GroundTruth<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# synth drive={} seed={}", self.drive, self.seed)?;
        for l in &self.labels {
            f.write_str("label ")?;
            write_label(f, l)?;
            writeln!(f)?;
        }
        for a in &self.ambiguous {
            f.write_str("ambiguous ")?;
            write_label(f, &a.label)?;
            writeln!(f, " mode={}", a.mode.name())?;
        }
        for a in &self.activities {
            writeln!(
                f,
                "activity actor={} kind={} t_start={:.3} t_end={:.3}",
                a.actor,
                a.kind,
                a.interval.start.as_f64(),
                a.interval.end.as_f64()
            )?;
        }
        for t in &self.ego_lane_changes {
            writeln!(f, "event kind={} t={:.3}", EventKind::EgoLaneChange, t.as_f64())?;
        }
        Ok(())
    }
}

fn fields(line: usize, tokens: &[&str]) -> Result<std::collections::BTreeMap<String, String>, SynthError> {
    tokens
        .iter()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| syntax(line, format!("expected key=value, got {tok:?}")))
        })
        .collect()
}

fn field<'m>(
    line: usize,
    map: &'m std::collections::BTreeMap<String, String>,
    key: &str,
) -> Result<&'m str, SynthError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| syntax(line, format!("missing {key}=")))
}

fn parse_label<T: Scalar>(
    line: usize,
    map: &std::collections::BTreeMap<String, String>,
) -> Result<TruthLabel<T>, SynthError> {
    let target = match field(line, map, "target")? {
        "-" => None,
        s => Some(s.parse().map_err(|_| syntax(line, format!("bad target {s:?}")))?),
    };
    Ok(TruthLabel {
        scenario: field(line, map, "scenario")?.to_string(),
        target,
        t_start: num(line, field(line, map, "t_start")?)?,
        t_end: num(line, field(line, map, "t_end")?)?,
    })
}

/// Parses a ground-truth file written by the [`GroundTruth`] `Display` impl.
pub fn parse_ground_truth<T: Scalar>(text: &str) -> Result<GroundTruth<T>, SynthError> {
    let mut truth = GroundTruth {
        drive: String::new(),
        seed: 0,
        labels: Vec::new(),
        ambiguous: Vec::new(),
        activities: Vec::new(),
        ego_lane_changes: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some((&kind, rest)) = tokens.split_first() else {
            continue;
        };
        if kind == "#" {
            if rest.first() == Some(&"synth") {
                let map = fields(line, &rest[1..])?;
                truth.drive = field(line, &map, "drive")?.to_string();
                truth.seed = field(line, &map, "seed")?
                    .parse()
                    .map_err(|_| syntax(line, "bad seed"))?;
            }
            continue;
        }
        if kind.starts_with('#') {
            continue;
        }
        let map = fields(line, rest)?;
        match kind {
            "label" => truth.labels.push(parse_label(line, &map)?),
            "ambiguous" => truth.ambiguous.push(AmbiguousLabel {
                label: parse_label(line, &map)?,
                mode: field(line, &map, "mode")?
                    .parse()
                    .map_err(|e: String| syntax(line, e))?,
            }),
            "activity" => truth.activities.push(ActivityInterval {
                actor: field(line, &map, "actor")?
                    .parse()
                    .map_err(|_| syntax(line, "bad actor"))?,
                kind: field(line, &map, "kind")?
                    .parse()
                    .map_err(|_| syntax(line, "bad activity kind"))?,
                interval: Interval::new(
                    num(line, field(line, &map, "t_start")?)?,
                    num(line, field(line, &map, "t_end")?)?,
                ),
            }),
            "event" => truth.ego_lane_changes.push(num(line, field(line, &map, "t")?)?),
            other => return Err(syntax(line, format!("unknown record {other:?}"))),
        }
    }
    Ok(truth)
}
