//! Relative-position roles of tracked objects around the ego vehicle.
//!
//! "First" is the nearest object ahead in a lane, "Second" the one in front
//! of it. Adjacent-lane windows reach slightly behind the ego so vehicles
//! alongside qualify.

use std::fmt;
use std::str::FromStr;

use crate::field_data::{DriveLog, Frame, TrackId};
use crate::num::Scalar;

/// Lateral side relative to the ego vehicle; also used as lane-change direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Side of a nonzero lateral delta (positive = left).
    pub fn of_delta(delta: i32) -> Option<Self> {
        match delta.signum() {
            1 => Some(Side::Left),
            -1 => Some(Side::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    FirstEgo,
    SecondEgo,
    FirstLeft,
    SecondLeft,
    FirstRight,
    SecondRight,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::FirstEgo,
        Role::SecondEgo,
        Role::FirstLeft,
        Role::SecondLeft,
        Role::FirstRight,
        Role::SecondRight,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Lane offset an object must have to carry this role.
    pub fn lane_offset(self) -> i32 {
        match self {
            Role::FirstEgo | Role::SecondEgo => 0,
            Role::FirstLeft | Role::SecondLeft => 1,
            Role::FirstRight | Role::SecondRight => -1,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self.lane_offset() {
            1 => Some(Side::Left),
            -1 => Some(Side::Right),
            _ => None,
        }
    }

    pub fn is_adjacent(self) -> bool {
        self.side().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::FirstEgo => "FirstEgo",
            Role::SecondEgo => "SecondEgo",
            Role::FirstLeft => "FirstLeft",
            Role::SecondLeft => "SecondLeft",
            Role::FirstRight => "FirstRight",
            Role::SecondRight => "SecondRight",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleConfig<T> {
    /// Objects farther ahead than this get no role.
    pub sensor_range: T,
    /// Lower dx bound (exclusive, usually negative) for adjacent-lane roles.
    pub dx_beside: T,
    /// Lower dx bound (exclusive) for ego-lane roles.
    pub dx_min_role: T,
}

impl<T: Scalar> Default for RoleConfig<T> {
    fn default() -> Self {
        Self {
            sensor_range: T::lit(80.0),
            dx_beside: T::lit(-5.0),
            dx_min_role: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleMap<T> {
    pub t: T,
    bindings: [Option<TrackId>; 6],
}

impl<T: Scalar> RoleMap<T> {
    pub fn empty(t: T) -> Self {
        Self {
            t,
            bindings: [None; 6],
        }
    }

    pub fn get(&self, role: Role) -> Option<TrackId> {
        self.bindings[role.index()]
    }

    pub fn role_of(&self, id: TrackId) -> Option<Role> {
        Role::ALL.into_iter().find(|r| self.get(*r) == Some(id))
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.iter().all(Option::is_none)
    }

    /// Bound roles in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (Role, TrackId)> + '_ {
        Role::ALL
            .into_iter()
            .filter_map(move |r| self.get(r).map(|id| (r, id)))
    }
}

/// Assigns the six roles for one frame.
///
/// Candidates per lane are sorted by `(dx, track_id)`; the first two inside
/// the lane's dx window become First and Second.
pub fn assign_roles<T: Scalar>(frame: &Frame<T>, cfg: &RoleConfig<T>) -> RoleMap<T> {
    let mut map = RoleMap::empty(frame.t);
    let lanes = [
        (0, Role::FirstEgo, Role::SecondEgo, cfg.dx_min_role),
        (1, Role::FirstLeft, Role::SecondLeft, cfg.dx_beside),
        (-1, Role::FirstRight, Role::SecondRight, cfg.dx_beside),
    ];
    for (lane, first, second, lower) in lanes {
        let mut candidates: Vec<(T, TrackId)> = frame
            .objects
            .iter()
            .filter(|o| o.resolved_lane_offset(&frame.ego) == lane)
            .filter(|o| o.dx > lower && o.dx <= cfg.sensor_range)
            .map(|o| (o.dx, o.track_id))
            .collect();
        candidates.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite dx")
                .then(a.1.cmp(&b.1))
        });
        map.bindings[first.index()] = candidates.first().map(|c| c.1);
        map.bindings[second.index()] = candidates.get(1).map(|c| c.1);
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleTimeline<T> {
    pub maps: Vec<RoleMap<T>>,
}

impl<T> RoleTimeline<T> {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

pub fn build_role_timeline<T: Scalar>(log: &DriveLog<T>, cfg: &RoleConfig<T>) -> RoleTimeline<T> {
    RoleTimeline {
        maps: log.frames.iter().map(|f| assign_roles(f, cfg)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_data::{EgoState, ObjectState};

    fn frame(objs: &[(u64, f64, i32)]) -> Frame<f64> {
        Frame {
            t: 0.0,
            ego: EgoState {
                speed: 30.0,
                lane_id: 2,
                lateral_offset_in_lane: Some(0.0),
                lane_width: 3.5,
            },
            objects: objs
                .iter()
                .map(|&(id, dx, lane)| ObjectState {
                    track_id: TrackId(id),
                    dx,
                    dy: lane as f64 * 3.5,
                    dv: 0.0,
                    lane_offset: Some(lane),
                    lateral_offset_in_lane: None,
                })
                .collect(),
        }
    }

    #[test]
    fn same_lane_first_and_second() {
        let m = assign_roles(&frame(&[(2, 45.0, 0), (1, 20.0, 0)]), &RoleConfig::default());
        assert_eq!(m.get(Role::FirstEgo), Some(TrackId(1)));
        assert_eq!(m.get(Role::SecondEgo), Some(TrackId(2)));
    }

    #[test]
    fn no_objects_no_roles() {
        assert!(assign_roles(&frame(&[]), &RoleConfig::default()).is_empty());
    }

    #[test]
    fn left_window_and_range() {
        let cfg = RoleConfig {
            sensor_range: 50.0,
            dx_beside: -5.0,
            dx_min_role: 0.0,
        };
        let m = assign_roles(&frame(&[(1, -2.0, 1), (2, 15.0, 1), (3, 60.0, 1)]), &cfg);
        // reference: sort by dx, keep window (-5, 50], take first two
        let mut oracle: Vec<(f64, u64)> = vec![(-2.0, 1), (15.0, 2), (60.0, 3)]
            .into_iter()
            .filter(|(dx, _)| *dx > -5.0 && *dx <= 50.0)
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(m.get(Role::FirstLeft), Some(TrackId(oracle[0].1)));
        assert_eq!(m.get(Role::SecondLeft), Some(TrackId(oracle[1].1)));
        assert_eq!(m.role_of(TrackId(3)), None);
    }

    #[test]
    fn behind_ego_in_own_lane_is_not_leader() {
        let m = assign_roles(&frame(&[(1, -2.0, 0)]), &RoleConfig::default());
        assert!(m.is_empty());
    }

    #[test]
    fn far_lanes_get_no_role() {
        let m = assign_roles(&frame(&[(1, 10.0, 2), (2, 10.0, -2)]), &RoleConfig::default());
        assert!(m.is_empty());
    }

    #[test]
    fn ties_broken_by_track_id() {
        let m = assign_roles(&frame(&[(9, 10.0, -1), (4, 10.0, -1)]), &RoleConfig::default());
        assert_eq!(m.get(Role::FirstRight), Some(TrackId(4)));
        assert_eq!(m.get(Role::SecondRight), Some(TrackId(9)));
    }

    #[test]
    fn inferred_lane_offset_used_when_absent() {
        let mut f = frame(&[(1, 10.0, 1)]);
        f.objects[0].lane_offset = None;
        let m = assign_roles(&f, &RoleConfig::default());
        assert_eq!(m.get(Role::FirstLeft), Some(TrackId(1)));
    }

    #[test]
    fn overtaking_switches_first_left() {
        // object 1 fixed at 10 m, object 2 approaches from -4 m to 20 m
        let times: Vec<f64> = (0..25).map(|k| k as f64).collect();
        let frames: Vec<Frame<f64>> = times
            .iter()
            .map(|&t| {
                let mut f = frame(&[(1, 10.0, 1), (2, -4.0 + t, 1)]);
                f.t = t;
                f
            })
            .collect();
        let log = DriveLog {
            frames,
            sample_period: 1.0,
            meta: Default::default(),
        };
        let tl = build_role_timeline(&log, &RoleConfig::default());
        assert_eq!(tl.len(), 25);
        // reference scan: object 2 is FirstLeft once its dx is strictly smaller
        // (or equal with smaller id, which it is not)
        for (k, m) in tl.maps.iter().enumerate() {
            let dx2 = -4.0 + k as f64;
            let expect = if dx2 < 10.0 { TrackId(2) } else { TrackId(1) };
            assert_eq!(m.get(Role::FirstLeft), Some(expect), "frame {k}");
        }
    }
}
