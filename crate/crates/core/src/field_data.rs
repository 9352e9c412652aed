//! Drive-log data model and the line-oriented log format.
//!
//! One frame per line:
//!
//! ```text
//! t=<float> ego=<speed>,<lane_id>,<lat_offset>,<lane_width> obj=<id>,<dx>,<dy>,<dv>[,<lane_offset>[,<lat_in_lane>]] obj=...
//! ```
//!
//! Optional object fields may be omitted from the right; `-` marks an absent
//! optional value in the middle of a token (and an absent ego in-lane offset).
//! Lines starting with `#` are comments. All quantities are SI.
//!
//! Lateral conventions: `dy`, `lateral_offset_in_lane` and `lane_offset` are
//! positive to the left. Lane ids increase to the left.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::num::{median, Scalar};

/// Default maximum inter-frame gap before a log is split into segments.
pub const DEFAULT_GAP_TOLERANCE_S: f64 = 0.5;

/// Sensor track identifier, stable while the object is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for TrackId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(TrackId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState<T> {
    pub speed: T,
    pub lane_id: i32,
    /// Signed distance of the vehicle center from the lane center, positive
    /// toward the left marking. `None` when lane detection dropped out.
    pub lateral_offset_in_lane: Option<T>,
    pub lane_width: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState<T> {
    pub track_id: TrackId,
    pub dx: T,
    pub dy: T,
    pub dv: T,
    /// Object lane relative to the ego lane: +1 left adjacent, -1 right.
    pub lane_offset: Option<i32>,
    pub lateral_offset_in_lane: Option<T>,
}

impl<T: Scalar> ObjectState<T> {
    /// The reported lane offset, or the one inferred from `dy` when absent.
    pub fn resolved_lane_offset(&self, ego: &EgoState<T>) -> i32 {
        self.lane_offset
            .unwrap_or_else(|| infer_lane_offset(self, ego))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub t: T,
    pub ego: EgoState<T>,
    pub objects: Vec<ObjectState<T>>,
}

impl<T> Frame<T> {
    pub fn object(&self, id: TrackId) -> Option<&ObjectState<T>> {
        self.objects.iter().find(|o| o.track_id == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogMeta {
    pub source: String,
    /// Index of this segment after [`normalize_timeline`].
    pub segment: usize,
    /// Number of gaps that were split in the originating log.
    pub gaps_split: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveLog<T> {
    pub frames: Vec<Frame<T>>,
    /// Nominal sample period (median inter-frame gap), zero for a single frame.
    pub sample_period: T,
    pub meta: LogMeta,
}

impl<T: Scalar> DriveLog<T> {
    pub fn times(&self) -> Vec<T> {
        self.frames.iter().map(|f| f.t).collect()
    }

    /// End of the time covered by frame `k`: the next timestamp, or one
    /// sample period past the last frame.
    pub fn frame_end(&self, k: usize) -> T {
        match self.frames.get(k + 1) {
            Some(next) => next.t,
            None => self.frames[k].t + self.sample_period,
        }
    }

    pub fn start_time(&self) -> T {
        self.frames[0].t
    }

    pub fn end_time(&self) -> T {
        self.frame_end(self.frames.len() - 1)
    }

    /// True when every object in every frame carries an in-lane offset.
    pub fn has_object_lane_positions(&self) -> bool {
        self.frames
            .iter()
            .flat_map(|f| f.objects.iter())
            .all(|o| o.lateral_offset_in_lane.is_some())
    }

    /// Index of the frame whose timestamp is closest to `t`.
    pub fn nearest_frame(&self, t: T) -> usize {
        let idx = self.frames.partition_point(|f| f.t < t);
        if idx == 0 {
            return 0;
        }
        if idx >= self.frames.len() {
            return self.frames.len() - 1;
        }
        if (self.frames[idx].t - t) < (t - self.frames[idx - 1].t) {
            idx
        } else {
            idx - 1
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: timestamp not strictly increasing")]
    NonMonotonicTimestamp { line: usize },
    #[error("log contains no frames")]
    EmptyLog,
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: Scalar>(line: usize, field: &str, s: &str) -> Result<T, ParseError> {
    let v: T = s
        .parse()
        .map_err(|_| syntax(line, format!("{field}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("{field}: not finite")));
    }
    Ok(v)
}

fn parse_int<I: FromStr>(line: usize, field: &str, s: &str) -> Result<I, ParseError> {
    s.parse()
        .map_err(|_| syntax(line, format!("{field}: not an integer: {s:?}")))
}

fn is_absent(s: &str) -> bool {
    s == "-" || s.is_empty()
}

fn parse_ego<T: Scalar>(line: usize, value: &str) -> Result<EgoState<T>, ParseError> {
    let fields: Vec<&str> = value.split(',').collect();
    if fields.len() != 4 {
        return Err(syntax(line, "ego needs speed,lane_id,lat_offset,lane_width"));
    }
    let speed: T = parse_num(line, "ego speed", fields[0])?;
    let lane_id = parse_int(line, "ego lane_id", fields[1])?;
    let lateral_offset_in_lane = if is_absent(fields[2]) {
        None
    } else {
        Some(parse_num::<T>(line, "ego lat_offset", fields[2])?)
    };
    let lane_width: T = parse_num(line, "ego lane_width", fields[3])?;
    if speed < T::zero() {
        return Err(syntax(line, "ego speed must be >= 0"));
    }
    if lane_width <= T::zero() {
        return Err(syntax(line, "lane_width must be > 0"));
    }
    if let Some(off) = lateral_offset_in_lane {
        if off.abs() > lane_width {
            return Err(syntax(line, "ego lat_offset exceeds one lane width"));
        }
    }
    Ok(EgoState {
        speed,
        lane_id,
        lateral_offset_in_lane,
        lane_width,
    })
}

fn parse_object<T: Scalar>(line: usize, value: &str) -> Result<ObjectState<T>, ParseError> {
    let fields: Vec<&str> = value.split(',').collect();
    if !(4..=6).contains(&fields.len()) {
        return Err(syntax(line, "obj needs id,dx,dy,dv[,lane_offset[,lat_in_lane]]"));
    }
    let track_id = TrackId(parse_int(line, "obj id", fields[0])?);
    let lane_offset = match fields.get(4) {
        Some(s) if !is_absent(s) => Some(parse_int(line, "obj lane_offset", s)?),
        _ => None,
    };
    let lateral_offset_in_lane = match fields.get(5) {
        Some(s) if !is_absent(s) => Some(parse_num(line, "obj lat_in_lane", s)?),
        _ => None,
    };
    Ok(ObjectState {
        track_id,
        dx: parse_num(line, "obj dx", fields[1])?,
        dy: parse_num(line, "obj dy", fields[2])?,
        dv: parse_num(line, "obj dv", fields[3])?,
        lane_offset,
        lateral_offset_in_lane,
    })
}

/// Parses one frame line (already known not to be a comment or blank).
pub fn parse_frame<T: Scalar>(line: usize, text: &str) -> Result<Frame<T>, ParseError> {
    let mut t = None;
    let mut ego = None;
    let mut objects: Vec<ObjectState<T>> = Vec::new();
    for token in text.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("token without '=': {token:?}")))?;
        match key {
            "t" if t.is_none() => t = Some(parse_num::<T>(line, "t", value)?),
            "ego" if ego.is_none() => ego = Some(parse_ego(line, value)?),
            "obj" => {
                let obj = parse_object(line, value)?;
                if objects.iter().any(|o| o.track_id == obj.track_id) {
                    return Err(syntax(line, format!("duplicate track id {}", obj.track_id)));
                }
                objects.push(obj);
            }
            "t" | "ego" => return Err(syntax(line, format!("duplicate {key}"))),
            other => return Err(syntax(line, format!("unknown key {other:?}"))),
        }
    }
    Ok(Frame {
        t: t.ok_or_else(|| syntax(line, "missing t="))?,
        ego: ego.ok_or_else(|| syntax(line, "missing ego="))?,
        objects,
    })
}

/// Parses a drive log. Line numbers in errors are 1-based.
pub fn parse_drive_log<T: Scalar, R: BufRead>(
    reader: R,
    source: &str,
) -> Result<DriveLog<T>, ParseError> {
    let mut frames: Vec<Frame<T>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let frame = parse_frame(lineno, trimmed)?;
        if let Some(prev) = frames.last() {
            if frame.t <= prev.t {
                return Err(ParseError::NonMonotonicTimestamp { line: lineno });
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(ParseError::EmptyLog);
    }
    let gaps: Vec<T> = frames.windows(2).map(|w| w[1].t - w[0].t).collect();
    Ok(DriveLog {
        sample_period: median(&gaps).unwrap_or_else(T::zero),
        frames,
        meta: LogMeta {
            source: source.to_string(),
            ..LogMeta::default()
        },
    })
}

pub fn parse_drive_log_str<T: Scalar>(text: &str, source: &str) -> Result<DriveLog<T>, ParseError> {
    parse_drive_log(text.as_bytes(), source)
}

impl<T: Scalar> fmt::Display for Frame<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} ego={},{},", self.t, self.ego.speed, self.ego.lane_id)?;
        match self.ego.lateral_offset_in_lane {
            Some(off) => write!(f, "{off}")?,
            None => f.write_str("-")?,
        }
        write!(f, ",{}", self.ego.lane_width)?;
        for o in &self.objects {
            write!(f, " obj={},{},{},{}", o.track_id, o.dx, o.dy, o.dv)?;
            match (o.lane_offset, o.lateral_offset_in_lane) {
                (None, None) => {}
                (Some(lane), None) => write!(f, ",{lane}")?,
                (Some(lane), Some(lat)) => write!(f, ",{lane},{lat}")?,
                (None, Some(lat)) => write!(f, ",-,{lat}")?,
            }
        }
        Ok(())
    }
}

/// Writes every frame of `log`, one per line.
pub fn write_drive_log<T: Scalar, W: Write>(mut w: W, log: &DriveLog<T>) -> io::Result<()> {
    for frame in &log.frames {
        writeln!(w, "{frame}")?;
    }
    Ok(())
}

impl<T: Scalar> fmt::Display for DriveLog<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for frame in &self.frames {
            writeln!(f, "{frame}")?;
        }
        Ok(())
    }
}

/// Splits `log` at every inter-frame gap larger than `gap_tolerance`.
///
/// Frames are never dropped or resampled. Each returned segment carries its
/// index and the total number of splits in `meta`.
pub fn normalize_timeline<T: Scalar>(log: &DriveLog<T>, gap_tolerance: T) -> Vec<DriveLog<T>> {
    let mut groups: Vec<Vec<Frame<T>>> = vec![Vec::new()];
    for frame in &log.frames {
        let current = groups.last_mut().expect("at least one group");
        if let Some(prev) = current.last() {
            if frame.t - prev.t > gap_tolerance {
                groups.push(vec![frame.clone()]);
                continue;
            }
        }
        current.push(frame.clone());
    }
    let gaps_split = groups.len() - 1;
    groups
        .into_iter()
        .enumerate()
        .map(|(segment, frames)| {
            let gaps: Vec<T> = frames.windows(2).map(|w| w[1].t - w[0].t).collect();
            DriveLog {
                sample_period: median(&gaps).unwrap_or(log.sample_period),
                frames,
                meta: LogMeta {
                    source: log.meta.source.clone(),
                    segment,
                    gaps_split,
                },
            }
        })
        .collect()
}

/// Quantizes the object's lateral position, rebased to the ego lane center,
/// into a lane offset. A missing ego in-lane offset is treated as centered.
pub fn infer_lane_offset<T: Scalar>(obj: &ObjectState<T>, ego: &EgoState<T>) -> i32 {
    let ego_offset = ego.lateral_offset_in_lane.unwrap_or_else(T::zero);
    let lanes = ((obj.dy + ego_offset) / ego.lane_width).round();
    lanes.to_i32().unwrap_or(i32::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(dy: f64) -> ObjectState<f64> {
        ObjectState {
            track_id: TrackId(1),
            dx: 10.0,
            dy,
            dv: 0.0,
            lane_offset: None,
            lateral_offset_in_lane: None,
        }
    }

    fn ego(offset: f64, width: f64) -> EgoState<f64> {
        EgoState {
            speed: 30.0,
            lane_id: 2,
            lateral_offset_in_lane: Some(offset),
            lane_width: width,
        }
    }

    #[test]
    fn three_frames_sample_period() {
        let text = "# header\nt=0.0 ego=30,2,0,3.5\nt=0.04 ego=30,2,0,3.5\nt=0.08 ego=30,2,0,3.5 obj=4,20,0,0\n";
        let log: DriveLog<f64> = parse_drive_log_str(text, "mem").unwrap();
        assert_eq!(log.frames.len(), 3);
        assert!((log.sample_period - 0.04).abs() < 1e-12);
        assert_eq!(log.frames[2].objects[0].track_id, TrackId(4));
    }

    #[test]
    fn repeated_timestamp_rejected() {
        let text = "t=0.0 ego=30,2,0,3.5\nt=0.0 ego=30,2,0,3.5\n";
        let err = parse_drive_log_str::<f64>(text, "mem").unwrap_err();
        assert!(matches!(err, ParseError::NonMonotonicTimestamp { line: 2 }));
    }

    #[test]
    fn header_only_is_empty() {
        let err = parse_drive_log_str::<f64>("# only a header\n\n", "mem").unwrap_err();
        assert!(matches!(err, ParseError::EmptyLog));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let cases = [
            "t=0 ego=30,2,0\n",
            "t=0 ego=30,2,0,0\n",
            "t=0 ego=30,2,5,3.5\n",
            "t=0 ego=30,2,0,3.5 obj=1,2,3\n",
            "t=0 ego=30,2,0,3.5 obj=1,2,3,4 obj=1,5,6,7\n",
            "t=0 ego=30,2,0,3.5 foo=1\n",
            "ego=30,2,0,3.5\n",
            "t=x ego=30,2,0,3.5\n",
        ];
        for text in cases {
            let full = format!("# c\n{text}");
            match parse_drive_log_str::<f64>(&full, "mem") {
                Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 2, "{text}"),
                other => panic!("{text}: expected syntax error, got {other:?}"),
            }
        }
    }

    #[test]
    fn optional_fields_and_placeholders() {
        let text = "t=0 ego=30,2,-,3.5 obj=1,2,3,4,-,0.2 obj=2,5,0,0,0";
        let frame: Frame<f64> = parse_frame(1, text).unwrap();
        assert_eq!(frame.ego.lateral_offset_in_lane, None);
        assert_eq!(frame.objects[0].lane_offset, None);
        assert_eq!(frame.objects[0].lateral_offset_in_lane, Some(0.2));
        assert_eq!(frame.objects[1].lane_offset, Some(0));
        assert_eq!(frame.to_string(), text);
    }

    #[test]
    fn normalize_identity_on_regular_log() {
        let text: String = (0..10)
            .map(|k| format!("t={} ego=30,2,0,3.5\n", k as f64 * 0.04))
            .collect();
        let log: DriveLog<f64> = parse_drive_log_str(&text, "mem").unwrap();
        let segs = normalize_timeline(&log, 0.5);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].frames, log.frames);
    }

    #[test]
    fn normalize_splits_long_gap() {
        let text = "t=0 ego=30,2,0,3.5\nt=0.04 ego=30,2,0,3.5\nt=2.04 ego=30,2,0,3.5\nt=2.08 ego=30,2,0,3.5\n";
        let log: DriveLog<f64> = parse_drive_log_str(text, "mem").unwrap();
        let segs = normalize_timeline(&log, 0.5);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].meta.segment, 1);
        assert_eq!(segs[0].meta.gaps_split, 1);
    }

    #[test]
    fn normalize_three_gaps_reference_scan() {
        let mut times = vec![0.0];
        for _ in 0..3 {
            let last = *times.last().unwrap();
            times.push(last + 0.04);
            times.push(last + 0.04 + 0.6);
        }
        // reference: one segment plus one per gap above tolerance
        let expected = 1 + times.windows(2).filter(|w| w[1] - w[0] > 0.5).count();
        assert_eq!(expected, 4);
        let text: String = times
            .iter()
            .map(|t| format!("t={t} ego=30,2,0,3.5\n"))
            .collect();
        let log: DriveLog<f64> = parse_drive_log_str(&text, "mem").unwrap();
        let segs = normalize_timeline(&log, 0.5);
        assert_eq!(segs.len(), expected);
        assert_eq!(segs.iter().map(|s| s.frames.len()).sum::<usize>(), times.len());
    }

    #[test]
    fn infer_lane_offset_examples() {
        assert_eq!(infer_lane_offset(&obj(0.0), &ego(0.0, 3.5)), 0);
        assert_eq!(infer_lane_offset(&obj(3.5), &ego(0.0, 3.5)), 1);
        assert_eq!(infer_lane_offset(&obj(1.2), &ego(0.7, 3.5)), 1);
        assert_eq!(infer_lane_offset(&obj(-3.6), &ego(0.0, 3.5)), -1);
    }

    #[test]
    fn infer_lane_offset_lattice() {
        // brute force: nearest lane center on a lattice of candidate lanes
        for i in -80..=80 {
            let dy = i as f64 * 0.1;
            for j in -5..=5 {
                let off = j as f64 * 0.3;
                let pos = dy + off;
                let nearest = (-4..=4)
                    .min_by(|a, b| {
                        let da = (pos - *a as f64 * 3.5).abs();
                        let db = (pos - *b as f64 * 3.5).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                let got = infer_lane_offset(&obj(dy), &ego(off, 3.5));
                // exact midpoints resolve away from zero
                if ((pos / 3.5).abs().fract() - 0.5).abs() > 1e-9 {
                    assert_eq!(got, nearest, "dy={dy} off={off}");
                }
            }
        }
    }

    #[test]
    fn nearest_frame_lookup() {
        let text = "t=0 ego=30,2,0,3.5\nt=1 ego=30,2,0,3.5\nt=2 ego=30,2,0,3.5\n";
        let log: DriveLog<f64> = parse_drive_log_str(text, "mem").unwrap();
        assert_eq!(log.nearest_frame(-1.0), 0);
        assert_eq!(log.nearest_frame(1.4), 1);
        assert_eq!(log.nearest_frame(1.6), 2);
        assert_eq!(log.nearest_frame(9.0), 2);
        assert_eq!(log.end_time(), 3.0);
    }
}
