//! Half-open time intervals `[start, end)` and the set operations the
//! abstraction layer needs.

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub start: T,
    pub end: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(start: T, end: T) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> T {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: T) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let iv = Self::new(self.start.max(other.start), self.end.min(other.end));
        (!iv.is_empty()).then_some(iv)
    }

    pub fn midpoint(&self) -> T {
        (self.start + self.end) / T::lit(2.0)
    }
}

/// Sorts and merges overlapping or touching intervals; drops empty ones.
pub fn union<T: Scalar>(intervals: &[Interval<T>]) -> Vec<Interval<T>> {
    let mut sorted: Vec<_> = intervals.iter().copied().filter(|i| !i.is_empty()).collect();
    sorted.sort_by(|a, b| a.start.partial_cmp(&b.start).expect("finite interval bounds"));
    let mut out: Vec<Interval<T>> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

/// `base` minus the union of `holes`.
pub fn subtract<T: Scalar>(base: Interval<T>, holes: &[Interval<T>]) -> Vec<Interval<T>> {
    let mut out = Vec::new();
    let mut cursor = base.start;
    for hole in union(holes) {
        if hole.end <= cursor || hole.start >= base.end {
            continue;
        }
        if hole.start > cursor {
            out.push(Interval::new(cursor, hole.start));
        }
        cursor = cursor.max(hole.end);
    }
    if cursor < base.end {
        out.push(Interval::new(cursor, base.end));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Interval<f64> {
        Interval::new(a, b)
    }

    #[test]
    fn half_open_membership() {
        let i = iv(1.0, 2.0);
        assert!(i.contains(1.0));
        assert!(!i.contains(2.0));
        assert!(!i.overlaps(&iv(2.0, 3.0)));
    }

    #[test]
    fn union_merges_touching() {
        let u = union(&[iv(3.0, 4.0), iv(0.0, 1.0), iv(1.0, 2.0), iv(5.0, 5.0)]);
        assert_eq!(u, vec![iv(0.0, 2.0), iv(3.0, 4.0)]);
    }

    #[test]
    fn subtract_splits() {
        let parts = subtract(iv(0.0, 60.0), &[iv(10.0, 12.0), iv(30.0, 31.0)]);
        assert_eq!(parts, vec![iv(0.0, 10.0), iv(12.0, 30.0), iv(31.0, 60.0)]);
        assert_eq!(subtract(iv(0.0, 1.0), &[iv(-1.0, 2.0)]), vec![]);
        assert_eq!(subtract(iv(0.0, 1.0), &[]), vec![iv(0.0, 1.0)]);
    }
}
