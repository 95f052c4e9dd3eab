//! Half-open intervals on the extended real line.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

/// The half-open range `[lo, hi)` with possibly infinite ends.
///
/// `lo` may be `-inf` and `hi` may be `+inf`. A point `x` belongs to the
/// interval when `lo <= x < hi`, which makes the leaves of a single tree an
/// exact partition of the feature space: a point sitting on a split
/// threshold belongs to the right-hand branch only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    /// True when the interval is a well-formed, non-empty set.
    pub fn is_valid(&self) -> bool {
        !self.lo.is_nan()
            && !self.hi.is_nan()
            && self.lo != f64::INFINITY
            && self.hi != f64::NEG_INFINITY
            && self.lo < self.hi
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    /// Intersection of two half-open intervals; may be empty.
    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    /// True when the two intervals share at least one point.
    pub fn overlaps(&self, other: &Interval) -> bool {
        !self.intersect(other).is_empty()
    }

    /// Restrict by the branch `x < t`.
    pub fn below(&self, t: f64) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi.min(t),
        }
    }

    /// Restrict by the branch `x >= t`.
    pub fn at_or_above(&self, t: f64) -> Interval {
        Interval {
            lo: self.lo.max(t),
            hi: self.hi,
        }
    }

    /// Gap between `x` and the interval, and the closest point of its closure.
    ///
    /// When `x >= hi` the returned point is `hi` itself, which is excluded
    /// from the half-open set; callers realizing a point must nudge it.
    #[inline]
    pub fn clamp_gap(&self, x: f64) -> (f64, f64) {
        if x < self.lo {
            (self.lo - x, self.lo)
        } else if x >= self.hi {
            (x - self.hi, self.hi)
        } else {
            (0.0, x)
        }
    }

    pub fn midpoint_sample(&self) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => self.lo + (self.hi - self.lo) / 2.0,
            (true, false) => self.lo + 1.0,
            (false, true) => self.hi - 1.0,
            (false, false) => 0.0,
        }
    }
}

impl Default for Interval {
    fn default() -> Self {
        Interval::FULL
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

/// Bound value in JSON documents: a number, or the strings `"-inf"` / `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            serializer.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            serializer.serialize_str("-inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BoundVisitor;

        impl Visitor<'_> for BoundVisitor {
            type Value = Bound;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or one of \"-inf\", \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Bound, E> {
                Ok(Bound(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bound, E> {
                Ok(Bound(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bound, E> {
                Ok(Bound(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bound, E> {
                match v {
                    "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                    "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(BoundVisitor)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(2)?;
        tup.serialize_element(&Bound(self.lo))?;
        tup.serialize_element(&Bound(self.hi))?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PairVisitor;

        impl<'de> Visitor<'de> for PairVisitor {
            type Value = Interval;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a [lo, hi] pair")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Interval, A::Error> {
                let lo: Bound = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let hi: Bound = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<Bound>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                Ok(Interval::new(lo.0, hi.0))
            }
        }

        deserializer.deserialize_seq(PairVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_membership() {
        let iv = Interval::new(0.0, 2.0);
        assert!(iv.contains(0.0));
        assert!(iv.contains(1.999));
        assert!(!iv.contains(2.0));
        assert!(Interval::FULL.contains(-1e300));
    }

    #[test]
    fn folding_keeps_tightest_bounds() {
        let iv = Interval::FULL.below(5.0).below(2.0);
        assert_eq!(iv, Interval::new(f64::NEG_INFINITY, 2.0));
        let iv = iv.at_or_above(1.0).at_or_above(-3.0);
        assert_eq!(iv, Interval::new(1.0, 2.0));
        // folding again is a no-op
        assert_eq!(iv.below(2.0).at_or_above(1.0), iv);
    }

    #[test]
    fn contradictory_tests_give_empty() {
        assert!(Interval::FULL.at_or_above(2.0).below(1.0).is_empty());
        assert!(Interval::FULL.at_or_above(2.0).below(2.0).is_empty());
    }

    #[test]
    fn clamp_gap_on_both_sides() {
        let iv = Interval::new(1.0, 3.0);
        assert_eq!(iv.clamp_gap(0.0), (1.0, 1.0));
        assert_eq!(iv.clamp_gap(2.0), (0.0, 2.0));
        assert_eq!(iv.clamp_gap(3.0), (0.0, 3.0));
        assert_eq!(iv.clamp_gap(5.0), (2.0, 3.0));
    }

    #[test]
    fn json_uses_inf_strings() {
        let iv = Interval::new(f64::NEG_INFINITY, 2.5);
        let s = serde_json::to_string(&iv).unwrap();
        assert_eq!(s, r#"["-inf",2.5]"#);
        let back: Interval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, iv);
        let full: Interval = serde_json::from_str(r#"["-inf","inf"]"#).unwrap();
        assert_eq!(full, Interval::FULL);
        assert!(serde_json::from_str::<Interval>(r#"["nope",1]"#).is_err());
    }
}
