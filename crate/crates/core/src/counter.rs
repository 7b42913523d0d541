//! Sliding-window counters.
//!
//! Three counter flavours share one observable contract: at the end of slice
//! `t`, a counter reports *active* for a query width `k'` iff it was set in
//! one of the slices `t-k'+1 ..= t`.
//!
//! * [`AtValue`] — asynchronous timestamp. Stores the clock value (`act`) of
//!   the slice in which it was last set. The clock runs modulo `2k` and is
//!   never stored per counter; it is derived from the counter's position (see
//!   the pool module). `2k` is the inactive sentinel, so an AT needs
//!   `ceil(log2(2k+1))` bits and only has to be maintained when its clock
//!   reads `0` or `k`.
//! * [`DrValue`] — distance recorder. Reset to 0 on activity, incremented
//!   (saturating at `k`) every slice. `ceil(log2(k+1))` bits, but every
//!   counter must be touched every slice.
//! * [`TsValue`] — plain 64-bit last-seen slice index, never maintained.

use std::fmt;

use thiserror::Error;

/// Largest supported `k` (window width in slices).
pub const MAX_K: u32 = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CounterError {
    #[error("window width k must be in 1..={MAX_K}, got {0}")]
    InvalidK(u32),
    #[error("slice duration must be positive")]
    ZeroSliceDuration,
    #[error("query width k'={k_prime} outside 1..={k}")]
    QueryWidth { k_prime: u32, k: u32 },
    #[error("asynchronous clock value {act} outside 0..{}", 2 * k)]
    ActOutOfRange { act: u32, k: u32 },
    #[error("inactive counter has no distance")]
    SentinelDistance,
}

/// Number of bits needed to store values `0..=max`.
pub fn bits_for(max: u64) -> u32 {
    (u64::BITS - max.leading_zeros()).max(1)
}

/// Window shape: at most `k` slices of `slice_duration_us` microseconds each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    k: u32,
    slice_duration_us: u64,
}

impl WindowConfig {
    pub fn new(k: u32, slice_duration_us: u64) -> Result<Self, CounterError> {
        if k == 0 || k > MAX_K {
            return Err(CounterError::InvalidK(k));
        }
        if slice_duration_us == 0 {
            return Err(CounterError::ZeroSliceDuration);
        }
        Ok(Self {
            k,
            slice_duration_us,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn slice_duration_us(&self) -> u64 {
        self.slice_duration_us
    }

    pub fn check_query(&self, k_prime: u32) -> Result<(), CounterError> {
        check_query(self.k, k_prime)
    }
}

pub(crate) fn check_query(k: u32, k_prime: u32) -> Result<(), CounterError> {
    if k_prime == 0 || k_prime > k {
        Err(CounterError::QueryWidth { k_prime, k })
    } else {
        Ok(())
    }
}

/// Asynchronous current timestamp: the runtime clock of a counter, in `0..2k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActValue(u32);

impl ActValue {
    pub fn new(act: u32, k: u32) -> Result<Self, CounterError> {
        if act >= 2 * k {
            Err(CounterError::ActOutOfRange { act, k })
        } else {
            Ok(Self(act))
        }
    }

    /// Clock value of the following slice.
    pub fn next(self, k: u32) -> Self {
        Self((self.0 + 1) % (2 * k))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ActValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Stored value of an asynchronous-timestamp counter, `0..=2k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtValue(u32);

impl AtValue {
    /// Fresh counter: the inactive sentinel `2k`.
    pub fn init(k: u32) -> Self {
        Self(2 * k)
    }

    pub fn from_raw(value: u32, k: u32) -> Option<Self> {
        (value <= 2 * k).then_some(Self(value))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn is_sentinel(self, k: u32) -> bool {
        self.0 == 2 * k
    }

    /// Encoded width in bits: `ceil(log2(2k+1))`.
    pub fn width(k: u32) -> u32 {
        bits_for(2 * u64::from(k))
    }

    /// Record activity in the slice whose clock reads `act`.
    pub fn set(self, act: ActValue, k: u32) -> Result<Self, CounterError> {
        if act.0 >= 2 * k {
            return Err(CounterError::ActOutOfRange { act: act.0, k });
        }
        Ok(Self(act.0))
    }

    /// Slices elapsed since the last set, modulo `2k`.
    pub fn distance(self, act: ActValue, k: u32) -> Result<u32, CounterError> {
        if self.is_sentinel(k) {
            return Err(CounterError::SentinelDistance);
        }
        Ok(distance_raw(self.0, act.0, k))
    }

    /// Activity at the end of the current slice for window width `k_prime`.
    pub fn check(self, act: ActValue, k: u32, k_prime: u32) -> Result<bool, CounterError> {
        check_query(k, k_prime)?;
        Ok(check_raw(self.0, act.0, k, k_prime))
    }

    /// Distance-based maintenance, run at the start of a slice before any
    /// set in that slice.
    ///
    /// At that point the counter cannot have been set in the current slice,
    /// so a value equal to `act` denotes a full `2k` cycle rather than a
    /// distance of zero, and is cleared along with every distance `>= k`.
    pub fn preserve_general(self, act: ActValue, k: u32) -> Self {
        if self.is_sentinel(k) {
            return self;
        }
        let dis = distance_raw(self.0, act.0, k);
        if dis == 0 || dis >= k {
            Self::init(k)
        } else {
            self
        }
    }

    /// Comparison-only maintenance for the slices whose clock reads `0` or
    /// `k`; a no-op for every other clock value.
    pub fn preserve_fast(self, act: ActValue, k: u32) -> Self {
        Self(preserve_fast_raw(self.0, act.0, k))
    }
}

#[inline]
pub(crate) fn distance_raw(value: u32, act: u32, k: u32) -> u32 {
    let d = act + 2 * k - value;
    if d >= 2 * k {
        d - 2 * k
    } else {
        d
    }
}

#[inline]
pub(crate) fn check_raw(value: u32, act: u32, k: u32, k_prime: u32) -> bool {
    value != 2 * k && distance_raw(value, act, k) < k_prime
}

#[inline]
pub(crate) fn preserve_fast_raw(value: u32, act: u32, k: u32) -> u32 {
    let sentinel = 2 * k;
    if act == 0 {
        if value <= k {
            return sentinel;
        }
    } else if act == k && ((k..sentinel).contains(&value) || value == 0) {
        return sentinel;
    }
    value
}

/// Distance-recorder counter, `0..=k`; `k` is inactive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrValue(u32);

impl DrValue {
    pub fn init(k: u32) -> Self {
        Self(k)
    }

    pub fn from_raw(value: u32, k: u32) -> Option<Self> {
        (value <= k).then_some(Self(value))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn width(k: u32) -> u32 {
        bits_for(u64::from(k))
    }

    pub fn set(self) -> Self {
        Self(0)
    }

    /// One slice passes.
    pub fn slide(self, k: u32) -> Self {
        Self((self.0 + 1).min(k))
    }

    pub fn check(self, k_prime: u32) -> bool {
        self.0 < k_prime
    }
}

/// Timestamp counter holding the last slice index it was set in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TsValue(Option<u64>);

impl TsValue {
    pub fn never() -> Self {
        Self(None)
    }

    pub fn last_seen(self) -> Option<u64> {
        self.0
    }

    pub fn set(self, slice: u64) -> Self {
        debug_assert!(self.0.is_none_or(|last| last <= slice));
        Self(Some(slice))
    }

    pub fn check(self, slice: u64, k_prime: u32) -> bool {
        self.0
            .is_some_and(|last| slice.saturating_sub(last) < u64::from(k_prime))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(v: u32, k: u32) -> ActValue {
        ActValue::new(v, k).unwrap()
    }

    fn at(v: u32, k: u32) -> AtValue {
        AtValue::from_raw(v, k).unwrap()
    }

    #[test]
    fn init_is_sentinel() {
        assert_eq!(AtValue::init(9).get(), 18);
        assert_eq!(AtValue::init(1).get(), 2);
        assert_eq!(AtValue::init(300).get(), 600);
        assert_eq!(AtValue::width(300), 10);
        assert_eq!(DrValue::width(300), 9);
    }

    #[test]
    fn widths_match_ceil_log2() {
        for k in 1..=4096u32 {
            let at = (f64::from(2 * k + 1)).log2().ceil() as u32;
            let dr = (f64::from(k + 1)).log2().ceil() as u32;
            assert_eq!(AtValue::width(k), at, "k={k}");
            assert_eq!(DrValue::width(k), dr, "k={k}");
        }
    }

    #[test]
    fn set_overwrites() {
        let k = 9;
        assert_eq!(at(18, k).set(act(7, k), k).unwrap().get(), 7);
        assert_eq!(at(3, k).set(act(3, k), k).unwrap().get(), 3);
        assert_eq!(at(5, k).set(act(0, k), k).unwrap().get(), 0);
    }

    #[test]
    fn act_out_of_range_rejected() {
        assert_eq!(
            ActValue::new(18, 9),
            Err(CounterError::ActOutOfRange { act: 18, k: 9 })
        );
        assert!(at(5, 9).set(ActValue(18), 9).is_err());
    }

    #[test]
    fn distance_examples() {
        let k = 9;
        assert_eq!(at(7, k).distance(act(7, k), k), Ok(0));
        assert_eq!(at(4, k).distance(act(7, k), k), Ok(3));
        assert_eq!(at(17, k).distance(act(0, k), k), Ok(1));
        assert_eq!(
            at(18, k).distance(act(0, k), k),
            Err(CounterError::SentinelDistance)
        );
    }

    #[test]
    fn check_examples() {
        let k = 9;
        for a in 0..18 {
            assert_eq!(at(18, k).check(act(a, k), k, 5), Ok(false));
        }
        assert_eq!(at(4, k).check(act(7, k), k, 5), Ok(true));
        assert_eq!(at(16, k).check(act(2, k), k, 3), Ok(false));
        assert_eq!(
            at(4, k).check(act(7, k), k, 10),
            Err(CounterError::QueryWidth { k_prime: 10, k: 9 })
        );
        assert!(at(4, k).check(act(7, k), k, 0).is_err());
    }

    #[test]
    fn preserve_general_examples() {
        let k = 9;
        assert_eq!(at(5, k).preserve_general(act(0, k), k).get(), 18);
        assert_eq!(at(12, k).preserve_general(act(0, k), k).get(), 12);
        assert_eq!(at(18, k).preserve_general(act(0, k), k).get(), 18);
    }

    #[test]
    fn preserve_fast_examples() {
        let k = 9;
        assert_eq!(at(5, k).preserve_fast(act(0, k), k).get(), 18);
        assert_eq!(at(12, k).preserve_fast(act(0, k), k).get(), 12);
        assert_eq!(at(0, k).preserve_fast(act(9, k), k).get(), 18);
        assert_eq!(at(5, k).preserve_fast(act(4, k), k).get(), 5);
        // Ranges from the k=9 walk-through: act 0 clears [0,9], act 9 clears [9,17] and 0.
        for v in 0..=18 {
            let cleared0 = v <= 9 || v == 18;
            let cleared9 = (9..=17).contains(&v) || v == 0 || v == 18;
            assert_eq!(at(v, k).preserve_fast(act(0, k), k).get() == 18, cleared0);
            assert_eq!(at(v, k).preserve_fast(act(9, k), k).get() == 18, cleared9);
        }
    }

    #[test]
    fn dr_trace() {
        let k = 9;
        let dr = DrValue::init(k);
        assert_eq!(dr.get(), 9);
        assert!(!dr.check(9));
        let dr = dr.set().slide(k).slide(k).slide(k);
        assert_eq!(dr.get(), 3);
        assert!(dr.check(5));
        assert!(!dr.check(3));
        let mut dr = dr;
        for _ in 0..100 {
            dr = dr.slide(k);
        }
        assert_eq!(dr.get(), k);
    }

    #[test]
    fn ts_trace() {
        let ts = TsValue::never();
        for kp in 1..=10 {
            assert!(!ts.check(100, kp));
        }
        let ts = ts.set(100);
        assert!(ts.check(100, 1));
        assert!(!ts.check(105, 5));
        assert!(ts.check(105, 6));
    }

    #[test]
    fn window_config_validation() {
        assert!(WindowConfig::new(0, 1).is_err());
        assert!(WindowConfig::new(MAX_K + 1, 1).is_err());
        assert!(WindowConfig::new(3, 0).is_err());
        let w = WindowConfig::new(30, 1_000_000).unwrap();
        assert!(w.check_query(30).is_ok());
        assert!(w.check_query(31).is_err());
    }
}
