//! Discretization of measurements (and sums of measurements) into states.
//!
//! A state is an integer in `0..num_states`. With `zero_special` set, state 0
//! stands for an exact zero and the remaining `num_states - 1` states split
//! `(0, R]` into equal-width, left-open/right-closed intervals. A sum of `z`
//! measurements is discretized over the stretched range `(0, z·R]`, so the
//! same state set serves individual values and neighborhood sums alike.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SeriesGrid;

/// Cell state, an index into the state set.
pub type State = u8;

/// Default size of the state set.
pub const DEFAULT_NUM_STATES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    num_states: usize,
    range: f64,
    zero_special: bool,
}

impl Quantizer {
    pub fn new(num_states: usize, range: f64) -> Result<Self> {
        Self::with_zero_special(num_states, range, true)
    }

    pub fn with_zero_special(num_states: usize, range: f64, zero_special: bool) -> Result<Self> {
        if !(2..=usize::from(State::MAX) + 1).contains(&num_states) {
            return Err(Error::InvalidParameter(format!(
                "num_states must be in 2..=256, got {num_states}"
            )));
        }
        if !range.is_finite() || range <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "range must be finite and > 0, got {range}"
            )));
        }
        Ok(Self {
            num_states,
            range,
            zero_special,
        })
    }

    /// Global range taken from the largest non-gap value in the grid.
    ///
    /// An all-zero grid gets the sentinel range 1.0, under which every value
    /// maps to state 0.
    pub fn fit_range(grid: &SeriesGrid, num_states: usize) -> Result<Self> {
        let mut max: Option<f64> = None;
        for v in grid.values().iter().flatten().flatten() {
            if *v < 0.0 {
                return Err(Error::NegativeMeasurement(*v));
            }
            max = Some(max.map_or(*v, |m: f64| m.max(*v)));
        }
        let max = max.ok_or(Error::EmptyCorpus)?;
        Self::new(num_states, if max > 0.0 { max } else { 1.0 })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn zero_special(&self) -> bool {
        self.zero_special
    }

    pub fn max_state(&self) -> State {
        (self.num_states - 1) as State
    }

    /// State of a sum of `z` nonnegative measurements (`z = 1` for a single value).
    pub fn quantize(&self, v: f64, z: usize) -> Result<State> {
        if !v.is_finite() {
            return Err(Error::NonFinite(v));
        }
        if v < 0.0 {
            return Err(Error::NegativeMeasurement(v));
        }
        if z == 0 {
            return Err(Error::InvalidParameter("sum arity z must be >= 1".into()));
        }
        let scale = z as f64 * self.range;
        let top = self.num_states - 1;
        let k = if self.zero_special {
            if v == 0.0 {
                return Ok(0);
            }
            ((v * top as f64) / scale).ceil().max(1.0)
        } else {
            ((v * self.num_states as f64) / scale).floor()
        };
        Ok((k as usize).min(top) as State)
    }

    /// Midpoint of the interval for `state` at sum arity `z` (0.0 for the zero state).
    pub fn representative(&self, state: usize, z: usize) -> Result<f64> {
        if state >= self.num_states {
            return Err(Error::InvalidState {
                state,
                num_states: self.num_states,
            });
        }
        if z == 0 {
            return Err(Error::InvalidParameter("sum arity z must be >= 1".into()));
        }
        let scale = z as f64 * self.range;
        Ok(if self.zero_special {
            if state == 0 {
                0.0
            } else {
                (state as f64 - 0.5) * scale / (self.num_states - 1) as f64
            }
        } else {
            (state as f64 + 0.5) * scale / self.num_states as f64
        })
    }

    /// `representative(state, 1)` for a state already known to be valid.
    pub(crate) fn midpoint(&self, state: State) -> f64 {
        self.representative(usize::from(state), 1)
            .expect("state produced by this quantizer")
    }

    /// Flat `key = value` text form.
    pub fn to_text(&self) -> String {
        format!(
            "num_states = {}\nrange = {}\nzero_special = {}\n",
            self.num_states, self.range, self.zero_special
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let entries = crate::config::parse_key_values(text)?;
        let get = |key: &str| {
            entries
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let bad = |reason: String| Error::Format {
            path: "quantizer".into(),
            reason,
        };
        let num_states = get("num_states")
            .ok_or_else(|| bad("missing num_states".into()))?
            .parse::<usize>()
            .map_err(|e| bad(e.to_string()))?;
        let range = get("range")
            .ok_or_else(|| bad("missing range".into()))?
            .parse::<f64>()
            .map_err(|e| bad(e.to_string()))?;
        let zero_special = match get("zero_special") {
            None => true,
            Some(v) => v.parse::<bool>().map_err(|e| bad(e.to_string()))?,
        };
        Self::with_zero_special(num_states, range, zero_special)
    }
}
