//! A-weighted decibel arithmetic.
//!
//! Levels are combined in the energy domain: a level `L` dBA carries the
//! energy ratio `10^(L/10)`. Zero energy has no finite decibel value, so it
//! is represented by [`SoundLevel::SILENT`].

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcousticsError {
    /// The subtrahend carries at least as much energy as the minuend.
    #[error("energy subtraction {level} - {subtrahend} leaves no positive energy")]
    NonPositiveEnergy {
        level: SoundLevel,
        subtrahend: SoundLevel,
    },
    #[error("cannot compute an equivalent level over an empty window")]
    EmptyWindow,
    #[error("sample time {time} does not follow the previous sample time {previous}")]
    NonIncreasingTime { time: i64, previous: i64 },
    #[error("level must be finite, got {0}")]
    NonFinite(f64),
}

/// A sound pressure level in dBA, or silence (zero energy).
///
/// Serializes as a JSON number, with silence as `null`.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct SoundLevel(f64);

impl SoundLevel {
    pub const SILENT: SoundLevel = SoundLevel(f64::NEG_INFINITY);

    /// Panics if `db` is not finite; use [`SoundLevel::try_db`] for untrusted input.
    pub fn db(db: f64) -> Self {
        Self::try_db(db).expect("sound level must be finite")
    }

    pub fn try_db(db: f64) -> Result<Self, AcousticsError> {
        if db.is_finite() {
            Ok(SoundLevel(db))
        } else {
            Err(AcousticsError::NonFinite(db))
        }
    }

    /// Converts an energy ratio back to a level. Zero maps to silence.
    ///
    /// Negative or NaN energies are a caller bug.
    pub fn from_energy(energy: f64) -> Self {
        debug_assert!(energy >= 0.0, "negative energy {energy}");
        if energy <= 0.0 {
            Self::SILENT
        } else {
            SoundLevel(10.0 * energy.log10())
        }
    }

    pub fn is_silent(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// The level in dBA; `-inf` for silence.
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn energy(self) -> f64 {
        db_to_energy(self)
    }

    /// Plain decibel offset (`L + d`), as used for error bounds which are
    /// differences of levels rather than levels themselves.
    pub fn offset(self, db: f64) -> Self {
        if self.is_silent() {
            self
        } else {
            SoundLevel(self.0 + db)
        }
    }
}

impl fmt::Debug for SoundLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_silent() {
            write!(f, "SoundLevel(silent)")
        } else {
            write!(f, "SoundLevel({} dBA)", self.0)
        }
    }
}

impl fmt::Display for SoundLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_silent() {
            write!(f, "silent")
        } else {
            write!(f, "{:.4} dBA", self.0)
        }
    }
}

impl Serialize for SoundLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.is_silent() {
            serializer.serialize_none()
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SoundLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Option::<f64>::deserialize(deserializer)? {
            None => Ok(SoundLevel::SILENT),
            Some(v) => SoundLevel::try_db(v).map_err(serde::de::Error::custom),
        }
    }
}

pub fn db_to_energy(level: SoundLevel) -> f64 {
    if level.is_silent() {
        0.0
    } else {
        10f64.powf(level.0 / 10.0)
    }
}

/// `10·log10(Σ 10^(Li/10))`; an empty list is silent.
pub fn energy_sum_db<I>(levels: I) -> SoundLevel
where
    I: IntoIterator<Item = SoundLevel>,
{
    SoundLevel::from_energy(levels.into_iter().map(db_to_energy).sum())
}

/// `10·log10(10^(L/10) − 10^(d/10))`.
pub fn db_subtract(level: SoundLevel, subtrahend: SoundLevel) -> Result<SoundLevel, AcousticsError> {
    let remaining = db_to_energy(level) - db_to_energy(subtrahend);
    if remaining > 0.0 {
        Ok(SoundLevel::from_energy(remaining))
    } else {
        Err(AcousticsError::NonPositiveEnergy { level, subtrahend })
    }
}

/// Sliding record of the most recent `window + 1` levels (steps `t − window ..= t`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelWindow {
    window: usize,
    samples: VecDeque<(i64, SoundLevel)>,
}

impl LevelWindow {
    /// `window` is the span Δt in steps; values below 1 are raised to 1.
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            samples: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &(i64, SoundLevel)> {
        self.samples.iter()
    }

    pub fn push(&mut self, time: i64, level: SoundLevel) -> Result<(), AcousticsError> {
        if let Some(&(previous, _)) = self.samples.back() {
            if time <= previous {
                return Err(AcousticsError::NonIncreasingTime { time, previous });
            }
        }
        self.samples.push_back((time, level));
        let earliest = time - self.window as i64;
        while matches!(self.samples.front(), Some(&(t, _)) if t < earliest) {
            self.samples.pop_front();
        }
        Ok(())
    }

    pub fn leq(&self) -> Result<SoundLevel, AcousticsError> {
        leq(self)
    }
}

/// Equivalent continuous level: the decibel value of the mean energy of the
/// samples held in the window. A warm-up window (fewer than Δt+1 samples)
/// averages over the samples present.
pub fn leq(window: &LevelWindow) -> Result<SoundLevel, AcousticsError> {
    if window.is_empty() {
        return Err(AcousticsError::EmptyWindow);
    }
    Ok(mean_energy_level(window.samples.iter().map(|&(_, l)| l)))
}

/// `10·log10` of the arithmetic mean of the sample energies; silent when empty.
pub fn mean_energy_level<I>(levels: I) -> SoundLevel
where
    I: IntoIterator<Item = SoundLevel>,
{
    let (sum, n) = levels
        .into_iter()
        .fold((0.0, 0usize), |(s, n), l| (s + db_to_energy(l), n + 1));
    if n == 0 {
        SoundLevel::SILENT
    } else {
        SoundLevel::from_energy(sum / n as f64)
    }
}
