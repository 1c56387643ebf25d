//! Three-dimensional quality scores shared by reviews and community ratings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dimension {
    Originality,
    Soundness,
    Impact,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Originality, Dimension::Soundness, Dimension::Impact];
}

/// Scores as submitted; any dimension may be missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub originality: Option<u8>,
    pub soundness: Option<u8>,
    pub impact: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub originality: u8,
    pub soundness: u8,
    pub impact: u8,
}

impl Scores {
    pub fn new(originality: u8, soundness: u8, impact: u8) -> Self {
        Self { originality, soundness, impact }
    }

    pub fn get(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Originality => self.originality,
            Dimension::Soundness => self.soundness,
            Dimension::Impact => self.impact,
        }
    }
}

impl From<Scores> for ScoreInput {
    fn from(s: Scores) -> Self {
        Self { originality: Some(s.originality), soundness: Some(s.soundness), impact: Some(s.impact) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("missing {0:?} score")]
    Incomplete(Dimension),
    #[error("{dimension:?} score {value} is outside 1..=10")]
    OutOfRange { dimension: Dimension, value: u8 },
}

impl ScoreInput {
    fn get(&self, d: Dimension) -> Option<u8> {
        match d {
            Dimension::Originality => self.originality,
            Dimension::Soundness => self.soundness,
            Dimension::Impact => self.impact,
        }
    }

    /// Missing dimensions are reported before out-of-range values.
    pub fn complete(&self) -> Result<Scores, ScoreError> {
        for d in Dimension::ALL {
            if self.get(d).is_none() {
                return Err(ScoreError::Incomplete(d));
            }
        }
        for d in Dimension::ALL {
            let value = self.get(d).unwrap_or_default();
            if !(MIN_SCORE..=MAX_SCORE).contains(&value) {
                return Err(ScoreError::OutOfRange { dimension: d, value });
            }
        }
        Ok(Scores::new(
            self.originality.unwrap_or_default(),
            self.soundness.unwrap_or_default(),
            self.impact.unwrap_or_default(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completeness_and_range() {
        let ok = ScoreInput { originality: Some(8), soundness: Some(7), impact: Some(9) };
        assert_eq!(ok.complete().unwrap(), Scores::new(8, 7, 9));
        let missing = ScoreInput { impact: None, ..ok };
        assert_eq!(missing.complete().unwrap_err(), ScoreError::Incomplete(Dimension::Impact));
        let high = ScoreInput { soundness: Some(11), ..ok };
        assert_eq!(
            high.complete().unwrap_err(),
            ScoreError::OutOfRange { dimension: Dimension::Soundness, value: 11 }
        );
        assert!(ScoreInput { originality: Some(0), ..ok }.complete().is_err());
    }
}
