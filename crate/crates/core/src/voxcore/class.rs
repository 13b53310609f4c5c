use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Orientation class of a grid cell.
///
/// The integer codes are part of the on-disk grid format and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum OrientationClass {
    /// Similar fiber orientation.
    S = 0,
    /// Dissimilar fiber orientation.
    D = 1,
    /// Not of interest: background, noise, macroscopic structure.
    N = 2,
}

impl OrientationClass {
    pub const ALL: [OrientationClass; NUM_CLASSES] =
        [OrientationClass::S, OrientationClass::D, OrientationClass::N];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(OrientationClass::S),
            1 => Ok(OrientationClass::D),
            2 => Ok(OrientationClass::N),
            other => Err(Error::Format(format!("invalid class code {other}"))),
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        u8::try_from(index)
            .map_err(|_| Error::Argument(format!("class index {index} out of range")))
            .and_then(Self::from_code)
    }

    pub fn name(self) -> &'static str {
        match self {
            OrientationClass::S => "S",
            OrientationClass::D => "D",
            OrientationClass::N => "N",
        }
    }

    /// Overlay color (S red, D green, N blue).
    pub fn color(self) -> [u8; 3] {
        match self {
            OrientationClass::S => [255, 0, 0],
            OrientationClass::D => [0, 255, 0],
            OrientationClass::N => [0, 0, 255],
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for OrientationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrientationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S" | "s" | "0" => Ok(OrientationClass::S),
            "D" | "d" | "1" => Ok(OrientationClass::D),
            "N" | "n" | "2" => Ok(OrientationClass::N),
            other => Err(Error::Argument(format!("unknown class {other:?}"))),
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest class code.
pub fn argmax_class(probs: &[f64]) -> OrientationClass {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().take(NUM_CLASSES) {
        if p > probs[best] {
            best = i;
        }
    }
    OrientationClass::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for class in OrientationClass::ALL {
            assert_eq!(OrientationClass::from_code(class.code()).unwrap(), class);
            assert_eq!(class.name().parse::<OrientationClass>().unwrap(), class);
        }
        assert_eq!(OrientationClass::S.code(), 0);
        assert_eq!(OrientationClass::D.code(), 1);
        assert_eq!(OrientationClass::N.code(), 2);
        assert!(OrientationClass::from_code(3).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_code() {
        assert_eq!(argmax_class(&[0.4, 0.4, 0.2]), OrientationClass::S);
        assert_eq!(argmax_class(&[0.2, 0.4, 0.4]), OrientationClass::D);
        assert_eq!(argmax_class(&[1.0 / 3.0; 3]), OrientationClass::S);
        assert_eq!(argmax_class(&[0.1, 0.2, 0.7]), OrientationClass::N);
    }
}
