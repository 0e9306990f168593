use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 3;

/// Per-breast label, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionClass {
    NoLesion = 0,
    Benign = 1,
    Malignant = 2,
}

impl LesionClass {
    pub const ALL: [LesionClass; NUM_CLASSES] = [LesionClass::NoLesion, LesionClass::Benign, LesionClass::Malignant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LesionClass::NoLesion => "no_lesion",
            LesionClass::Benign => "benign",
            LesionClass::Malignant => "malignant",
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "no_lesion" => Ok(LesionClass::NoLesion),
            "benign" => Ok(LesionClass::Benign),
            "malignant" => Ok(LesionClass::Malignant),
            other => Err(Error::ManifestParse(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::SchemaMismatch(format!("unknown side {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_order() {
        assert_eq!("benign".parse::<LesionClass>().unwrap(), LesionClass::Benign);
        assert!("cyst".parse::<LesionClass>().is_err());
        assert!(LesionClass::NoLesion < LesionClass::Benign && LesionClass::Benign < LesionClass::Malignant);
        assert_eq!("right".parse::<Side>().unwrap(), Side::Right);
        assert_eq!(LesionClass::from_index(2), Some(LesionClass::Malignant));
        assert_eq!(LesionClass::from_index(3), None);
    }
}
