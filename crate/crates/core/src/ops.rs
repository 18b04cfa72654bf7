//! High-level operation specs and results.

use std::fmt;
use std::str::FromStr;

use crate::error::SimError;

/// An operation a user can invoke on the simulated object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpSpec {
    Read,
    Write(u64),
    Cas { expected: u64, new: u64 },
    FetchInc,
    /// Set of a one-bit max register.
    Set,
}

impl OpSpec {
    /// Whether the operation may change the object state.
    pub fn is_update(&self) -> bool {
        !matches!(self, OpSpec::Read)
    }
}

impl fmt::Display for OpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpSpec::Read => write!(f, "read"),
            OpSpec::Write(x) => write!(f, "write:{x}"),
            OpSpec::Cas { expected, new } => write!(f, "cas:{expected}:{new}"),
            OpSpec::FetchInc => write!(f, "fetch_inc"),
            OpSpec::Set => write!(f, "set"),
        }
    }
}

impl FromStr for OpSpec {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::config(format!("bad op spec '{s}'"));
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let mut num = || -> Result<u64, SimError> { parts.next().ok_or_else(bad)?.parse().map_err(|_| bad()) };
        Ok(match head {
            "read" => OpSpec::Read,
            "write" => OpSpec::Write(num()?),
            "cas" => {
                let expected = num()?;
                let new = num()?;
                OpSpec::Cas { expected, new }
            }
            "fetch_inc" => OpSpec::FetchInc,
            "set" => OpSpec::Set,
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpResult {
    Unit,
    Value(u64),
    Bool(bool),
}

impl fmt::Display for OpResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpResult::Unit => write!(f, "unit"),
            OpResult::Value(v) => write!(f, "{v}"),
            OpResult::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for OpResult {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "unit" => OpResult::Unit,
            "true" => OpResult::Bool(true),
            "false" => OpResult::Bool(false),
            _ => OpResult::Value(s.parse().map_err(|_| SimError::config(format!("bad op result '{s}'")))?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trip() {
        for spec in [
            OpSpec::Read,
            OpSpec::Write(42),
            OpSpec::Cas { expected: 5, new: 7 },
            OpSpec::FetchInc,
            OpSpec::Set,
        ] {
            assert_eq!(spec.to_string().parse::<OpSpec>().unwrap(), spec);
        }
        assert!("cas:1".parse::<OpSpec>().is_err());
        assert!("nope".parse::<OpSpec>().is_err());
    }
}
