use std::fmt;
use std::str::FromStr;

use gradguess::{GuessMethod, GuessOptions};

use crate::error::{config_err, HarnessError};

/// What produces a training update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Backprop,
    Guess(GuessMethod),
}

impl Method {
    pub fn describe(&self, opts: &GuessOptions) -> String {
        match self {
            Method::Backprop => "backprop".into(),
            Method::Guess(g) => opts.describe(g),
        }
    }

    /// True if the update path may legitimately call the oracle.
    pub fn oracle_in_update(&self) -> bool {
        match self {
            Method::Backprop => true,
            Method::Guess(g) => g.uses_oracle(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Backprop => f.write_str("backprop"),
            Method::Guess(g) => g.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "backprop" {
            return Ok(Method::Backprop);
        }
        s.parse::<GuessMethod>()
            .map(Method::Guess)
            .map_err(|e| config_err(format!("method {s:?}: {e}")))
    }
}

pub fn parse_methods(list: &[String]) -> Result<Vec<Method>, HarnessError> {
    list.iter().map(|s| s.parse()).collect()
}
