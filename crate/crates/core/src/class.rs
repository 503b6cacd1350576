use std::fmt;

use serde::{Deserialize, Serialize};

/// Binary class of a sample or anchor. Positive means "with links".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Negative,
    Positive,
}

impl Class {
    /// Output-unit index used by the classifier (negative first).
    pub fn index(self) -> usize {
        match self {
            Class::Negative => 0,
            Class::Positive => 1,
        }
    }

    pub fn flip(self) -> Class {
        match self {
            Class::Negative => Class::Positive,
            Class::Positive => Class::Negative,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Negative => "negative",
            Class::Positive => "positive",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
