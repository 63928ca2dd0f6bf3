use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown lens `{0}`")]
pub struct UnknownLens(pub String);

/// Solution perspectives tried during recovery, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Lens {
    DirectSolution,
    ProofByContradiction,
    MathematicalInduction,
    Contrapositive,
    ConstructiveProof,
    PigeonholePrinciple,
    ExtremalPrinciple,
    Invariant,
    CoordinateTransformation,
    Complexification,
    GraphTransformation,
    ProbabilisticMethod,
}

impl Lens {
    pub const ALL: [Lens; 12] = [
        Lens::DirectSolution,
        Lens::ProofByContradiction,
        Lens::MathematicalInduction,
        Lens::Contrapositive,
        Lens::ConstructiveProof,
        Lens::PigeonholePrinciple,
        Lens::ExtremalPrinciple,
        Lens::Invariant,
        Lens::CoordinateTransformation,
        Lens::Complexification,
        Lens::GraphTransformation,
        Lens::ProbabilisticMethod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lens::DirectSolution => "direct solution",
            Lens::ProofByContradiction => "proof by contradiction",
            Lens::MathematicalInduction => "mathematical induction",
            Lens::Contrapositive => "contrapositive",
            Lens::ConstructiveProof => "constructive proof",
            Lens::PigeonholePrinciple => "pigeonhole principle",
            Lens::ExtremalPrinciple => "extremal principle",
            Lens::Invariant => "invariant",
            Lens::CoordinateTransformation => "coordinate transformation",
            Lens::Complexification => "complexification",
            Lens::GraphTransformation => "graph transformation",
            Lens::ProbabilisticMethod => "probabilistic method",
        }
    }

    /// Position in [`Lens::ALL`].
    pub fn index(self) -> usize {
        Lens::ALL
            .iter()
            .position(|l| *l == self)
            .expect("lens listed")
    }
}

impl fmt::Display for Lens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lens {
    type Err = UnknownLens;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        Lens::ALL
            .iter()
            .copied()
            .find(|l| l.name() == wanted)
            .ok_or_else(|| UnknownLens(s.to_string()))
    }
}

impl TryFrom<String> for Lens {
    type Error = UnknownLens;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Lens> for String {
    fn from(l: Lens) -> Self {
        l.name().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for lens in Lens::ALL {
            assert_eq!(lens.name().parse::<Lens>().unwrap(), lens);
        }
        assert_eq!(
            "Extremal_Principle".parse::<Lens>().unwrap(),
            Lens::ExtremalPrinciple
        );
        assert_eq!(Lens::ExtremalPrinciple.index(), 6);
        assert!("brute force".parse::<Lens>().is_err());
    }
}
