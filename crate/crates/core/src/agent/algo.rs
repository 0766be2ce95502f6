//! Named high-level algorithm variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Exploration {
    EpsilonGreedy,
    Noisy,
    Both,
}

impl Exploration {
    pub fn uses_epsilon(self) -> bool {
        matches!(self, Exploration::EpsilonGreedy | Exploration::Both)
    }

    pub fn uses_noise(self) -> bool {
        matches!(self, Exploration::Noisy | Exploration::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Dueling double DQN with prioritized replay and no buffer rewrite.
    #[serde(rename = "D3QN")]
    D3qn,
    /// Success duplication without the outcome reward offset.
    #[serde(rename = "NoModify")]
    NoModify,
    /// Efficient buffer, dueling head, single (non-double) targets.
    #[serde(rename = "EDQN1")]
    Edqn1,
    /// Efficient buffer, double targets, no dueling head.
    #[serde(rename = "EDQN2")]
    Edqn2,
    #[serde(rename = "EBQ-G")]
    EbqG,
    #[serde(rename = "EBQ-N")]
    EbqN,
    #[serde(rename = "EBQ-GN")]
    EbqGn,
    /// Uniform choice among legal actions; never trained.
    #[serde(rename = "Random")]
    Random,
}

/// Switches that distinguish the variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgoTraits {
    pub efficient_buffer: bool,
    pub reward_modify: bool,
    pub double: bool,
    pub dueling: bool,
    pub exploration: Exploration,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::D3qn,
        Algorithm::NoModify,
        Algorithm::Edqn1,
        Algorithm::Edqn2,
        Algorithm::EbqG,
        Algorithm::EbqN,
        Algorithm::EbqGn,
        Algorithm::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::D3qn => "D3QN",
            Algorithm::NoModify => "NoModify",
            Algorithm::Edqn1 => "EDQN1",
            Algorithm::Edqn2 => "EDQN2",
            Algorithm::EbqG => "EBQ-G",
            Algorithm::EbqN => "EBQ-N",
            Algorithm::EbqGn => "EBQ-GN",
            Algorithm::Random => "Random",
        }
    }

    pub fn is_learning(self) -> bool {
        self != Algorithm::Random
    }

    pub fn traits(self) -> AlgoTraits {
        let ebq = AlgoTraits {
            efficient_buffer: true,
            reward_modify: true,
            double: true,
            dueling: true,
            exploration: Exploration::EpsilonGreedy,
        };
        match self {
            Algorithm::D3qn => AlgoTraits {
                efficient_buffer: false,
                reward_modify: false,
                ..ebq
            },
            Algorithm::NoModify => AlgoTraits {
                reward_modify: false,
                ..ebq
            },
            Algorithm::Edqn1 => AlgoTraits { double: false, ..ebq },
            Algorithm::Edqn2 => AlgoTraits { dueling: false, ..ebq },
            Algorithm::EbqG | Algorithm::Random => ebq,
            Algorithm::EbqN => AlgoTraits {
                exploration: Exploration::Noisy,
                ..ebq
            },
            Algorithm::EbqGn => AlgoTraits {
                exploration: Exploration::Both,
                ..ebq
            },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase().replace('-', "") == key)
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("unknown algorithm `{s}` (expected one of {})", names.join(", "))
            })
    }
}
