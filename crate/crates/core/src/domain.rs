//! Label vocabulary, intervention actions and the gold/silver strategy matrix.
//!
//! Variant order is part of the on-disk formats: checkpoint action indices,
//! CSV rows and the one-hot state layout all derive from `index()`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

macro_rules! indexed_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const COUNT: usize = Self::ALL.len();

            #[inline]
            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(index: usize) -> Option<Self> {
                Self::ALL.get(index).copied()
            }

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse_name(s).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown {} `{}`", stringify!($name), s
                    ))
                })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

indexed_enum! {
    /// Cognitive distortion category.
    pub enum DistortionType {
        EmotionalReasoning => "EmotionalReasoning",
        Catastrophizing => "Catastrophizing",
        AllOrNothing => "AllOrNothing",
        Personalization => "Personalization",
        Labeling => "Labeling",
        Overgeneralization => "Overgeneralization",
        MindReading => "MindReading",
        ShouldStatements => "ShouldStatements",
    }
}

indexed_enum! {
    /// Distortion intensity, ordered `Mild < Moderate < Severe`.
    pub enum Intensity {
        Mild => "Mild",
        Moderate => "Moderate",
        Severe => "Severe",
    }
}

indexed_enum! {
    /// Clinical risk level, ordered `Low < Medium < High`.
    pub enum RiskLevel {
        Low => "Low",
        Medium => "Medium",
        High => "High",
    }
}

indexed_enum! {
    /// Intervention strategy. Serialized as its canonical identifier `A0`..`A9`.
    pub enum Action {
        EmpathicValidation => "A0",
        FindingTheGray => "A1",
        ExamineTheEvidence => "A2",
        RealityTesting => "A3",
        DeCatastrophizing => "A4",
        CostBenefitAnalysis => "A5",
        Reattribution => "A6",
        BehaviorVsIdentity => "A7",
        FeelingsVsFacts => "A8",
        CrisisIntervention => "A9",
    }
}

impl DistortionType {
    fn parse_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.name() == s)
    }
}

impl Intensity {
    fn parse_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.name() == s)
    }

    /// One level milder, or `None` below `Mild` (the distortion resolves).
    pub fn milder(self) -> Option<Self> {
        self.index().checked_sub(1).and_then(Self::from_index)
    }

    /// One level more severe, saturating at `Severe`.
    pub fn harsher(self) -> Self {
        Self::from_index(self.index() + 1).unwrap_or(self)
    }
}

impl RiskLevel {
    fn parse_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.name() == s)
    }
}

impl Action {
    /// The single member of the safe-action set.
    pub const SAFE: Action = Action::CrisisIntervention;

    /// Accepts both the identifier (`A4`) and the strategy name (`DeCatastrophizing`).
    fn parse_name(s: &str) -> Option<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s || a.strategy_name() == s)
    }

    pub fn strategy_name(self) -> &'static str {
        match self {
            Action::EmpathicValidation => "EmpathicValidation",
            Action::FindingTheGray => "FindingTheGray",
            Action::ExamineTheEvidence => "ExamineTheEvidence",
            Action::RealityTesting => "RealityTesting",
            Action::DeCatastrophizing => "DeCatastrophizing",
            Action::CostBenefitAnalysis => "CostBenefitAnalysis",
            Action::Reattribution => "Reattribution",
            Action::BehaviorVsIdentity => "BehaviorVsIdentity",
            Action::FeelingsVsFacts => "FeelingsVsFacts",
            Action::CrisisIntervention => "CrisisIntervention",
        }
    }

    #[inline]
    pub fn is_safe(self) -> bool {
        self == Action::SAFE
    }
}

/// How an action relates to a distortion under the strategy matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchStatus {
    Gold,
    Silver,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyEntry {
    pub gold: Action,
    pub silvers: [Action; 2],
}

/// Gold and silver interventions per distortion type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyMatrix {
    entries: [StrategyEntry; DistortionType::COUNT],
}

impl StrategyMatrix {
    pub const STANDARD: StrategyMatrix = {
        use Action::*;
        const fn e(gold: Action, a: Action, b: Action) -> StrategyEntry {
            StrategyEntry {
                gold,
                silvers: [a, b],
            }
        }
        StrategyMatrix {
            entries: [
                // EmotionalReasoning
                e(FeelingsVsFacts, EmpathicValidation, RealityTesting),
                // Catastrophizing
                e(DeCatastrophizing, EmpathicValidation, ExamineTheEvidence),
                // AllOrNothing
                e(FindingTheGray, FeelingsVsFacts, ExamineTheEvidence),
                // Personalization
                e(Reattribution, EmpathicValidation, RealityTesting),
                // Labeling
                e(BehaviorVsIdentity, EmpathicValidation, CostBenefitAnalysis),
                // Overgeneralization
                e(ExamineTheEvidence, EmpathicValidation, FindingTheGray),
                // MindReading
                e(RealityTesting, EmpathicValidation, FeelingsVsFacts),
                // ShouldStatements
                e(CostBenefitAnalysis, EmpathicValidation, BehaviorVsIdentity),
            ],
        }
    };

    pub fn entry(&self, d: DistortionType) -> StrategyEntry {
        self.entries[d.index()]
    }

    pub fn gold(&self, d: DistortionType) -> Action {
        self.entries[d.index()].gold
    }

    pub fn silvers(&self, d: DistortionType) -> [Action; 2] {
        self.entries[d.index()].silvers
    }

    pub fn status(&self, d: DistortionType, action: Action) -> MatchStatus {
        let entry = self.entries[d.index()];
        if action == entry.gold {
            MatchStatus::Gold
        } else if entry.silvers.contains(&action) {
            MatchStatus::Silver
        } else {
            MatchStatus::Mismatch
        }
    }
}

impl Default for StrategyMatrix {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub fn gold_strategy(d: DistortionType) -> Action {
    StrategyMatrix::STANDARD.gold(d)
}

pub fn silver_strategies(d: DistortionType) -> [Action; 2] {
    StrategyMatrix::STANDARD.silvers(d)
}

/// Ground-truth labels of a seeker state. `distortion: None` is the
/// no-distortion control case, in which `intensity` carries no meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CognitiveLabels {
    pub distortion: Option<DistortionType>,
    pub intensity: Intensity,
    pub risk: RiskLevel,
}

impl CognitiveLabels {
    pub fn new(distortion: DistortionType, intensity: Intensity, risk: RiskLevel) -> Self {
        Self {
            distortion: Some(distortion),
            intensity,
            risk,
        }
    }

    pub fn without_distortion(risk: RiskLevel) -> Self {
        Self {
            distortion: None,
            intensity: Intensity::Mild,
            risk,
        }
    }

    #[inline]
    pub fn is_high_risk(&self) -> bool {
        self.risk == RiskLevel::High
    }

    /// Equality that ignores intensity when no distortion is present.
    pub fn same_state(&self, other: &Self) -> bool {
        self.distortion == other.distortion
            && self.risk == other.risk
            && (self.distortion.is_none() || self.intensity == other.intensity)
    }

    /// Every distinguishable label combination: 8 x 3 x 3 with a distortion plus 3 without.
    pub fn all_states() -> Vec<CognitiveLabels> {
        let mut out = Vec::with_capacity(75);
        for &d in DistortionType::ALL {
            for &i in Intensity::ALL {
                for &r in RiskLevel::ALL {
                    out.push(CognitiveLabels::new(d, i, r));
                }
            }
        }
        for &r in RiskLevel::ALL {
            out.push(CognitiveLabels::without_distortion(r));
        }
        out
    }
}
