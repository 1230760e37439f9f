//! Rating vocabulary and the per-case blinding assignment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// Per-slice verdict on one segmentation of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingCategory {
    Optimal,
    TooBig,
    TooSmall,
    WrongOrgan,
    FalseNegative,
    FalsePositive,
    TrueNegative,
}

impl RatingCategory {
    pub const ALL: [RatingCategory; 7] = [
        RatingCategory::Optimal,
        RatingCategory::TooBig,
        RatingCategory::TooSmall,
        RatingCategory::WrongOrgan,
        RatingCategory::FalseNegative,
        RatingCategory::FalsePositive,
        RatingCategory::TrueNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RatingCategory::Optimal => "optimal",
            RatingCategory::TooBig => "too_big",
            RatingCategory::TooSmall => "too_small",
            RatingCategory::WrongOrgan => "wrong_organ",
            RatingCategory::FalseNegative => "false_negative",
            RatingCategory::FalsePositive => "false_positive",
            RatingCategory::TrueNegative => "true_negative",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Four-way view; a wrong-organ marking counts as a false positive.
    pub fn coarse(self) -> Coarse {
        match self {
            RatingCategory::Optimal | RatingCategory::TooBig | RatingCategory::TooSmall => {
                Coarse::TruePositive
            }
            RatingCategory::WrongOrgan | RatingCategory::FalsePositive => Coarse::FalsePositive,
            RatingCategory::FalseNegative => Coarse::FalseNegative,
            RatingCategory::TrueNegative => Coarse::TrueNegative,
        }
    }

    /// The slice really contains the class.
    pub fn implies_presence(self) -> bool {
        matches!(
            self,
            RatingCategory::Optimal
                | RatingCategory::TooBig
                | RatingCategory::TooSmall
                | RatingCategory::FalseNegative
        )
    }

    /// The rated segmentation marked something on the slice.
    pub fn implies_marking(self) -> bool {
        matches!(
            self,
            RatingCategory::Optimal
                | RatingCategory::TooBig
                | RatingCategory::TooSmall
                | RatingCategory::FalsePositive
                | RatingCategory::WrongOrgan
        )
    }
}

impl fmt::Display for RatingCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coarse {
    TrueNegative,
    TruePositive,
    FalseNegative,
    FalsePositive,
}

impl Coarse {
    pub const ALL: [Coarse; 4] = [
        Coarse::TrueNegative,
        Coarse::TruePositive,
        Coarse::FalseNegative,
        Coarse::FalsePositive,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComparisonChoice {
    A,
    B,
    #[serde(rename = "equal")]
    Equal,
}

impl ComparisonChoice {
    pub fn name(self) -> &'static str {
        match self {
            ComparisonChoice::A => "A",
            ComparisonChoice::B => "B",
            ComparisonChoice::Equal => "equal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "A" => Some(ComparisonChoice::A),
            "B" => Some(ComparisonChoice::B),
            "equal" => Some(ComparisonChoice::Equal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    Scar,
    Mvo,
}

impl TargetClass {
    pub const ALL: [TargetClass; 2] = [TargetClass::Scar, TargetClass::Mvo];

    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Scar => "scar",
            TargetClass::Mvo => "mvo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "scar" => Some(TargetClass::Scar),
            "mvo" => Some(TargetClass::Mvo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::A, Arm::B];

    pub fn name(self) -> &'static str {
        match self {
            Arm::A => "A",
            Arm::B => "B",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "A" => Some(Arm::A),
            "B" => Some(Arm::B),
            _ => None,
        }
    }
}

/// Origin of a segmentation. Only admin-facing outputs carry it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Manual,
    Automatic,
}

impl Method {
    pub fn other(self) -> Method {
        match self {
            Method::Manual => Method::Automatic,
            Method::Automatic => Method::Manual,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Manual => "manual",
            Method::Automatic => "automatic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "manual" => Some(Method::Manual),
            "automatic" => Some(Method::Automatic),
            _ => None,
        }
    }
}

/// Which method is shown as segmentation A for one patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseAssignment {
    pub patient_id: String,
    pub method_of_a: Method,
    pub method_of_b: Method,
    pub seed: u64,
    /// Hex SHA-256 of the seed and patient id the choice was taken from.
    pub digest: String,
}

impl CaseAssignment {
    /// Derived from `SHA-256(seed as little-endian u64 || patient_id)`;
    /// the low bit of the first digest byte picks the method of arm A.
    pub fn derive(seed: u64, patient_id: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(patient_id.as_bytes());
        let digest = hasher.finalize();
        let method_of_a = if digest[0] & 1 == 0 {
            Method::Manual
        } else {
            Method::Automatic
        };
        CaseAssignment {
            patient_id: patient_id.to_string(),
            method_of_a,
            method_of_b: method_of_a.other(),
            seed,
            digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }

    pub fn method_of(&self, arm: Arm) -> Method {
        match arm {
            Arm::A => self.method_of_a,
            Arm::B => self.method_of_b,
        }
    }

    pub fn arm_of(&self, method: Method) -> Arm {
        if self.method_of_a == method {
            Arm::A
        } else {
            Arm::B
        }
    }

    /// Method preferred by a comparison, `None` for "equal".
    pub fn preferred(&self, choice: ComparisonChoice) -> Option<Method> {
        match choice {
            ComparisonChoice::A => Some(self.method_of_a),
            ComparisonChoice::B => Some(self.method_of_b),
            ComparisonChoice::Equal => None,
        }
    }
}
