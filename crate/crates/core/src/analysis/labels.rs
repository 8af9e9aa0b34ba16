use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeCategory {
    #[serde(rename = "Abstraction_Failure-Operator_Inference")]
    OperatorInference,
    #[serde(rename = "Abstraction_Failure-Scope_Condition")]
    ScopeCondition,
    #[serde(rename = "Reasoning_Failure-Procedural_Error")]
    ProceduralError,
    #[serde(rename = "Format_Or_Collapse-Reasoning_Collapse")]
    ReasoningCollapse,
    #[serde(rename = "Success-Type_A-Surface_Fitting")]
    SurfaceFitting,
    #[serde(rename = "Success-Type_B-Inferior_Rule")]
    InferiorRule,
    #[serde(rename = "Success-Type_C-Correct_Generalization")]
    CorrectGeneralization,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 7] = [
        OutcomeCategory::OperatorInference,
        OutcomeCategory::ScopeCondition,
        OutcomeCategory::ProceduralError,
        OutcomeCategory::ReasoningCollapse,
        OutcomeCategory::SurfaceFitting,
        OutcomeCategory::InferiorRule,
        OutcomeCategory::CorrectGeneralization,
    ];

    pub fn is_success(self) -> bool {
        matches!(
            self,
            OutcomeCategory::SurfaceFitting | OutcomeCategory::InferiorRule | OutcomeCategory::CorrectGeneralization
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeCategory::OperatorInference => "Abstraction_Failure-Operator_Inference",
            OutcomeCategory::ScopeCondition => "Abstraction_Failure-Scope_Condition",
            OutcomeCategory::ProceduralError => "Reasoning_Failure-Procedural_Error",
            OutcomeCategory::ReasoningCollapse => "Format_Or_Collapse-Reasoning_Collapse",
            OutcomeCategory::SurfaceFitting => "Success-Type_A-Surface_Fitting",
            OutcomeCategory::InferiorRule => "Success-Type_B-Inferior_Rule",
            OutcomeCategory::CorrectGeneralization => "Success-Type_C-Correct_Generalization",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name.trim())
    }
}

impl fmt::Display for OutcomeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReasoningStyle {
    #[serde(rename = "Style-Direct_Deduction")]
    DirectDeduction,
    #[serde(rename = "Style-Hypothesis_Testing")]
    HypothesisTesting,
    #[serde(rename = "Style-Chaotic_Guessing")]
    ChaoticGuessing,
}

impl ReasoningStyle {
    pub const ALL: [ReasoningStyle; 3] = [
        ReasoningStyle::DirectDeduction,
        ReasoningStyle::HypothesisTesting,
        ReasoningStyle::ChaoticGuessing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReasoningStyle::DirectDeduction => "Style-Direct_Deduction",
            ReasoningStyle::HypothesisTesting => "Style-Hypothesis_Testing",
            ReasoningStyle::ChaoticGuessing => "Style-Chaotic_Guessing",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name.trim())
    }
}

/// The analyst's reading of one judged record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub outcome_category: OutcomeCategory,
    /// Absent when the analyst never produced a usable reply.
    pub reasoning_style: Option<ReasoningStyle>,
    pub justification: String,
    /// The first reply broke the correct/incorrect path split and was re-asked.
    #[serde(default)]
    pub reasked: bool,
    /// No valid label after the re-ask; the category is a default.
    #[serde(default)]
    pub analyst_failed: bool,
}
