use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::CosegError;
use crate::mask::BACKGROUND;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRule {
    pub parsing: String,
    pub pose: String,
    pub fused: String,
}

/// How a parsing map and a pose-part map combine into cosegmentation
/// entries. A pixel contributes to `fused` when its parsing label is
/// `parsing` and its pose label is `pose`. Passthrough parsing labels are
/// copied verbatim regardless of pose; pose passthrough labels are copied
/// only where parsing saw background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRuleTable {
    pub rules: Vec<FusionRule>,
    #[serde(default)]
    pub passthrough: Vec<String>,
    #[serde(default)]
    pub pose_passthrough: Vec<String>,
}

impl FusionRuleTable {
    /// Checks the structural invariants that make fused entries pairwise
    /// disjoint: one rule per fused label, unique (parsing, pose) pairs, and no
    /// overlap between rule inputs and passthrough labels.
    pub fn validate(&self) -> Result<(), CosegError> {
        let bad = |msg: String| Err(CosegError::Rules(msg));
        let mut outputs = HashSet::new();
        let mut pairs = HashSet::new();
        let mut rule_parsing = HashSet::new();
        for r in &self.rules {
            if r.parsing == BACKGROUND || r.pose == BACKGROUND {
                return bad(format!("rule for `{}` uses background as an input", r.fused));
            }
            if !pairs.insert((&r.parsing, &r.pose)) {
                return bad(format!("duplicate rule input ({}, {})", r.parsing, r.pose));
            }
            if !outputs.insert(r.fused.as_str()) {
                return bad(format!("fused label `{}` produced by more than one rule", r.fused));
            }
            rule_parsing.insert(r.parsing.as_str());
        }
        for p in &self.passthrough {
            if p == BACKGROUND {
                return bad("background cannot be a passthrough label".into());
            }
            if rule_parsing.contains(p.as_str()) {
                return bad(format!("passthrough label `{p}` is also a rule input"));
            }
            if !outputs.insert(p.as_str()) {
                return bad(format!("label `{p}` produced twice"));
            }
        }
        for q in &self.pose_passthrough {
            if q == BACKGROUND {
                return bad("background cannot be a pose passthrough label".into());
            }
            if !outputs.insert(q.as_str()) {
                return bad(format!("label `{q}` produced twice"));
            }
        }
        Ok(())
    }

    /// Output labels in entry order.
    pub fn output_labels(&self) -> Vec<String> {
        self.rules
            .iter()
            .map(|r| r.fused.clone())
            .chain(self.passthrough.iter().cloned())
            .chain(self.pose_passthrough.iter().cloned())
            .collect()
    }
}
