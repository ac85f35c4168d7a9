use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggproto::ViolationKind;

/// Scripted deviations of the aggregator and the devices colluding with it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// an honest DP-noise member's leaf is replaced by ⊥
    OmitNoiseLeaf,
    /// a committed leaf ciphertext is altered after the commit step
    ModifyLeafCt,
    /// an honest device's revealed input is placed in a colluding device's leaf
    DuplicateInput,
    /// a colluding device submits a scaled ciphertext under its original attestation
    ScalarMultiplyLeaf,
    /// a colluding device submits a ciphertext and attestation from the previous round
    ReplayPrevRound,
    /// fake leaves push the leaf count above M_max
    SybilInflate,
    /// one non-leaf evaluation is altered
    CorruptNonleafEval,
    /// the root ciphertext is altered while the vertex values stay consistent
    CorruptRoot,
    /// the published committee roster deviates from sortition
    BiasedCommitteePick,
}

impl Behavior {
    pub const ALL: [Behavior; 9] = [
        Behavior::OmitNoiseLeaf,
        Behavior::ModifyLeafCt,
        Behavior::DuplicateInput,
        Behavior::ScalarMultiplyLeaf,
        Behavior::ReplayPrevRound,
        Behavior::SybilInflate,
        Behavior::CorruptNonleafEval,
        Behavior::CorruptRoot,
        Behavior::BiasedCommitteePick,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Behavior::OmitNoiseLeaf => "omit-noise-leaf",
            Behavior::ModifyLeafCt => "modify-leaf-ct",
            Behavior::DuplicateInput => "duplicate-input",
            Behavior::ScalarMultiplyLeaf => "scalar-multiply-leaf",
            Behavior::ReplayPrevRound => "replay-prev-round",
            Behavior::SybilInflate => "sybil-inflate",
            Behavior::CorruptNonleafEval => "corrupt-nonleaf-eval",
            Behavior::CorruptRoot => "corrupt-root",
            Behavior::BiasedCommitteePick => "biased-committee-pick",
        }
    }

    /// The violation an honest party reports for this behavior.
    pub fn expected_violation(&self) -> ViolationKind {
        match self {
            Behavior::OmitNoiseLeaf => ViolationKind::MembershipInvalid,
            Behavior::ModifyLeafCt | Behavior::DuplicateInput => ViolationKind::CommitmentMismatch,
            Behavior::ScalarMultiplyLeaf | Behavior::ReplayPrevRound => ViolationKind::AttestationInvalid,
            Behavior::SybilInflate => ViolationKind::CountExceeded,
            Behavior::CorruptNonleafEval => ViolationKind::SumMismatch,
            Behavior::CorruptRoot => ViolationKind::RootEvalMismatch,
            Behavior::BiasedCommitteePick => ViolationKind::RosterMismatch,
        }
    }

    /// Detected only if some honest verifier's spot check covers the tampered leaf.
    pub fn is_window_detected(&self) -> bool {
        matches!(
            self,
            Behavior::ModifyLeafCt
                | Behavior::DuplicateInput
                | Behavior::ScalarMultiplyLeaf
                | Behavior::ReplayPrevRound
        )
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = match s {
            "replay" => "replay-prev-round",
            "corrupt-nonleaf" => "corrupt-nonleaf-eval",
            other => other,
        };
        Behavior::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Behavior::ALL.iter().map(Behavior::name).collect();
                format!("unknown adversary behavior `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryScript {
    #[serde(default)]
    pub behaviors: Vec<Behavior>,
    /// first round in which the behaviors are applied
    #[serde(default = "first_round")]
    pub from_round: u64,
}

fn first_round() -> u64 {
    1
}

impl AdversaryScript {
    pub fn honest() -> Self {
        Self {
            behaviors: Vec::new(),
            from_round: 1,
        }
    }

    pub fn single(b: Behavior) -> Self {
        Self {
            behaviors: vec![b],
            from_round: 1,
        }
    }

    pub fn is_honest(&self) -> bool {
        self.behaviors.is_empty()
    }

    /// Replay needs a previous round, so it never fires in round 1.
    pub fn active(&self, b: Behavior, round_t: u64) -> bool {
        round_t >= self.from_round
            && self.behaviors.contains(&b)
            && !(b == Behavior::ReplayPrevRound && round_t < 2)
    }

    pub fn active_behaviors(&self, round_t: u64) -> Vec<Behavior> {
        let mut v: Vec<Behavior> = self
            .behaviors
            .iter()
            .copied()
            .filter(|&b| self.active(b, round_t))
            .collect();
        v.sort();
        v.dedup();
        v
    }
}
