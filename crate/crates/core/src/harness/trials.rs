use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adversary::{AdversaryScript, Behavior};
use super::config::WorldConfig;
use super::ledger::CostLedger;
use super::round::{build_tree, commit_phase, prepare_round, run_round, tamper_inputs, tamper_tree};
use super::verify::{verifier_fanout, Detections};
use super::world::World;
use super::HarnessError;
use crate::aggproto::{build_commit_tree, check_own_leaf, AuditCache, CommitTree, SummationTree, TreeAudit};
use crate::committee::select_disjoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub behavior: Behavior,
    pub trials: usize,
    /// trials in which the expected violation was reported
    pub detected: usize,
    /// trials in which some honest verifier's window covered a tampered leaf
    pub covered: usize,
    /// covered trials that reported the expected violation
    pub detected_when_covered: usize,
    /// trials that reported any other violation kind
    pub other_kinds: usize,
}

impl TrialStats {
    pub fn rate(&self) -> f64 {
        self.detected as f64 / self.trials.max(1) as f64
    }
}

/// Repeats one deviation in a fixed round with fresh tamper targets and
/// fresh verifier randomness per trial; the rest of the round is shared.
pub fn detection_trials(cfg: WorldConfig, b: Behavior, trials: usize) -> Result<TrialStats, HarnessError> {
    let mut world = World::new(cfg)?;
    let mut stats = TrialStats {
        behavior: b,
        trials,
        detected: 0,
        covered: 0,
        detected_when_covered: 0,
        other_kinds: 0,
    };
    if b == Behavior::BiasedCommitteePick {
        return roster_trials(&world, stats);
    }
    if b == Behavior::ReplayPrevRound {
        run_round(&mut world, &AdversaryScript::honest())?;
    }
    let Some(mut prep) = prepare_round(&mut world, &[], true)? else {
        return Err(HarnessError::Protocol("round aborted during setup".into()));
    };
    let t = prep.t;
    let ell = world.derived.ell;
    let commits: Vec<CommitTree> = prep
        .inputs
        .iter()
        .map(|i| build_commit_tree(&i.entries))
        .collect::<Result<_, _>>()?;
    let pit = commit_phase(&mut world, &mut prep, &commits)?;
    let mut base = Vec::with_capacity(ell);
    for (j, inp) in prep.inputs.iter().enumerate() {
        match build_tree(&world, j, inp.leaves.clone(), pit, t, false)? {
            Ok(tree) => base.push(tree),
            Err(reason) => return Err(HarnessError::Protocol(reason)),
        }
    }
    let mut caches: Vec<AuditCache> = vec![AuditCache::default(); ell];
    let expected = b.expected_violation();
    let mut scratch = CostLedger::default();

    for k in 0..trials {
        let mut rng = world.rng(&[b"trial", b.name().as_bytes(), &(k as u64).to_le_bytes()]);
        let j = rng.gen_range(0..ell);
        let mut inp = prep.inputs[j].clone();
        tamper_inputs(&world, &prep, b, j, &mut inp, &mut rng)?;
        let commit = build_commit_tree(&inp.entries)?;
        let mut tree: SummationTree = match build_tree(&world, j, inp.leaves, pit, t, true)? {
            Ok(tree) => tree,
            Err(reason) => return Err(HarnessError::Protocol(reason)),
        };
        tamper_tree(&world, b, &mut tree, &mut rng)?;
        let tampered: Vec<usize> = (0..tree.leaf_count())
            .filter(|&i| base[j].leaves.get(i) != Some(&tree.leaves[i]))
            .collect();

        let mut det = Detections::default();
        for c in prep.contributions.iter().filter(|c| !c.malicious && c.reveals) {
            if let Err(v) = check_own_leaf(&tree, &c.record(j), &world.derived.params) {
                det.record(v, &c.device);
            }
        }
        let mut audits: Vec<TreeAudit> = Vec::with_capacity(ell);
        for (i, cache) in caches.iter_mut().enumerate() {
            if i == j {
                audits.push(TreeAudit::new(&tree, &commit));
            } else {
                audits.push(TreeAudit::with_cache(&base[i], &commits[i], std::mem::take(cache)));
            }
        }
        verifier_fanout(
            &world,
            t,
            k as u64 + 1,
            &mut audits,
            &prep.ctx,
            &mut scratch,
            &mut det,
        );
        let covered = b.is_window_detected() && tampered.iter().any(|&i| audits[j].leaf_checked(i));
        for (i, a) in audits.into_iter().enumerate() {
            if i != j {
                caches[i] = a.into_cache();
            }
        }

        let hit = det.has_kind(expected);
        stats.detected += hit as usize;
        stats.covered += covered as usize;
        stats.detected_when_covered += (covered && hit) as usize;
        stats.other_kinds += det.kinds().iter().any(|&kd| kd != expected) as usize;
    }
    Ok(stats)
}

/// Each trial swaps a random seat of the posted roster; every honest device
/// recomputes sortition from the beacon and compares.
fn roster_trials(world: &World, mut stats: TrialStats) -> Result<TrialStats, HarnessError> {
    let beacon = crate::hash::sha256(b"roster-trials");
    let honest = select_disjoint(&world.ids, &beacon, &world.derived.specs)?;
    let seated: std::collections::BTreeSet<_> = honest.iter().flatten().copied().collect();
    let free: Vec<_> = world.ids.iter().filter(|d| !seated.contains(*d)).copied().collect();
    for k in 0..stats.trials {
        let mut rng = world.rng(&[b"roster-trial", &(k as u64).to_le_bytes()]);
        let mut posted = honest.clone();
        let c = rng.gen_range(0..posted.len());
        let seat = rng.gen_range(0..posted[c].len());
        posted[c][seat] = free[rng.gen_range(0..free.len())];
        let recomputed = select_disjoint(&world.ids, &beacon, &world.derived.specs)?;
        let hit = recomputed != posted;
        stats.detected += hit as usize;
    }
    Ok(stats)
}
