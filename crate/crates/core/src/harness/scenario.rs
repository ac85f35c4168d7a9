use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use super::config::WorldConfig;
use super::ledger::CostLedger;
use super::round::{run_round, RoundReport};
use super::world::World;
use super::HarnessError;

#[derive(Clone, Debug, Default)]
pub struct ScenarioOptions {
    /// where `round_<t>.json`, `ledger.csv` and the board are written
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub reports: Vec<RoundReport>,
    /// self-check failures; empty when every round behaved as expected
    pub failures: Vec<String>,
    pub board_digest: String,
}

/// What `--check` enforces on one round.
fn check_round(r: &RoundReport) -> Vec<String> {
    let mut out = Vec::new();
    let t = r.round_t;
    if let Some(reason) = &r.aborted {
        if !reason.starts_with("privacy budget") {
            out.push(format!("round {t}: aborted: {reason}"));
        }
        return out;
    }
    if r.adversary.is_empty() {
        if !r.detections.is_empty() {
            let kinds: Vec<_> = r.detections.iter().map(|d| d.kind.as_str()).collect();
            out.push(format!("round {t}: honest round reported {}", kinds.join(", ")));
        }
        if let Some(a) = &r.aggregate {
            if !a.exact_match {
                out.push(format!("round {t}: decrypted aggregate differs from the plaintext sum"));
            }
            if !a.round_slot_ok {
                out.push(format!("round {t}: round slot of the aggregate is wrong"));
            }
            if a.max_abs_error > a.tolerance {
                out.push(format!(
                    "round {t}: aggregate error {} above tolerance {}",
                    a.max_abs_error, a.tolerance
                ));
            }
        }
    }
    for b in &r.undetected {
        out.push(format!("round {t}: {b} went undetected"));
    }
    out
}

pub fn run_scenario(cfg: WorldConfig, opts: &ScenarioOptions) -> Result<ScenarioOutcome, HarnessError> {
    let script = cfg.adversary.clone();
    let rounds = cfg.rounds;
    let mut world = World::new(cfg)?;
    let mut reports = Vec::with_capacity(rounds as usize);
    let mut failures = Vec::new();
    let mut csv = String::from(CostLedger::CSV_HEADER);
    csv.push('\n');
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), world.cfg.to_json())?;
    }
    for _ in 0..rounds {
        let r = run_round(&mut world, &script)?;
        failures.extend(check_round(&r));
        csv.push_str(&r.ledger.csv_rows(r.round_t));
        if let Some(dir) = &opts.out {
            let json = serde_json::to_string_pretty(&r).expect("report serializes");
            fs::write(dir.join(format!("round_{}.json", r.round_t)), json + "\n")?;
        }
        reports.push(r);
    }
    if let Some(dir) = &opts.out {
        fs::write(dir.join("ledger.csv"), &csv)?;
        world.board.save(&dir.join("board.bin"))?;
        let f = fs::File::create(dir.join("board.jsonl"))?;
        world.board.dump_json(BufWriter::new(f))?;
    }
    Ok(ScenarioOutcome {
        reports,
        failures,
        board_digest: crate::hash::hex(&world.board.digest()),
    })
}
