use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Generator,
    Verifier,
    DpNoise,
    Master,
    Decryption,
    Aggregator,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Generator,
        Role::Verifier,
        Role::DpNoise,
        Role::Master,
        Role::Decryption,
        Role::Aggregator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Verifier => "verifier",
            Role::DpNoise => "dp-noise",
            Role::Master => "master",
            Role::Decryption => "decryption",
            Role::Aggregator => "aggregator",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCost {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub ring_mul: u64,
    pub hash: u64,
    pub exp: u64,
    pub verify: u64,
}

impl RoleCost {
    fn merge(&mut self, o: &RoleCost) {
        self.bytes_up += o.bytes_up;
        self.bytes_down += o.bytes_down;
        self.ring_mul += o.ring_mul;
        self.hash += o.hash;
        self.exp += o.exp;
        self.verify += o.verify;
    }

    pub fn is_zero(&self) -> bool {
        *self == RoleCost::default()
    }
}

/// Per-role transfer and operation counters. Each wire transfer is booked on
/// the device-side role that sends or receives it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub roles: BTreeMap<Role, RoleCost>,
    /// finer-grained counters, e.g. `verifier.nonleaf_bytes`
    pub items: BTreeMap<String, u64>,
}

impl CostLedger {
    pub fn role(&mut self, r: Role) -> &mut RoleCost {
        self.roles.entry(r).or_default()
    }

    pub fn get(&self, r: Role) -> RoleCost {
        self.roles.get(&r).copied().unwrap_or_default()
    }

    pub fn up(&mut self, r: Role, bytes: usize) {
        self.role(r).bytes_up += bytes as u64;
    }

    pub fn down(&mut self, r: Role, bytes: usize) {
        self.role(r).bytes_down += bytes as u64;
    }

    pub fn item(&mut self, key: &str, n: u64) {
        *self.items.entry(key.to_string()).or_default() += n;
    }

    pub fn item_value(&self, key: &str) -> u64 {
        self.items.get(key).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (r, c) in &other.roles {
            self.role(*r).merge(c);
        }
        for (k, v) in &other.items {
            *self.items.entry(k.clone()).or_default() += v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.roles.values().all(RoleCost::is_zero) && self.items.values().all(|&v| v == 0)
    }

    pub const CSV_HEADER: &'static str = "round,role,bytes_up,bytes_down,ring_mul,hash,exp,verify";

    /// One CSV row per role, every role listed.
    pub fn csv_rows(&self, round_t: u64) -> String {
        let mut out = String::new();
        for r in Role::ALL {
            let c = self.get(r);
            let _ = writeln!(
                out,
                "{round_t},{},{},{},{},{},{},{}",
                r.name(),
                c.bytes_up,
                c.bytes_down,
                c.ring_mul,
                c.hash,
                c.exp,
                c.verify
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_and_csv() {
        let mut a = CostLedger::default();
        assert!(a.is_empty());
        a.up(Role::Generator, 10);
        a.role(Role::Verifier).verify += 2;
        a.item("verifier.nonleaf_bytes", 32);
        let mut b = a.clone();
        b.merge(&a);
        assert_eq!(b.get(Role::Generator).bytes_up, 20);
        assert_eq!(b.item_value("verifier.nonleaf_bytes"), 64);
        let csv = b.csv_rows(3);
        assert_eq!(csv.lines().count(), Role::ALL.len());
        assert!(csv.starts_with("3,generator,20,0,"));
    }
}
