//! Shared fixtures and brute-force oracles for the integration suites.
//!
//! Everything here recomputes from raw ledger rows and the scenario file,
//! without going through the library's own aggregation code.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use chrono::NaiveDate;
use ecash_sim::config::ScenarioSpec;
use ecash_sim::detection::{Domain, Window};
use ecash_sim::economy::ORIGINATOR;
use ecash_sim::ledger_io::{load_scenario, scenario_digest, LedgerHeader, LedgerWriter, FORMAT_VERSION};
use ecash_sim::purse::Tier;
use ecash_sim::record::{EventSet, PurseId, TransactionRecord, TxType};
use ecash_sim::txgen::{run, RunOutput};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn load(name: &str) -> ScenarioSpec {
    let path = scenario_dir().join(format!("{name}.toml"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every scenario shipped with the crate, by file stem.
pub fn corpus() -> Vec<(String, ScenarioSpec)> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "toml").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

pub fn run_vec(spec: &ScenarioSpec) -> (RunOutput, Vec<TransactionRecord>) {
    let mut records = Vec::new();
    let out = run(spec, &mut records).expect("scenario runs");
    (out, records)
}

/// Runs a scenario straight into a hashing ledger writer.
pub fn run_digest(spec: &ScenarioSpec) -> (String, RunOutput) {
    let header = LedgerHeader {
        format_version: FORMAT_VERSION,
        scenario_digest: scenario_digest(spec),
        seed: spec.simulator.seed,
        start_date: spec.simulator.start_date,
        duration_days: spec.simulator.duration_days,
    };
    let mut w = LedgerWriter::new(std::io::sink(), &header).unwrap();
    let out = run(spec, &mut w).expect("scenario runs");
    (w.finish().unwrap(), out)
}

pub fn day_index(start: NaiveDate, r: &TransactionRecord) -> usize {
    (r.timestamp.date - start).num_days() as usize
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CtlCheck {
    pub counted_credits: u64,
    pub locks: u64,
    pub read_backs: u64,
    pub finals: u64,
}

#[derive(Clone, Copy)]
struct Ctl {
    acc: i64,
    locked: bool,
}

/// Replays every consumer's credit-turnover accumulator from the ledger.
///
/// Rules: an executed credit to an uncompromised consumer counts unless the
/// payer is a member or the originator. The credit that takes the total past
/// the limit still lands and the purse locks. A recustomization reads the
/// total back and zeroes it. Unlocked purses of segments with a reset
/// interval are zeroed at the start of every `interval`-th day.
///
/// Checks lock events, read-backs and the end-of-run accumulators of live
/// purses. Scenarios with C3 commands are refused, since those change the
/// on-chip state without a value record.
pub fn replay_ctl(spec: &ScenarioSpec, out: &RunOutput, records: &[TransactionRecord]) -> Result<CtlCheck, String> {
    if !spec.c3.is_empty() {
        return Err("C3 commands alter CTL state".into());
    }
    let pop = &out.population;
    let seg_of = |id: PurseId| &spec.segments[pop.get(id).segment.expect("non-originator purse")];
    let start = spec.simulator.start_date;
    let mut state: HashMap<PurseId, Ctl> = HashMap::new();
    let mut check = CtlCheck::default();
    let mut day = 0usize;

    let reset_through = |state: &mut HashMap<PurseId, Ctl>, from: usize, to: usize| {
        for d in from + 1..=to {
            for (id, s) in state.iter_mut() {
                let every = seg_of(*id).ctl_reset_interval_days.unwrap_or(0) as usize;
                if every > 0 && d % every == 0 && !s.locked {
                    s.acc = 0;
                }
            }
        }
    };

    for r in records {
        let d = day_index(start, r);
        if d < day {
            return Err(format!("tx {} goes back in time", r.tx_id));
        }
        reset_through(&mut state, day, d);
        day = d;
        if r.payee_class.tier() != Tier::Consumer || r.payee_id == ORIGINATOR {
            continue;
        }
        let seg = seg_of(r.payee_id);
        let s = state.entry(r.payee_id).or_insert(Ctl { acc: 0, locked: false });
        let lock_ev = r.onchip_events.contains(EventSet::CTL_EXCEEDED);
        match r.tx_type {
            TxType::Recustomization => {
                if r.amount.minor() != s.acc {
                    return Err(format!(
                        "tx {}: purse {} read back {} but the replay holds {}",
                        r.tx_id, r.payee_id, r.amount, s.acc
                    ));
                }
                *s = Ctl { acc: 0, locked: false };
                check.read_backs += 1;
            }
            _ if r.moves_value() => {
                let payer = r.payer_class.map(|c| c.tier());
                let counted = !seg.counterfeit && !matches!(payer, Some(Tier::Member | Tier::Originator));
                let mut expect_lock = false;
                if counted {
                    if s.locked {
                        return Err(format!("tx {}: credit to locked purse {}", r.tx_id, r.payee_id));
                    }
                    s.acc += r.amount.minor();
                    check.counted_credits += 1;
                    if s.acc > seg.ctl_limit.minor() {
                        s.locked = true;
                        expect_lock = true;
                        check.locks += 1;
                    }
                }
                if lock_ev != expect_lock {
                    return Err(format!(
                        "tx {}: purse {} lock event {lock_ev}, replay says {expect_lock} at {}",
                        r.tx_id, r.payee_id, s.acc
                    ));
                }
            }
            _ if lock_ev => return Err(format!("tx {}: lock on a record that moves nothing", r.tx_id)),
            _ => {}
        }
    }
    reset_through(&mut state, day, spec.simulator.duration_days as usize - 1);

    for slot in pop
        .purses
        .iter()
        .filter(|s| s.alive && s.state.class.tier() == Tier::Consumer)
    {
        let id = slot.state.purse_id;
        let want = state.get(&id).map_or(0, |s| s.acc);
        if slot.state.ctl_accumulated.minor() != want {
            return Err(format!(
                "purse {id}: final accumulator {} but the replay holds {want}",
                slot.state.ctl_accumulated
            ));
        }
        check.finals += 1;
    }
    Ok(check)
}

/// Daily executed redemption, straight from the rows.
pub fn brute_redemption(records: &[TransactionRecord], start: NaiveDate, days: usize) -> Vec<i64> {
    let mut v = vec![0; days];
    for r in records {
        if r.tx_type == TxType::Redemption && r.status.is_executed() {
            v[day_index(start, r)] += r.amount.minor();
        }
    }
    v
}

/// Per merchant: the day it first shows up in any row, and its executed
/// deposits to members on each day from then on.
pub fn brute_merchant_deposits(
    records: &[TransactionRecord],
    start: NaiveDate,
    days: usize,
) -> BTreeMap<PurseId, (usize, Vec<i64>)> {
    let mut first: BTreeMap<PurseId, usize> = BTreeMap::new();
    let mut sums: BTreeMap<PurseId, Vec<i64>> = BTreeMap::new();
    for r in records {
        let d = day_index(start, r);
        let parties = [(r.payer_id, r.payer_class), (Some(r.payee_id), Some(r.payee_class))];
        for (id, class) in parties {
            if let (Some(id), Some(c)) = (id, class) {
                if c.tier() == Tier::Merchant {
                    first.entry(id).or_insert(d);
                }
            }
        }
        let merchant_to_member =
            r.payer_class.map(|c| c.tier()) == Some(Tier::Merchant) && r.payee_class.tier() == Tier::Member;
        if r.tx_type == TxType::Deposit && r.status.is_executed() && merchant_to_member {
            sums.entry(r.payer_id.unwrap()).or_insert_with(|| vec![0; days])[d] += r.amount.minor();
        }
    }
    first
        .into_iter()
        .map(|(id, f)| {
            let v = sums.remove(&id).unwrap_or_else(|| vec![0; days]);
            (id, (f, v[f..].to_vec()))
        })
        .collect()
}

/// Statistics one rolling model should report for day `d`.
#[derive(Debug, Clone, Copy)]
pub struct Expected {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
}

/// Textbook recomputation: sum-of-squares variance with the n−1 divisor
/// over the trailing days, the previous day as the daily reference, and a
/// floor of 1% of |mean| but at least one unit (0.01 in log space).
pub fn brute_stats(values: &[i64], d: usize, window: Window, domain: Domain, k: f64) -> Option<Expected> {
    let h = match window {
        Window::Daily | Window::Weekly => 7,
        Window::Monthly => 30,
    };
    if d < h || d >= values.len() {
        return None;
    }
    let f = |v: i64| match domain {
        Domain::Linear => v as f64,
        Domain::Log => (1.0 + v.max(0) as f64).ln(),
    };
    let hist: Vec<f64> = values[d - h..d].iter().map(|v| f(*v)).collect();
    let n = hist.len() as f64;
    let s1: f64 = hist.iter().sum();
    let s2: f64 = hist.iter().map(|x| x * x).sum();
    let avg = s1 / n;
    let sd = ((s2 - n * avg * avg) / (n - 1.0)).max(0.0).sqrt();
    let mean = if window == Window::Daily { hist[h - 1] } else { avg };
    let unit = if domain == Domain::Linear { 1.0 } else { 0.01 };
    let std = sd.max((mean.abs() / 100.0).max(unit));
    Some(Expected {
        x: f(values[d]),
        mean,
        std,
        threshold: mean + k * std,
    })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
