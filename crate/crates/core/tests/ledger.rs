//! Invariants checked by replaying ledger rows one at a time.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use ecash_sim::config::ScenarioSpec;
use ecash_sim::economy::ORIGINATOR;
use ecash_sim::purse::{PurseClass, Tier};
use ecash_sim::record::{DenyReason, EventSet, PurseId, TransactionRecord, TxStatus, TxType};
use ecash_sim::txgen::RunOutput;

use common::{load, run_vec};

fn fixtures() -> Vec<(&'static str, ScenarioSpec, RunOutput, Vec<TransactionRecord>)> {
    ["small-attack", "countermeasure"]
        .into_iter()
        .map(|n| {
            let spec = load(n);
            let (out, recs) = run_vec(&spec);
            (n, spec, out, recs)
        })
        .collect()
}

/// Flows a holder may start, by tier, before scenario overrides.
fn base_rule(payer: Tier, payee: Tier, tx: TxType) -> bool {
    use Tier::*;
    use TxType::*;
    matches!(
        (payer, payee, tx),
        (Consumer, Consumer, ConsumerToConsumer)
            | (Consumer, Member, Deposit)
            | (Member, Consumer, Withdrawal)
            | (Consumer, Merchant, Purchase)
            | (Merchant, Consumer, Refund)
            | (Merchant, Member, Deposit)
            | (Originator, Member, Issuance)
            | (Member, Originator, Redemption)
            | (Member, Consumer, Recustomization)
    ) || tx == C3Delivery
}

fn permitted(spec: &ScenarioSpec, payer: PurseClass, payee: PurseClass, tx: TxType) -> bool {
    // Later overrides win.
    spec.class_matrix
        .iter()
        .rev()
        .find(|o| o.tx_type == tx && o.payer.matches(payer) && o.payee.matches(payee))
        .map_or_else(|| base_rule(payer.tier(), payee.tier(), tx), |o| o.allowed)
}

#[test]
fn rows_are_ordered_and_ids_unique() {
    for (name, _, out, recs) in fixtures() {
        assert_eq!(recs.len() as u64, out.records, "{name}");
        for w in recs.windows(2) {
            assert!(
                w[0].tx_id < w[1].tx_id,
                "{name}: ids {} then {}",
                w[0].tx_id,
                w[1].tx_id
            );
            assert!(
                w[0].timestamp.tertiary_period <= w[1].timestamp.tertiary_period,
                "{name}: tx {} is earlier than its predecessor",
                w[1].tx_id
            );
        }
    }
}

#[test]
fn class_screening_matches_the_matrix() {
    let mut denied_by_class = 0;
    for (name, spec, _, recs) in fixtures() {
        for r in &recs {
            let Some(payer) = r.payer_class else {
                assert_eq!(r.tx_type, TxType::CounterfeitInjection, "{name}: tx {}", r.tx_id);
                continue;
            };
            let ok = permitted(&spec, payer, r.payee_class, r.tx_type);
            match r.status {
                TxStatus::Executed => assert!(ok, "{name}: tx {} executed but not permitted", r.tx_id),
                TxStatus::Denied(DenyReason::ClassNotPermitted) => {
                    assert!(!ok, "{name}: tx {} refused but permitted", r.tx_id);
                    denied_by_class += 1;
                }
                TxStatus::Denied(_) => assert!(ok, "{name}: tx {} screened after a class refusal", r.tx_id),
            }
        }
    }
    // The countermeasure scenario turns off kiosk refunds.
    assert!(denied_by_class > 0);
}

#[test]
fn balances_chain_and_denials_move_nothing() {
    for (name, spec, out, recs) in fixtures() {
        let mut bal: BTreeMap<PurseId, i64> = BTreeMap::new();
        for r in &recs {
            let amount = r.amount.minor();
            let moves = r.moves_value();
            if !r.status.is_executed() {
                assert_eq!(r.taint_amount.minor(), 0, "{name}: tx {}", r.tx_id);
                assert!(!r.counterfeit_taint, "{name}: tx {}", r.tx_id);
                assert!(r.onchip_events.is_empty(), "{name}: tx {}", r.tx_id);
            }
            if let (Some(id), Some(after)) = (r.payer_id, r.payer_balance_after) {
                if id != ORIGINATOR {
                    let b = bal.entry(id).or_insert(0);
                    if moves {
                        *b -= amount;
                    }
                    assert_eq!(*b, after.minor(), "{name}: payer {id} after tx {}", r.tx_id);
                }
            }
            if r.payee_id != ORIGINATOR {
                let b = bal.entry(r.payee_id).or_insert(0);
                if moves {
                    *b += amount;
                }
                assert_eq!(
                    *b,
                    r.payee_balance_after.minor(),
                    "{name}: payee {} after tx {}",
                    r.payee_id,
                    r.tx_id
                );
            }
            assert!(r.taint_amount <= r.amount || !moves, "{name}: tx {}", r.tx_id);
            assert_eq!(
                r.counterfeit_taint,
                r.taint_amount.is_positive(),
                "{name}: tx {}",
                r.tx_id
            );
        }
        for slot in out.population.purses.iter().skip(1) {
            let id = slot.state.purse_id;
            assert_eq!(
                bal.get(&id).copied().unwrap_or(0),
                slot.state.balance.minor(),
                "{name}: purse {id}"
            );
            let seg = &spec.segments[slot.segment.unwrap()];
            if !seg.counterfeit {
                let b = slot.state.balance.minor();
                assert!(
                    (0..=slot.state.purse_limit.minor()).contains(&b),
                    "{name}: purse {id} holds {b}"
                );
            }
        }
    }
}

#[test]
fn balances_stay_within_limits_on_every_row() {
    for (name, spec, out, recs) in fixtures() {
        let limit = |id: PurseId| {
            let slot = out.population.get(id);
            let seg = &spec.segments[slot.segment.unwrap()];
            (!seg.counterfeit).then_some(seg.purse_limit.minor())
        };
        for r in recs.iter().filter(|r| r.status.is_executed()) {
            let sides = [
                (r.payer_id, r.payer_balance_after),
                (Some(r.payee_id), Some(r.payee_balance_after)),
            ];
            for (id, after) in sides {
                let (Some(id), Some(after)) = (id, after) else { continue };
                if id == ORIGINATOR {
                    continue;
                }
                let b = after.minor();
                assert!(b >= 0, "{name}: purse {id} negative after tx {}", r.tx_id);
                if let Some(l) = limit(id) {
                    assert!(b <= l, "{name}: purse {id} at {b} over limit {l} after tx {}", r.tx_id);
                }
            }
        }
    }
}

#[test]
fn locked_purses_move_no_value_until_recustomized() {
    for (name, _, _, recs) in fixtures() {
        let mut locked: BTreeSet<PurseId> = BTreeSet::new();
        let mut lockups = 0;
        for r in &recs {
            if r.moves_value() {
                for id in [r.payer_id, Some(r.payee_id)].into_iter().flatten() {
                    let trigger = id == r.payee_id && r.onchip_events.contains(EventSet::PURSE_LOCKED);
                    assert!(
                        !locked.contains(&id) || trigger,
                        "{name}: locked purse {id} in executed tx {}",
                        r.tx_id
                    );
                }
            }
            if r.onchip_events.contains(EventSet::PURSE_LOCKED) {
                assert!(locked.insert(r.payee_id), "{name}: purse {} locked twice", r.payee_id);
                lockups += 1;
            }
            if r.tx_type == TxType::Recustomization && r.status.is_executed() {
                assert!(
                    locked.remove(&r.payee_id),
                    "{name}: recustomized an unlocked purse {}",
                    r.payee_id
                );
                assert!(r.onchip_events.contains(EventSet::RECUSTOMIZED));
            }
        }
        assert!(lockups > 0, "{name}: no lockups to check");
    }
}
