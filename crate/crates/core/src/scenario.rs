//! Threat scenarios: counterfeit injection and distribution, taint tracking,
//! and the C3 command channel.

use chrono::NaiveDate;
use thiserror::Error;

use crate::clock::SimClock;
use crate::config::BatchSpec;
use crate::economy::{Population, ORIGINATOR};
use crate::money::Money;
use crate::purse::{process_c3, C3Command};
use crate::record::{EventSet, PurseId, TransactionRecord, TxStatus, TxType};
use crate::rng::{RngError, SimRng};

/// Upper bound on distinct C3 commands per run (one bit each per purse).
pub const MAX_C3_COMMANDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("street-corner schedule needs at least 3 days, got {0}")]
    TooShort(u32),
    #[error("purse {0} is not in a counterfeit segment")]
    NotCounterfeit(PurseId),
    #[error("injection amount must be positive, got {0}")]
    NonPositive(Money),
    #[error("batch draw: {0}")]
    Draw(#[from] RngError),
    #[error("more than {MAX_C3_COMMANDS} C3 commands")]
    TooManyCommands,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    pub start_date: NaiveDate,
    pub daily_injections: Vec<Money>,
    pub price_discount: f64,
    pub batch: BatchSpec,
}

impl AttackSchedule {
    pub fn total(&self) -> Money {
        self.daily_injections.iter().sum()
    }

    /// Injection for `date`, if it falls in the schedule.
    pub fn amount_on(&self, date: NaiveDate) -> Option<Money> {
        let d = (date - self.start_date).num_days();
        if d < 0 {
            return None;
        }
        self.daily_injections.get(d as usize).copied()
    }

    /// Real currency the counterfeiters collect for the distributed value.
    pub fn proceeds(&self) -> f64 {
        self.total().as_f64() * (1.0 - self.price_discount)
    }
}

/// Only the schedule's amounts matter here; dates and batching come from the
/// scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPattern {
    pub daily_injections: Vec<Money>,
}

/// Test probe on day 1, the full amount on day 2, a stand-down on day 3,
/// then the full amount daily to the end.
pub fn street_corner_schedule(
    test_amount: Money,
    full_amount: Money,
    n_days: u32,
) -> Result<InjectionPattern, ScenarioError> {
    if n_days < 3 {
        return Err(ScenarioError::TooShort(n_days));
    }
    let mut v = vec![test_amount, full_amount, Money::ZERO];
    v.extend(std::iter::repeat_n(full_amount, n_days as usize - 3));
    Ok(InjectionPattern { daily_injections: v })
}

/// Splits `total` into buyer-sized batches.
///
/// Sizes are Normal(mean, sd) truncated below at `min`. The last batch takes
/// whatever remains; a remainder smaller than `min` is folded into the batch
/// before it. The batches always sum to `total` exactly.
pub fn split_batches(total: Money, spec: &BatchSpec, rng: &mut SimRng) -> Result<Vec<Money>, ScenarioError> {
    let mut out = Vec::new();
    let mut left = total;
    let lo = spec.min.as_f64().max(1.0);
    while left.is_positive() {
        let b = Money::new(rng.truncated_normal(spec.mean, spec.sd, lo, f64::INFINITY)?.round() as i64);
        if b >= left {
            out.push(left);
            break;
        }
        out.push(b);
        left -= b;
    }
    if out.len() > 1 && *out.last().unwrap() < spec.min {
        let tail = out.pop().unwrap();
        *out.last_mut().unwrap() += tail;
    }
    Ok(out)
}

/// Ground-truth counterfeit attribution.
///
/// Taint follows value proportionally: a transfer of `a` from a purse with
/// balance `B` holding taint `T` carries `floor(a·T/B)`; the rounding
/// remainder stays with the payer. The partition
/// `Σ per-purse taint + redeemed = injected` is exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaintLedger {
    per_purse: Vec<Money>,
    pub counterfeit_injected_total: Money,
    pub redeemed: Money,
}

impl TaintLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn taint_of(&self, id: PurseId) -> Money {
        self.per_purse.get(id.0 as usize).copied().unwrap_or(Money::ZERO)
    }

    fn slot(&mut self, id: PurseId) -> &mut Money {
        let i = id.0 as usize;
        if self.per_purse.len() <= i {
            self.per_purse.resize(i + 1, Money::ZERO);
        }
        &mut self.per_purse[i]
    }

    pub fn inject(&mut self, id: PurseId, amount: Money) {
        *self.slot(id) += amount;
        self.counterfeit_injected_total += amount;
    }

    /// Moves the proportional share of taint for a transfer of `amount` out of
    /// a purse whose balance was `payer_balance` beforehand.
    pub fn transfer(&mut self, payer: PurseId, payee: PurseId, amount: Money, payer_balance: Money) -> Money {
        let t = self.taint_of(payer);
        if !t.is_positive() || !payer_balance.is_positive() {
            return Money::ZERO;
        }
        let moved = amount.mul_ratio(t, payer_balance).expect("taint ratio").min(t);
        *self.slot(payer) -= moved;
        *self.slot(payee) += moved;
        moved
    }

    /// Taint leaving circulation with a member's redemption.
    pub fn redeem(&mut self, member: PurseId, amount: Money, balance: Money) -> Money {
        let moved = self.transfer(member, ORIGINATOR, amount, balance);
        *self.slot(ORIGINATOR) -= moved;
        self.redeemed += moved;
        moved
    }

    pub fn outstanding(&self) -> Money {
        self.per_purse.iter().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.outstanding() + self.redeemed == self.counterfeit_injected_total
    }

    /// Purses currently holding taint, ascending.
    pub fn holders(&self) -> Vec<(PurseId, Money)> {
        self.per_purse
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_positive())
            .map(|(i, t)| (PurseId(i as u32), *t))
            .collect()
    }
}

/// Creates counterfeit value in a counterfeit-segment purse. No account is
/// debited. The purse's chip is compromised, so its limit is not checked.
pub fn inject_counterfeit(
    pop: &mut Population,
    taint: &mut TaintLedger,
    purse: PurseId,
    amount: Money,
    clock: SimClock,
    tx_id: u64,
) -> Result<TransactionRecord, ScenarioError> {
    if !pop.segment_of(purse).is_some_and(|s| s.counterfeit) {
        return Err(ScenarioError::NotCounterfeit(purse));
    }
    if !amount.is_positive() {
        return Err(ScenarioError::NonPositive(amount));
    }
    let slot = pop.get_mut(purse);
    slot.state.balance += amount;
    taint.inject(purse, amount);
    Ok(TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::CounterfeitInjection,
        status: TxStatus::Executed,
        payer_id: None,
        payer_class: None,
        payee_id: purse,
        payee_class: slot.state.class,
        amount,
        payer_balance_after: None,
        payee_balance_after: slot.state.balance,
        onchip_events: EventSet::EMPTY,
        counterfeit_taint: true,
        taint_amount: amount,
    })
}

/// Hours and sizes of one day's sales to the fraudulent population.
/// Hours are uniform on `[first, last]` and returned in ascending order.
pub fn distribution_plan(
    amount: Money,
    batch: &BatchSpec,
    hours: [u8; 2],
    rng: &mut SimRng,
) -> Result<Vec<(u8, Money)>, ScenarioError> {
    let batches = split_batches(amount, batch, rng)?;
    let span = (hours[1] - hours[0]) as usize + 1;
    let mut hs: Vec<u8> = batches.iter().map(|_| hours[0] + rng.below(span) as u8).collect();
    hs.sort();
    Ok(hs.into_iter().zip(batches).collect())
}

/// Running state of C3 commands issued so far in a run.
#[derive(Debug, Clone, Default)]
pub struct C3Channel {
    pub commands: Vec<C3Command>,
    pub names: Vec<String>,
    pub issue_day: Vec<u32>,
    pub applications: Vec<u64>,
    /// Daily target coverage per command, starting on its issue day.
    pub coverage: Vec<Vec<f64>>,
    /// Days from issue until coverage first reached 99% (issue day = 1).
    pub latency: Vec<Option<u32>>,
}

fn delivery_record(
    pop: &Population,
    from: PurseId,
    to: PurseId,
    applied: bool,
    clock: SimClock,
    tx_id: u64,
) -> TransactionRecord {
    let (a, b) = (pop.state(from), pop.state(to));
    TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::C3Delivery,
        status: TxStatus::Executed,
        payer_id: Some(from),
        payer_class: Some(a.class),
        payee_id: to,
        payee_class: b.class,
        amount: Money::ZERO,
        payer_balance_after: Some(a.balance),
        payee_balance_after: b.balance,
        onchip_events: if applied { EventSet::C3_APPLIED } else { EventSet::EMPTY },
        counterfeit_taint: false,
        taint_amount: Money::ZERO,
    }
}

impl C3Channel {
    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    fn deliver_one(
        &mut self,
        pop: &mut Population,
        bit: usize,
        from: PurseId,
        to: PurseId,
        clock: SimClock,
        tx_id: &mut dyn FnMut() -> u64,
    ) -> Option<TransactionRecord> {
        let mask = 1u64 << bit;
        let slot = pop.get(to);
        if slot.c3_known & mask != 0 || slot.state.compromised || to == ORIGINATOR {
            return None;
        }
        let seg = pop.segment_name(to).to_string();
        let (after, applied) = process_c3(&slot.state, &seg, &self.commands[bit]);
        let slot = pop.get_mut(to);
        slot.c3_known |= mask;
        slot.state = after;
        if applied {
            self.applications[bit] += 1;
        }
        Some(delivery_record(pop, from, to, applied, clock, tx_id()))
    }

    /// Issues a command: it is staged at every live member purse at once.
    pub fn deliver_c3(
        &mut self,
        pop: &mut Population,
        name: &str,
        cmd: C3Command,
        clock: SimClock,
        tx_id: &mut dyn FnMut() -> u64,
    ) -> Result<Vec<TransactionRecord>, ScenarioError> {
        if self.commands.len() >= MAX_C3_COMMANDS {
            return Err(ScenarioError::TooManyCommands);
        }
        let bit = self.commands.len();
        self.commands.push(cmd);
        self.names.push(name.to_string());
        self.issue_day.push(clock.day());
        self.applications.push(0);
        self.coverage.push(Vec::new());
        self.latency.push(None);
        let mut out = Vec::new();
        for m in pop.members() {
            out.extend(self.deliver_one(pop, bit, ORIGINATOR, m, clock, tx_id));
        }
        Ok(out)
    }

    /// Two purses in contact swap every command the other lacks.
    pub fn exchange(
        &mut self,
        pop: &mut Population,
        a: PurseId,
        b: PurseId,
        clock: SimClock,
        tx_id: &mut dyn FnMut() -> u64,
    ) -> Vec<TransactionRecord> {
        let (ka, kb) = (pop.get(a).c3_known, pop.get(b).c3_known);
        if ka == kb {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (from, to, bits) in [(a, b, ka & !kb), (b, a, kb & !ka)] {
            let mut bits = bits;
            while bits != 0 {
                let bit = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                out.extend(self.deliver_one(pop, bit, from, to, clock, tx_id));
            }
        }
        out
    }

    /// Fraction of live, uncompromised target purses holding command `idx`.
    /// An empty target set counts as fully covered.
    pub fn target_coverage(&self, pop: &Population, idx: usize) -> f64 {
        let cmd = &self.commands[idx];
        let mask = 1u64 << idx;
        let (mut hit, mut total) = (0usize, 0usize);
        for id in pop.live_ids() {
            let slot = pop.get(id);
            if id == ORIGINATOR || slot.state.compromised {
                continue;
            }
            if !cmd.target.matches(id, pop.segment_name(id), slot.state.class) {
                continue;
            }
            total += 1;
            if slot.c3_known & mask != 0 {
                hit += 1;
            }
        }
        if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Records end-of-day coverage for every issued command.
    pub fn close_day(&mut self, pop: &Population, day: u32) {
        for i in 0..self.commands.len() {
            let c = self.target_coverage(pop, i);
            self.coverage[i].push(c);
            if self.latency[i].is_none() && c >= 0.99 {
                self.latency[i] = Some(day - self.issue_day[i] + 1);
            }
        }
    }
}
