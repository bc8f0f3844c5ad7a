//! Population structure and macro flows.
//!
//! Purse ids index [`Population::purses`] directly and are never reused; id 0
//! is the originator. Dead purses stay in the table with `alive = false`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::clock::SimClock;
use crate::config::{NormalParams, SegmentSpec};
use crate::money::Money;
use crate::purse::{recustomize, PurseClass, PurseState, Tier};
use crate::record::{EventSet, PurseId, TransactionRecord, TxStatus, TxType};
use crate::rng::{RngError, SimRng, StreamKey};
use crate::scenario::TaintLedger;

pub const ORIGINATOR: PurseId = PurseId(0);

/// Member and originator purses are not capped in practice.
pub const UNCAPPED: Money = Money::new(i64::MAX / 4);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconomyError {
    #[error("segment `{segment}`: {reason}")]
    Inconsistent { segment: String, reason: String },
    #[error("segment `{segment}`: {source}")]
    Draw { segment: String, source: RngError },
    #[error("issuance amount must be positive, got {0}")]
    NonPositiveIssue(Money),
    #[error("purse {0} is not a member purse")]
    NotMember(PurseId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circle {
    pub owner: PurseId,
    pub merchant_members: Vec<PurseId>,
    pub consumer_members: Vec<PurseId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OriginatorAccount {
    pub issued_total: Money,
    pub redeemed_total: Money,
}

impl OriginatorAccount {
    pub fn float(&self) -> Money {
        self.issued_total - self.redeemed_total
    }
}

/// A member's settlement book for the current day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberBook {
    pub working_float: Money,
    /// Deposits received today. They are redeemed at day end and cannot fund
    /// withdrawals in the meantime.
    pub pending: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurseSlot {
    pub state: PurseState,
    /// `None` only for the originator.
    pub segment: Option<usize>,
    pub home: Option<PurseId>,
    pub alive: bool,
    /// Bitmask of C3 commands this purse holds.
    pub c3_known: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub purses: Vec<PurseSlot>,
    pub segments: Vec<SegmentSpec>,
    /// Live purse ids per segment, ascending.
    pub roster: Vec<Vec<PurseId>>,
    pub circles: BTreeMap<PurseId, Circle>,
    pub originator: OriginatorAccount,
    pub books: BTreeMap<PurseId, MemberBook>,
    default_float: Money,
    seed: u64,
}

/// Births and deaths of one primary-period step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evolution {
    pub born: Vec<PurseId>,
    pub died: Vec<PurseId>,
}

/// Monotone transaction id source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxIds(u64);

impl TxIds {
    pub fn next(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }

    pub fn last(&self) -> u64 {
        self.0
    }
}

fn draw_count(rng: &mut SimRng, p: NormalParams) -> Result<usize, RngError> {
    if p.mean <= 0.0 && p.sd == 0.0 {
        return Ok(0);
    }
    let x = rng.truncated_normal(p.mean, p.sd, 0.0, f64::INFINITY)?;
    Ok(x.round() as usize)
}

/// Draws the initial (or newborn) balance for a purse of this segment.
pub fn initial_balance_draw(spec: &SegmentSpec, seed: u64, id: PurseId) -> Result<Money, RngError> {
    let Some(p) = spec.initial_balance else {
        return Ok(Money::ZERO);
    };
    if p.mean <= 0.0 && p.sd == 0.0 {
        return Ok(Money::ZERO);
    }
    let mut rng = SimRng::stream(seed, StreamKey::new("balance", id.0 as u64, 0));
    let hi = spec.purse_limit.as_f64();
    let x = rng.truncated_normal(p.mean, p.sd, 0.0, hi.max(p.mean))?;
    Ok(Money::new(x.round() as i64).min(spec.purse_limit))
}

/// Builds the initial population from the segment list.
///
/// Every consumer gets a circle; balances start at zero and are funded by the
/// engine on the first simulated hour.
pub fn build_population(specs: &[SegmentSpec], default_float: Money, seed: u64) -> Result<Population, EconomyError> {
    let mut originator = PurseState::new(ORIGINATOR, PurseClass::Originator, UNCAPPED, Money::ZERO);
    originator.balance = Money::ZERO;
    let mut pop = Population {
        purses: vec![PurseSlot {
            state: originator,
            segment: None,
            home: None,
            alive: true,
            c3_known: 0,
        }],
        segments: specs.to_vec(),
        roster: vec![Vec::new(); specs.len()],
        circles: BTreeMap::new(),
        originator: OriginatorAccount::default(),
        books: BTreeMap::new(),
        default_float,
        seed,
    };
    // Members first so every consumer and merchant can be homed.
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by_key(|i| specs[*i].class.tier() != Tier::Member);
    let mut created = Vec::new();
    for si in order.iter().copied() {
        for _ in 0..specs[si].initial_count {
            created.push(pop.create_purse(si)?);
        }
    }
    for id in created {
        pop.attach_circle(id)?;
    }
    Ok(pop)
}

impl Population {
    pub fn get(&self, id: PurseId) -> &PurseSlot {
        &self.purses[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: PurseId) -> &mut PurseSlot {
        &mut self.purses[id.0 as usize]
    }

    pub fn state(&self, id: PurseId) -> &PurseState {
        &self.purses[id.0 as usize].state
    }

    pub fn segment_of(&self, id: PurseId) -> Option<&SegmentSpec> {
        self.get(id).segment.map(|s| &self.segments[s])
    }

    pub fn segment_name(&self, id: PurseId) -> &str {
        self.segment_of(id).map(|s| s.id.as_str()).unwrap_or("originator")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn live_ids(&self) -> impl Iterator<Item = PurseId> + '_ {
        self.purses
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive)
            .map(|(i, _)| PurseId(i as u32))
    }

    /// Live member purses in id order.
    pub fn members(&self) -> Vec<PurseId> {
        self.books.keys().copied().filter(|id| self.get(*id).alive).collect()
    }

    /// Σ balances over every purse, originator included.
    pub fn total_balance(&self) -> Money {
        self.purses.iter().map(|p| p.state.balance).sum()
    }

    fn create_purse(&mut self, si: usize) -> Result<PurseId, EconomyError> {
        let spec = &self.segments[si];
        let id = PurseId(self.purses.len() as u32);
        let class = spec.class;
        let (limit, ctl) = match class.tier() {
            Tier::Member | Tier::Originator => (UNCAPPED, Money::ZERO),
            _ => (spec.purse_limit, spec.ctl_limit),
        };
        let mut state = PurseState::new(id, class, limit, ctl);
        state.compromised = spec.counterfeit;
        let home = match class.tier() {
            Tier::Consumer | Tier::Merchant => Some(self.pick_home(si, id)?),
            _ => None,
        };
        if class.tier() == Tier::Member {
            let w = spec.working_float.unwrap_or(self.default_float);
            self.books.insert(
                id,
                MemberBook {
                    working_float: w,
                    pending: Money::ZERO,
                },
            );
        }
        self.purses.push(PurseSlot {
            state,
            segment: Some(si),
            home,
            alive: true,
            c3_known: 0,
        });
        self.roster[si].push(id);
        Ok(id)
    }

    /// Member segments a purse of segment `si` may bank with.
    pub fn home_candidates(&self, si: usize) -> Vec<PurseId> {
        let spec = &self.segments[si];
        let merchant = spec.class.tier() == Tier::Merchant;
        let mut out = Vec::new();
        for (mi, m) in self.segments.iter().enumerate() {
            if m.class.tier() != Tier::Member {
                continue;
            }
            let eligible = match &spec.home_segments {
                Some(list) => list.contains(&m.id),
                None => {
                    !m.counterfeit
                        && if merchant {
                            m.class.serves_merchants()
                        } else {
                            m.class.serves_consumers()
                        }
                }
            };
            if eligible {
                out.extend(self.roster[mi].iter().copied());
            }
        }
        out.sort();
        out
    }

    fn pick_home(&self, si: usize, id: PurseId) -> Result<PurseId, EconomyError> {
        let candidates = self.home_candidates(si);
        if candidates.is_empty() {
            return Err(EconomyError::Inconsistent {
                segment: self.segments[si].id.clone(),
                reason: "no member purse available to bank with".into(),
            });
        }
        let mut rng = SimRng::stream(self.seed, StreamKey::new("home", id.0 as u64, 0));
        Ok(candidates[rng.below(candidates.len())])
    }

    fn merchant_pool(&self, si: usize) -> Vec<PurseId> {
        let allowed = self.segments[si]
            .circle
            .as_ref()
            .and_then(|c| c.merchant_segments.clone());
        let mut out = Vec::new();
        for (mi, m) in self.segments.iter().enumerate() {
            if m.class.tier() != Tier::Merchant {
                continue;
            }
            if allowed.as_ref().is_some_and(|a| !a.contains(&m.id)) {
                continue;
            }
            out.extend(self.roster[mi].iter().copied());
        }
        out.sort();
        out
    }

    /// Merchants eligible as purchase counterparties for segment `si`.
    pub fn purchase_pool(&self, si: usize) -> Vec<PurseId> {
        self.merchant_pool(si)
    }

    fn attach_circle(&mut self, id: PurseId) -> Result<(), EconomyError> {
        let Some(si) = self.get(id).segment else {
            return Ok(());
        };
        let spec = &self.segments[si];
        if spec.class.tier() != Tier::Consumer {
            return Ok(());
        }
        let Some(cs) = spec.circle.clone() else {
            return Ok(());
        };
        let err = |source| EconomyError::Draw {
            segment: spec.id.clone(),
            source,
        };
        let mut rng = SimRng::stream(self.seed, StreamKey::new("circle", id.0 as u64, 0));
        let n_merch = draw_count(&mut rng, cs.merchants).map_err(err)?;
        let n_cons = draw_count(&mut rng, cs.consumers).map_err(err)?;

        let pool = self.merchant_pool(si);
        if n_merch > 0 && pool.is_empty() {
            return Err(EconomyError::Inconsistent {
                segment: spec.id.clone(),
                reason: "circles request merchants but no merchant is available".into(),
            });
        }
        let home = self.get(id).home;
        let (preferred, other): (Vec<PurseId>, Vec<PurseId>) =
            pool.into_iter().partition(|m| self.get(*m).home == home);
        let mut merchants: Vec<PurseId> = rng
            .sample_indices(preferred.len(), n_merch)
            .into_iter()
            .map(|i| preferred[i])
            .collect();
        let short = n_merch - merchants.len();
        merchants.extend(rng.sample_indices(other.len(), short).into_iter().map(|i| other[i]));
        merchants.sort();

        let peers: Vec<PurseId> = self.roster[si].iter().copied().filter(|p| *p != id).collect();
        let mut consumers: Vec<PurseId> = rng
            .sample_indices(peers.len(), n_cons)
            .into_iter()
            .map(|i| peers[i])
            .collect();
        consumers.sort();

        self.circles.insert(
            id,
            Circle {
                owner: id,
                merchant_members: merchants,
                consumer_members: consumers,
            },
        );
        Ok(())
    }

    /// Marks a purse dead and scrubs it from every circle.
    fn retire(&mut self, id: PurseId) {
        let slot = self.get_mut(id);
        slot.alive = false;
        if let Some(si) = slot.segment {
            self.roster[si].retain(|p| *p != id);
        }
        self.circles.remove(&id);
        for c in self.circles.values_mut() {
            c.merchant_members.retain(|p| *p != id);
            c.consumer_members.retain(|p| *p != id);
        }
    }
}

/// Originator mints `amount` into a member purse.
pub fn issue_value(
    pop: &mut Population,
    member: PurseId,
    amount: Money,
    clock: SimClock,
    tx_id: u64,
) -> Result<TransactionRecord, EconomyError> {
    if !amount.is_positive() {
        return Err(EconomyError::NonPositiveIssue(amount));
    }
    if pop.state(member).class.tier() != Tier::Member {
        return Err(EconomyError::NotMember(member));
    }
    let m = pop.get_mut(member);
    m.state.balance += amount;
    let (class, after) = (m.state.class, m.state.balance);
    pop.originator.issued_total += amount;
    Ok(TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::Issuance,
        status: TxStatus::Executed,
        payer_id: Some(ORIGINATOR),
        payer_class: Some(PurseClass::Originator),
        payee_id: member,
        payee_class: class,
        amount,
        payer_balance_after: Some(Money::ZERO),
        payee_balance_after: after,
        onchip_events: EventSet::EMPTY,
        counterfeit_taint: false,
        taint_amount: Money::ZERO,
    })
}

/// End-of-day settlement: the member redeems everything above its working
/// float with the originator. Always emits a record, possibly for zero.
pub fn settle_member_day(
    pop: &mut Population,
    taint: &mut TaintLedger,
    member: PurseId,
    clock: SimClock,
    tx_id: u64,
) -> TransactionRecord {
    let book = pop.books.get_mut(&member).expect("settle on non-member");
    book.pending = Money::ZERO;
    let w = book.working_float;
    let slot = &mut pop.purses[member.0 as usize];
    let before = slot.state.balance;
    let redeem = (before - w).max(Money::ZERO);
    let moved = taint.redeem(member, redeem, before);
    slot.state.balance -= redeem;
    let (class, after) = (slot.state.class, slot.state.balance);
    pop.originator.redeemed_total += redeem;
    TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::Redemption,
        status: TxStatus::Executed,
        payer_id: Some(member),
        payer_class: Some(class),
        payee_id: ORIGINATOR,
        payee_class: PurseClass::Originator,
        amount: redeem,
        payer_balance_after: Some(after),
        payee_balance_after: Money::ZERO,
        onchip_events: EventSet::EMPTY,
        counterfeit_taint: moved.is_positive(),
        taint_amount: moved,
    }
}

/// Unconditional transfer of a dying purse's whole balance to its member.
fn liquidate(
    pop: &mut Population,
    taint: &mut TaintLedger,
    id: PurseId,
    clock: SimClock,
    tx_id: u64,
) -> Option<TransactionRecord> {
    let home = pop.get(id).home?;
    let amount = pop.state(id).balance;
    if !amount.is_positive() {
        return None;
    }
    let moved = taint.transfer(id, home, amount, amount);
    pop.get_mut(id).state.balance = Money::ZERO;
    let payer_class = pop.state(id).class;
    let m = pop.get_mut(home);
    m.state.balance += amount;
    let (member_class, member_after) = (m.state.class, m.state.balance);
    if let Some(b) = pop.books.get_mut(&home) {
        b.pending += amount;
    }
    Some(TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::Deposit,
        status: TxStatus::Executed,
        payer_id: Some(id),
        payer_class: Some(payer_class),
        payee_id: home,
        payee_class: member_class,
        amount,
        payer_balance_after: Some(Money::ZERO),
        payee_balance_after: member_after,
        onchip_events: EventSet::EMPTY,
        counterfeit_taint: moved.is_positive(),
        taint_amount: moved,
    })
}

/// One primary-period step of births and deaths for every segment.
///
/// Deaths are drawn first, uniformly without replacement from the live
/// roster; each dying consumer or merchant deposits its full balance to its
/// member before removal (a locked consumer is re-customized first so the
/// deposit can go through; other locked purses are spared). Newborns get
/// segment defaults and fresh circles with zero balance.
pub fn evolve_population(
    pop: &mut Population,
    taint: &mut TaintLedger,
    clock: SimClock,
    ids: &mut TxIds,
) -> Result<(Vec<TransactionRecord>, Evolution), EconomyError> {
    let period = clock.primary_period as u64;
    let mut records = Vec::new();
    let mut evo = Evolution::default();
    for si in 0..pop.segments.len() {
        let spec = pop.segments[si].clone();
        let err = |source| EconomyError::Draw {
            segment: spec.id.clone(),
            source,
        };
        let n = pop.roster[si].len();
        let mut drng = SimRng::stream(pop.seed, StreamKey::new("death", si as u64, period));
        let deaths = (drng.poisson(spec.death_rate * n as f64).map_err(err)? as usize).min(n);
        let mut doomed: Vec<PurseId> = drng
            .sample_indices(n, deaths)
            .into_iter()
            .map(|i| pop.roster[si][i])
            .collect();
        doomed.sort();
        for id in doomed {
            if pop.state(id).is_locked() {
                let home = pop.get(id).home;
                match (pop.state(id).class.tier(), home) {
                    (Tier::Consumer, Some(h)) => {
                        let member = *pop.state(h);
                        let (after, rec) = recustomize(pop.state(id), None, &member, clock, ids.next())
                            .expect("home member re-customizes consumer");
                        pop.get_mut(id).state = after;
                        records.push(rec);
                    }
                    _ => continue,
                }
            }
            let next = ids.last() + 1;
            if let Some(rec) = liquidate(pop, taint, id, clock, next) {
                ids.next();
                records.push(rec);
            }
            pop.retire(id);
            evo.died.push(id);
        }

        let n = pop.roster[si].len();
        let mut brng = SimRng::stream(pop.seed, StreamKey::new("birth", si as u64, period));
        let births = brng.poisson(spec.birth_rate * n as f64).map_err(err)?;
        for _ in 0..births {
            let id = pop.create_purse(si)?;
            pop.attach_circle(id)?;
            evo.born.push(id);
        }
    }
    Ok((records, evo))
}
