//! On-chip purse logic.
//!
//! Everything here is evaluated locally at transaction time with no host
//! involvement: class screening, purse limits, the credit turnover limit
//! (CTL) with autonomous lockup, member re-customization, and C3 command
//! processing. All operations are pure: state in, state out.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::SimClock;
use crate::money::Money;
use crate::record::{DenyReason, EventSet, PurseId, TransactionRecord, TxStatus, TxType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Originator,
    Member,
    Merchant,
    Consumer,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Originator => "originator",
            Tier::Member => "member",
            Tier::Merchant => "merchant",
            Tier::Consumer => "consumer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemberKind {
    MerchantBank,
    ConsumerBank,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MerchantKind {
    Type1,
    Type2,
    Type3,
}

/// Purse class: a tier plus the subtype legal for that tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PurseClass {
    Originator,
    Member(MemberKind),
    Merchant(MerchantKind),
    Consumer,
}

impl PurseClass {
    pub const ALL: [PurseClass; 8] = [
        PurseClass::Originator,
        PurseClass::Member(MemberKind::MerchantBank),
        PurseClass::Member(MemberKind::ConsumerBank),
        PurseClass::Member(MemberKind::Both),
        PurseClass::Merchant(MerchantKind::Type1),
        PurseClass::Merchant(MerchantKind::Type2),
        PurseClass::Merchant(MerchantKind::Type3),
        PurseClass::Consumer,
    ];

    pub fn tier(self) -> Tier {
        match self {
            PurseClass::Originator => Tier::Originator,
            PurseClass::Member(_) => Tier::Member,
            PurseClass::Merchant(_) => Tier::Merchant,
            PurseClass::Consumer => Tier::Consumer,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PurseClass::Originator => 0,
            PurseClass::Member(MemberKind::MerchantBank) => 1,
            PurseClass::Member(MemberKind::ConsumerBank) => 2,
            PurseClass::Member(MemberKind::Both) => 3,
            PurseClass::Merchant(MerchantKind::Type1) => 4,
            PurseClass::Merchant(MerchantKind::Type2) => 5,
            PurseClass::Merchant(MerchantKind::Type3) => 6,
            PurseClass::Consumer => 7,
        }
    }

    /// Members that can act as a consumer's home bank.
    pub fn serves_consumers(self) -> bool {
        matches!(self, PurseClass::Member(MemberKind::ConsumerBank | MemberKind::Both))
    }

    /// Members that can acquire merchants.
    pub fn serves_merchants(self) -> bool {
        matches!(self, PurseClass::Member(MemberKind::MerchantBank | MemberKind::Both))
    }
}

impl fmt::Display for PurseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PurseClass::Originator => "originator",
            PurseClass::Member(MemberKind::MerchantBank) => "member:merchant_bank",
            PurseClass::Member(MemberKind::ConsumerBank) => "member:consumer_bank",
            PurseClass::Member(MemberKind::Both) => "member:both",
            PurseClass::Merchant(MerchantKind::Type1) => "merchant:type1",
            PurseClass::Merchant(MerchantKind::Type2) => "merchant:type2",
            PurseClass::Merchant(MerchantKind::Type3) => "merchant:type3",
            PurseClass::Consumer => "consumer:standard",
        };
        f.write_str(s)
    }
}

impl FromStr for PurseClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "originator" => Ok(PurseClass::Originator),
            "consumer" => Ok(PurseClass::Consumer),
            _ => PurseClass::ALL
                .into_iter()
                .find(|c| c.to_string() == s)
                .ok_or_else(|| format!("unknown purse class `{s}`")),
        }
    }
}

impl Serialize for PurseClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PurseClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Either a whole tier (`"member"`) or one exact class (`"member:both"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassPattern {
    Tier(Tier),
    Exact(PurseClass),
}

impl ClassPattern {
    pub fn matches(self, class: PurseClass) -> bool {
        match self {
            ClassPattern::Tier(t) => class.tier() == t,
            ClassPattern::Exact(c) => class == c,
        }
    }
}

impl fmt::Display for ClassPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassPattern::Tier(t) => f.write_str(t.as_str()),
            ClassPattern::Exact(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for ClassPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "member" => Ok(ClassPattern::Tier(Tier::Member)),
            "merchant" => Ok(ClassPattern::Tier(Tier::Merchant)),
            "consumer" => Ok(ClassPattern::Tier(Tier::Consumer)),
            "originator" => Ok(ClassPattern::Tier(Tier::Originator)),
            _ => s.parse().map(ClassPattern::Exact),
        }
    }
}

impl Serialize for ClassPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const N_CLASSES: usize = PurseClass::ALL.len();
const N_TYPES: usize = TxType::ALL.len();

/// Total relation (payer class, payee class, tx type) → permitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMatrix {
    allowed: Vec<bool>,
}

impl ClassMatrix {
    fn slot(payer: PurseClass, payee: PurseClass, tx: TxType) -> usize {
        (payer.index() * N_CLASSES + payee.index()) * N_TYPES + tx.index()
    }

    pub fn deny_all() -> Self {
        ClassMatrix {
            allowed: vec![false; N_CLASSES * N_CLASSES * N_TYPES],
        }
    }

    /// The default matrix: consumer↔consumer, consumer↔member,
    /// consumer↔merchant, merchant→member and member↔originator, each with
    /// the transaction type that flow carries. Everything else is disallowed.
    pub fn standard() -> Self {
        use TxType::*;
        let mut m = Self::deny_all();
        let consumer = ClassPattern::Tier(Tier::Consumer);
        let member = ClassPattern::Tier(Tier::Member);
        let merchant = ClassPattern::Tier(Tier::Merchant);
        let originator = ClassPattern::Tier(Tier::Originator);
        let rules = [
            (consumer, consumer, ConsumerToConsumer),
            (consumer, member, Deposit),
            (member, consumer, Withdrawal),
            (consumer, merchant, Purchase),
            (merchant, consumer, Refund),
            (merchant, member, Deposit),
            (originator, member, Issuance),
            (member, originator, Redemption),
            (member, consumer, Recustomization),
        ];
        for (payer, payee, tx) in rules {
            m.set(payer, payee, tx, true);
        }
        // C3 messages ride on any contact; they are not value transfers.
        for a in PurseClass::ALL {
            for b in PurseClass::ALL {
                m.allowed[Self::slot(a, b, C3Delivery)] = true;
            }
        }
        m
    }

    pub fn set(&mut self, payer: ClassPattern, payee: ClassPattern, tx: TxType, allowed: bool) {
        for a in PurseClass::ALL.into_iter().filter(|c| payer.matches(*c)) {
            for b in PurseClass::ALL.into_iter().filter(|c| payee.matches(*c)) {
                self.allowed[Self::slot(a, b, tx)] = allowed;
            }
        }
    }

    pub fn permits(&self, payer: PurseClass, payee: PurseClass, tx: TxType) -> bool {
        self.allowed[Self::slot(payer, payee, tx)]
    }
}

impl Default for ClassMatrix {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockReason {
    CtlExceeded,
    C3Lock,
}

/// One smart card's purse state.
///
/// `lock` is `Some(reason)` exactly when the purse is locked. `compromised`
/// marks a counterfeiter's chip whose own risk management is disabled: it
/// ignores its purse limit, its CTL and C3 commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurseState {
    pub purse_id: PurseId,
    pub class: PurseClass,
    pub balance: Money,
    pub purse_limit: Money,
    pub ctl_limit: Money,
    pub ctl_accumulated: Money,
    pub lock: Option<LockReason>,
    pub param_version: u32,
    pub compromised: bool,
}

impl PurseState {
    pub fn new(purse_id: PurseId, class: PurseClass, purse_limit: Money, ctl_limit: Money) -> Self {
        PurseState {
            purse_id,
            class,
            balance: Money::ZERO,
            purse_limit,
            ctl_limit,
            ctl_accumulated: Money::ZERO,
            lock: None,
            param_version: 0,
            compromised: false,
        }
    }

    pub fn is_locked(&self) -> bool {
        self.lock.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferDecision {
    pub deny_reason: Option<DenyReason>,
}

impl TransferDecision {
    pub const ALLOW: TransferDecision = TransferDecision { deny_reason: None };

    pub fn deny(reason: DenyReason) -> Self {
        TransferDecision {
            deny_reason: Some(reason),
        }
    }

    pub fn is_allowed(&self) -> bool {
        self.deny_reason.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PurseError {
    #[error("purse {0} is not a member purse and cannot re-customize")]
    NonMemberIssuer(PurseId),
    #[error("purse {0} is not a consumer purse and cannot be re-customized")]
    NotConsumer(PurseId),
}

/// Screens a proposed transfer. Pure; changes no state.
///
/// Allowed iff the amount is positive, the class matrix permits the flow,
/// neither purse is locked, the payer holds the amount, and the payee stays
/// within its purse limit.
pub fn authorize_transfer(
    payer: &PurseState,
    payee: &PurseState,
    amount: Money,
    tx_type: TxType,
    matrix: &ClassMatrix,
) -> TransferDecision {
    if !matrix.permits(payer.class, payee.class, tx_type) {
        return TransferDecision::deny(DenyReason::ClassNotPermitted);
    }
    match screen(payer, payee, amount) {
        Some(r) => TransferDecision::deny(r),
        None => TransferDecision::ALLOW,
    }
}

fn screen(payer: &PurseState, payee: &PurseState, amount: Money) -> Option<DenyReason> {
    if !amount.is_positive() {
        return Some(DenyReason::NonPositiveAmount);
    }
    if payer.is_locked() {
        return Some(DenyReason::PayerLocked);
    }
    if payee.is_locked() {
        return Some(DenyReason::PayeeLocked);
    }
    if payer.balance < amount {
        return Some(DenyReason::InsufficientFunds);
    }
    if !payee.compromised {
        match payee.balance.checked_add(amount) {
            Ok(after) if after <= payee.purse_limit => {}
            _ => return Some(DenyReason::PurseLimitExceeded),
        }
    }
    None
}

/// Result of a completed chip-to-chip transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferOutcome {
    pub payer: PurseState,
    pub payee: PurseState,
    pub events: EventSet,
    pub record: TransactionRecord,
}

/// Moves `amount` from payer to payee and runs the payee's CTL logic.
///
/// # Panics
///
/// If the transfer would not pass [`authorize_transfer`]'s balance, limit,
/// lock and amount screens. Callers must authorize first.
pub fn apply_transfer(
    payer: &PurseState,
    payee: &PurseState,
    amount: Money,
    tx_type: TxType,
    clock: SimClock,
    tx_id: u64,
) -> TransferOutcome {
    if let Some(reason) = screen(payer, payee, amount) {
        panic!(
            "apply_transfer precondition violated ({}): {} -> {} amount {}",
            reason.as_str(),
            payer.purse_id,
            payee.purse_id,
            amount
        );
    }
    let mut new_payer = *payer;
    let mut new_payee = *payee;
    new_payer.balance -= amount;
    new_payee.balance += amount;

    let mut events = EventSet::EMPTY;
    if !matches!(payer.class.tier(), Tier::Member | Tier::Originator) && payee.class.tier() == Tier::Consumer {
        let (after, ev) = apply_ctl(&new_payee, payer.class, amount);
        new_payee = after;
        if let Some(ev) = ev {
            events.insert(ev);
        }
    }

    let record = TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type,
        status: TxStatus::Executed,
        payer_id: Some(payer.purse_id),
        payer_class: Some(payer.class),
        payee_id: payee.purse_id,
        payee_class: payee.class,
        amount,
        payer_balance_after: Some(new_payer.balance),
        payee_balance_after: new_payee.balance,
        onchip_events: events,
        counterfeit_taint: false,
        taint_amount: Money::ZERO,
    };
    TransferOutcome {
        payer: new_payer,
        payee: new_payee,
        events,
        record,
    }
}

/// Credit turnover limit check on a consumer purse receiving `amount`.
///
/// Credits from member or originator purses are not counted. The credit
/// that pushes the accumulator past the limit is kept; the purse then locks.
pub fn apply_ctl(payee: &PurseState, source_class: PurseClass, amount: Money) -> (PurseState, Option<EventSet>) {
    let mut p = *payee;
    if p.compromised || matches!(source_class.tier(), Tier::Member | Tier::Originator) {
        return (p, None);
    }
    p.ctl_accumulated += amount;
    if p.ctl_accumulated > p.ctl_limit && !p.is_locked() {
        p.lock = Some(LockReason::CtlExceeded);
        return (p, Some(EventSet::CTL_EXCEEDED.union(EventSet::PURSE_LOCKED)));
    }
    (p, None)
}

/// New parameters installed at re-customization. `None` fields are kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recustomization {
    pub ctl_limit: Option<Money>,
    pub purse_limit: Option<Money>,
}

/// Member-performed reset of a consumer purse's on-chip logic.
///
/// Clears the lock and the CTL accumulator, installs any new parameters and
/// bumps `param_version`. The emitted record carries the accumulator value
/// read from the purse before the reset.
pub fn recustomize(
    purse: &PurseState,
    new_params: Option<&Recustomization>,
    by: &PurseState,
    clock: SimClock,
    tx_id: u64,
) -> Result<(PurseState, TransactionRecord), PurseError> {
    if by.class.tier() != Tier::Member {
        return Err(PurseError::NonMemberIssuer(by.purse_id));
    }
    if purse.class.tier() != Tier::Consumer {
        return Err(PurseError::NotConsumer(purse.purse_id));
    }
    let mut p = *purse;
    let read_back = p.ctl_accumulated;
    p.ctl_accumulated = Money::ZERO;
    p.lock = None;
    if let Some(params) = new_params {
        if let Some(ctl) = params.ctl_limit {
            p.ctl_limit = ctl;
        }
        if let Some(limit) = params.purse_limit {
            p.purse_limit = limit.max(p.balance);
        }
    }
    p.param_version += 1;
    let record = TransactionRecord {
        tx_id,
        timestamp: clock,
        tx_type: TxType::Recustomization,
        status: TxStatus::Executed,
        payer_id: Some(by.purse_id),
        payer_class: Some(by.class),
        payee_id: p.purse_id,
        payee_class: p.class,
        amount: read_back,
        payer_balance_after: Some(by.balance),
        payee_balance_after: p.balance,
        onchip_events: EventSet::RECUSTOMIZED,
        counterfeit_taint: false,
        taint_amount: Money::ZERO,
    };
    Ok((p, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum C3Kind {
    SetCtlLimit(Money),
    SetPurseLimit(Money),
    Lock,
    Unlock,
    ResetCounters,
}

impl C3Kind {
    pub fn name(&self) -> &'static str {
        match self {
            C3Kind::SetCtlLimit(_) => "set_ctl_limit",
            C3Kind::SetPurseLimit(_) => "set_purse_limit",
            C3Kind::Lock => "lock",
            C3Kind::Unlock => "unlock",
            C3Kind::ResetCounters => "reset_counters",
        }
    }
}

/// Which purses a C3 command applies to. Every present criterion must
/// match; an empty selector matches every purse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSelector {
    pub segments: Option<BTreeSet<String>>,
    pub purse_ids: Option<BTreeSet<PurseId>>,
    pub classes: Option<Vec<ClassPattern>>,
}

impl TargetSelector {
    pub fn matches(&self, purse_id: PurseId, segment: &str, class: PurseClass) -> bool {
        self.segments.as_ref().is_none_or(|s| s.contains(segment))
            && self.purse_ids.as_ref().is_none_or(|s| s.contains(&purse_id))
            && self
                .classes
                .as_ref()
                .is_none_or(|cs| cs.iter().any(|c| c.matches(class)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct C3Command {
    pub kind: C3Kind,
    pub target: TargetSelector,
    pub issue_time: SimClock,
}

/// Applies a delivered C3 command if its selector matches this purse.
///
/// Parameter changes are not retroactive: lowering the CTL below the current
/// accumulator does not lock the purse until its next counted credit.
pub fn process_c3(purse: &PurseState, segment: &str, cmd: &C3Command) -> (PurseState, bool) {
    if purse.compromised || !cmd.target.matches(purse.purse_id, segment, purse.class) {
        return (*purse, false);
    }
    let mut p = *purse;
    match cmd.kind {
        C3Kind::SetCtlLimit(v) => p.ctl_limit = v,
        C3Kind::SetPurseLimit(v) => p.purse_limit = v.max(p.balance),
        C3Kind::Lock => {
            if p.lock.is_none() {
                p.lock = Some(LockReason::C3Lock);
            }
        }
        C3Kind::Unlock => p.lock = None,
        C3Kind::ResetCounters => p.ctl_accumulated = Money::ZERO,
    }
    p.param_version += 1;
    (p, true)
}
