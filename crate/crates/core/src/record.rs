//! The append-only ledger record and its vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::SimClock;
use crate::money::Money;
use crate::purse::PurseClass;

/// Stable identity of one purse. Ids are never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PurseId(pub u32);

impl fmt::Display for PurseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxType {
    Deposit,
    Withdrawal,
    Purchase,
    #[serde(alias = "c2c")]
    ConsumerToConsumer,
    Refund,
    Issuance,
    Redemption,
    Recustomization,
    C3Delivery,
    CounterfeitInjection,
}

impl TxType {
    pub const ALL: [TxType; 10] = [
        TxType::Deposit,
        TxType::Withdrawal,
        TxType::Purchase,
        TxType::ConsumerToConsumer,
        TxType::Refund,
        TxType::Issuance,
        TxType::Redemption,
        TxType::Recustomization,
        TxType::C3Delivery,
        TxType::CounterfeitInjection,
    ];

    /// Transaction types a purse holder initiates (the rest are system flows).
    pub const USER: [TxType; 5] = [
        TxType::Deposit,
        TxType::Withdrawal,
        TxType::Purchase,
        TxType::ConsumerToConsumer,
        TxType::Refund,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TxType::Deposit => "deposit",
            TxType::Withdrawal => "withdrawal",
            TxType::Purchase => "purchase",
            TxType::ConsumerToConsumer => "consumer_to_consumer",
            TxType::Refund => "refund",
            TxType::Issuance => "issuance",
            TxType::Redemption => "redemption",
            TxType::Recustomization => "recustomization",
            TxType::C3Delivery => "c3_delivery",
            TxType::CounterfeitInjection => "counterfeit_injection",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether an executed record of this type changes balances.
    pub fn moves_value(self) -> bool {
        !matches!(self, TxType::Recustomization | TxType::C3Delivery)
    }

    pub fn is_user(self) -> bool {
        Self::USER.contains(&self)
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TxType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let alias = match s {
            "c2c" => Some(TxType::ConsumerToConsumer),
            _ => None,
        };
        alias
            .or_else(|| TxType::ALL.into_iter().find(|t| t.as_str() == s))
            .ok_or_else(|| format!("unknown transaction type `{s}`"))
    }
}

/// Set of on-chip events raised while processing one record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSet(u8);

impl EventSet {
    pub const EMPTY: EventSet = EventSet(0);
    pub const CTL_EXCEEDED: EventSet = EventSet(1);
    pub const PURSE_LOCKED: EventSet = EventSet(2);
    pub const RECUSTOMIZED: EventSet = EventSet(4);
    pub const C3_APPLIED: EventSet = EventSet(8);

    const NAMES: [(EventSet, &'static str); 4] = [
        (EventSet::CTL_EXCEEDED, "ctl_exceeded"),
        (EventSet::PURSE_LOCKED, "purse_locked"),
        (EventSet::RECUSTOMIZED, "recustomized"),
        (EventSet::C3_APPLIED, "c3_applied"),
    ];

    pub fn contains(self, other: EventSet) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: EventSet) -> EventSet {
        EventSet(self.0 | other.0)
    }

    pub fn insert(&mut self, other: EventSet) {
        self.0 |= other.0;
    }
}

impl fmt::Display for EventSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (flag, name) in Self::NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        Ok(())
    }
}

impl FromStr for EventSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut set = EventSet::EMPTY;
        for part in s.split('|').filter(|p| !p.is_empty()) {
            let (flag, _) = Self::NAMES
                .iter()
                .find(|(_, n)| *n == part)
                .ok_or_else(|| format!("unknown on-chip event `{part}`"))?;
            set.insert(*flag);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    ClassNotPermitted,
    PayerLocked,
    PayeeLocked,
    InsufficientFunds,
    PurseLimitExceeded,
    NonPositiveAmount,
}

impl DenyReason {
    pub const ALL: [DenyReason; 6] = [
        DenyReason::ClassNotPermitted,
        DenyReason::PayerLocked,
        DenyReason::PayeeLocked,
        DenyReason::InsufficientFunds,
        DenyReason::PurseLimitExceeded,
        DenyReason::NonPositiveAmount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::ClassNotPermitted => "class_not_permitted",
            DenyReason::PayerLocked => "payer_locked",
            DenyReason::PayeeLocked => "payee_locked",
            DenyReason::InsufficientFunds => "insufficient_funds",
            DenyReason::PurseLimitExceeded => "purse_limit_exceeded",
            DenyReason::NonPositiveAmount => "non_positive_amount",
        }
    }
}

/// Whether a record moved value or documents a denied attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxStatus {
    Executed,
    Denied(DenyReason),
}

impl TxStatus {
    pub fn is_executed(self) -> bool {
        matches!(self, TxStatus::Executed)
    }
}

impl fmt::Display for TxStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxStatus::Executed => f.write_str("executed"),
            TxStatus::Denied(r) => write!(f, "denied:{}", r.as_str()),
        }
    }
}

impl FromStr for TxStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "executed" {
            return Ok(TxStatus::Executed);
        }
        let reason = s
            .strip_prefix("denied:")
            .and_then(|r| DenyReason::ALL.into_iter().find(|d| d.as_str() == r))
            .ok_or_else(|| format!("unknown status `{s}`"))?;
        Ok(TxStatus::Denied(reason))
    }
}

/// One ledger row.
///
/// `payer_*` fields are `None` only for counterfeit injections, which create
/// value with no debit. For `recustomization` records `amount` carries the
/// credit-turnover accumulator read back before the reset, and for
/// `c3_delivery` records it is zero; neither moves value.
///
/// `counterfeit_taint` and `taint_amount` are simulation ground truth and are
/// never read by the detection systems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub tx_id: u64,
    pub timestamp: SimClock,
    pub tx_type: TxType,
    pub status: TxStatus,
    pub payer_id: Option<PurseId>,
    pub payer_class: Option<PurseClass>,
    pub payee_id: PurseId,
    pub payee_class: PurseClass,
    pub amount: Money,
    pub payer_balance_after: Option<Money>,
    pub payee_balance_after: Money,
    pub onchip_events: EventSet,
    pub counterfeit_taint: bool,
    pub taint_amount: Money,
}

impl TransactionRecord {
    /// Executed and value-moving.
    pub fn moves_value(&self) -> bool {
        self.status.is_executed() && self.tx_type.moves_value()
    }
}
