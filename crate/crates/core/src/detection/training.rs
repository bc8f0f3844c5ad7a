//! Labelled feature rows for training off-chip models.
//!
//! This is the only detection code that reads the ground-truth taint fields.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::economy::ORIGINATOR;
use crate::purse::{PurseClass, Tier};
use crate::record::{PurseId, TransactionRecord};
use crate::scenario::TaintLedger;

use super::{merchant_series, rolling_flags, DetectionError, RollingModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    PurseDay,
    MerchantDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub kind: RowKind,
    pub date: NaiveDate,
    pub purse_id: PurseId,
    pub class: PurseClass,
    pub tx_out: u32,
    pub tx_in: u32,
    pub value_out: i64,
    pub value_in: i64,
    pub denied: u32,
    /// Merchant-day rows only.
    pub z: Option<f64>,
    pub flagged: bool,
    pub taint_in: i64,
    pub taint_out: i64,
    /// Purse still holds counterfeit value at the end of the run.
    pub holds_taint_at_end: bool,
}

impl TrainingRow {
    pub fn is_positive(&self) -> bool {
        self.taint_in > 0 || self.taint_out > 0
    }
}

#[derive(Default)]
struct Acc {
    class: Option<PurseClass>,
    tx_out: u32,
    tx_in: u32,
    value_out: i64,
    value_in: i64,
    denied: u32,
    taint_in: i64,
    taint_out: i64,
}

/// One row per purse per day it took part in a transaction, plus one row per
/// merchant per day its deposit model was evaluated.
pub fn export_training_set(
    ledger: &[TransactionRecord],
    taint: &TaintLedger,
    start: NaiveDate,
    days: u32,
    merchant_model: &RollingModel,
) -> Result<Vec<TrainingRow>, DetectionError> {
    let mut acc: BTreeMap<(NaiveDate, PurseId), Acc> = BTreeMap::new();
    for r in ledger {
        let date = r.timestamp.date;
        let executed = r.status.is_executed();
        if let (Some(id), Some(class)) = (r.payer_id, r.payer_class) {
            if id != ORIGINATOR {
                let a = acc.entry((date, id)).or_default();
                a.class = Some(class);
                if executed {
                    a.tx_out += 1;
                    a.value_out += r.amount.minor();
                    a.taint_out += r.taint_amount.minor();
                } else {
                    a.denied += 1;
                }
            }
        }
        if r.payee_id != ORIGINATOR {
            let a = acc.entry((date, r.payee_id)).or_default();
            a.class = Some(r.payee_class);
            if executed {
                a.tx_in += 1;
                a.value_in += r.amount.minor();
                a.taint_in += r.taint_amount.minor();
            }
        }
    }
    let mut rows: Vec<TrainingRow> = acc
        .into_iter()
        .filter_map(|((date, id), a)| {
            Some(TrainingRow {
                kind: RowKind::PurseDay,
                date,
                purse_id: id,
                class: a.class?,
                tx_out: a.tx_out,
                tx_in: a.tx_in,
                value_out: a.value_out,
                value_in: a.value_in,
                denied: a.denied,
                z: None,
                flagged: false,
                taint_in: a.taint_in,
                taint_out: a.taint_out,
                holds_taint_at_end: taint.taint_of(id).is_positive(),
            })
        })
        .collect();

    let classes: BTreeMap<PurseId, PurseClass> = rows.iter().map(|r| (r.purse_id, r.class)).collect();
    let purse_rows: BTreeMap<(NaiveDate, PurseId), usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.date, r.purse_id), i))
        .collect();
    let mut merchant_rows = Vec::new();
    for (id, s) in merchant_series(ledger, start, days) {
        let report = match rolling_flags(&s, merchant_model) {
            Ok(r) => r,
            Err(DetectionError::InsufficientHistory { .. }) => continue,
            Err(e) => return Err(e),
        };
        for d in report.days.iter().filter(|d| d.z.is_some()) {
            let (taint_in, taint_out) = purse_rows
                .get(&(d.date, id))
                .map_or((0, 0), |&i| (rows[i].taint_in, rows[i].taint_out));
            merchant_rows.push(TrainingRow {
                kind: RowKind::MerchantDay,
                date: d.date,
                purse_id: id,
                class: classes[&id],
                tx_out: 0,
                tx_in: 0,
                value_out: d.value,
                value_in: 0,
                denied: 0,
                z: d.z,
                flagged: d.flagged,
                taint_in,
                taint_out,
                holds_taint_at_end: taint.taint_of(id).is_positive(),
            });
        }
    }
    debug_assert!(merchant_rows.iter().all(|r| r.class.tier() == Tier::Merchant));
    rows.extend(merchant_rows);
    rows.sort_by_key(|r| (r.date, r.kind, r.purse_id));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    /// The monitoring code must never read the ground-truth fields.
    #[test]
    fn detectors_do_not_read_taint_fields() {
        let sources = [
            ("mod.rs", include_str!("mod.rs")),
            ("series.rs", include_str!("series.rs")),
            ("merchant.rs", include_str!("merchant.rs")),
        ];
        for (name, src) in sources {
            for field in [".counterfeit_taint", ".taint_amount", "TaintLedger"] {
                assert!(!src.contains(field), "{name} references {field}");
            }
        }
    }
}
