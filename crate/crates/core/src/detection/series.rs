use std::collections::BTreeMap;
use std::io;

use chrono::NaiveDate;

use crate::purse::Tier;
use crate::record::{PurseId, TransactionRecord, TxType};
use crate::txgen::RecordSink;

use super::{DailySeries, DetectionError};

/// Streams ledger records into the daily series both monitoring systems
/// consume. Reads only host-visible fields.
#[derive(Debug, Clone)]
pub struct SeriesCollector {
    start: NaiveDate,
    days: usize,
    redemption: Vec<i64>,
    settlements: u64,
    /// First day seen and daily deposits, per merchant.
    merchants: BTreeMap<PurseId, (usize, Vec<i64>)>,
}

impl SeriesCollector {
    pub fn new(start: NaiveDate, days: u32) -> Self {
        SeriesCollector {
            start,
            days: days as usize,
            redemption: vec![0; days as usize],
            settlements: 0,
            merchants: BTreeMap::new(),
        }
    }

    fn day_of(&self, date: NaiveDate) -> usize {
        let d = (date - self.start).num_days();
        assert!(
            d >= 0 && (d as usize) < self.days,
            "record dated {date} outside the ledger's date range"
        );
        d as usize
    }

    fn merchant(&mut self, id: PurseId, day: usize) -> &mut Vec<i64> {
        let days = self.days;
        &mut self.merchants.entry(id).or_insert_with(|| (day, vec![0; days])).1
    }

    pub fn observe(&mut self, r: &TransactionRecord) {
        let day = self.day_of(r.timestamp.date);
        if let (Some(id), Some(class)) = (r.payer_id, r.payer_class) {
            if class.tier() == Tier::Merchant {
                self.merchant(id, day);
            }
        }
        if r.payee_class.tier() == Tier::Merchant {
            self.merchant(r.payee_id, day);
        }
        if !r.status.is_executed() {
            return;
        }
        match r.tx_type {
            TxType::Redemption => {
                self.settlements += 1;
                self.redemption[day] += r.amount.minor();
            }
            TxType::Deposit => {
                if let (Some(id), Some(c)) = (r.payer_id, r.payer_class) {
                    if c.tier() == Tier::Merchant && r.payee_class.tier() == Tier::Member {
                        self.merchant(id, day)[day] += r.amount.minor();
                    }
                }
            }
            _ => {}
        }
    }

    pub fn has_settlements(&self) -> bool {
        self.settlements > 0
    }

    /// Daily redemption at the originator over the whole run.
    pub fn currency_series(&self) -> Result<DailySeries, DetectionError> {
        if !self.has_settlements() {
            return Err(DetectionError::NoSettlement);
        }
        Ok(DailySeries {
            start: self.start,
            values: self.redemption.clone(),
        })
    }

    /// Redemption series for days `0..=day`.
    pub fn currency_series_through(&self, day: u32) -> DailySeries {
        DailySeries {
            start: self.start,
            values: self.redemption[..=day as usize].to_vec(),
        }
    }

    /// Per-merchant deposits from each merchant's first appearance to the end
    /// of the run.
    pub fn merchant_series(&self) -> BTreeMap<PurseId, DailySeries> {
        self.merchant_series_upto(self.days)
    }

    pub fn merchant_series_through(&self, day: u32) -> BTreeMap<PurseId, DailySeries> {
        self.merchant_series_upto(day as usize + 1)
    }

    fn merchant_series_upto(&self, end: usize) -> BTreeMap<PurseId, DailySeries> {
        self.merchants
            .iter()
            .filter(|(_, (first, _))| *first < end)
            .map(|(id, (first, v))| {
                (
                    *id,
                    DailySeries {
                        start: self.start + chrono::Duration::days(*first as i64),
                        values: v[*first..end].to_vec(),
                    },
                )
            })
            .collect()
    }
}

impl RecordSink for SeriesCollector {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        self.observe(r);
        Ok(())
    }
}

/// Daily originator redemption over `days` days from `start`.
pub fn currency_series<'a>(
    ledger: impl IntoIterator<Item = &'a TransactionRecord>,
    start: NaiveDate,
    days: u32,
) -> Result<DailySeries, DetectionError> {
    let mut c = SeriesCollector::new(start, days);
    ledger.into_iter().for_each(|r| c.observe(r));
    c.currency_series()
}

/// Daily deposits of every merchant appearing in the ledger.
pub fn merchant_series<'a>(
    ledger: impl IntoIterator<Item = &'a TransactionRecord>,
    start: NaiveDate,
    days: u32,
) -> BTreeMap<PurseId, DailySeries> {
    let mut c = SeriesCollector::new(start, days);
    ledger.into_iter().for_each(|r| c.observe(r));
    c.merchant_series()
}
