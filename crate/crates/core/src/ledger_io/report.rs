//! Run summaries rebuilt from a ledger alone.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use crate::config::DetectionSpec;
use crate::detection::{merchant_flags, rolling_flags, AlarmReport, MerchantReport, RollingModel, SeriesCollector};
use crate::economy::ORIGINATOR;
use crate::money::Money;
use crate::record::{EventSet, PurseId, TransactionRecord, TxType};

use super::ledger_file::{LedgerError, LedgerHeader};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportDay {
    pub date: NaiveDate,
    pub executed: [u64; 10],
    pub value: [i64; 10],
    pub denied: u64,
    /// Purses locked by their credit-turnover limit during the day.
    pub new_locks: u64,
    /// Purses still CTL-locked at the end of the day.
    pub locked: u64,
    /// Purses CTL-locked at least once up to the end of the day.
    pub ever_locked: u64,
    pub redemption: Money,
    pub currency_flag: bool,
    pub merchant_alarm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub issued: Money,
    pub injected: Money,
    pub redeemed: Money,
    pub balances: Money,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.issued + self.injected == self.balances + self.redeemed
    }
}

impl std::fmt::Display for Conservation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "issued {} + injected {} {} balances {} + redeemed {}",
            self.issued,
            self.injected,
            if self.holds() { "=" } else { "!=" },
            self.balances,
            self.redeemed
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub header: LedgerHeader,
    pub days: Vec<ReportDay>,
    pub conservation: Conservation,
    pub records: u64,
    pub currency: Option<AlarmReport>,
    pub currency_k: f64,
    pub merchant: Option<MerchantReport>,
}

fn day_new(date: NaiveDate) -> ReportDay {
    ReportDay {
        date,
        executed: [0; 10],
        value: [0; 10],
        denied: 0,
        new_locks: 0,
        locked: 0,
        ever_locked: 0,
        redemption: Money::ZERO,
        currency_flag: false,
        merchant_alarm: false,
    }
}

/// Builds the report from a record stream. Detection runs with `det`; its
/// default calibration end is six days before the last ledger day.
pub fn build_report(
    header: &LedgerHeader,
    records: impl IntoIterator<Item = Result<TransactionRecord, LedgerError>>,
    det: &DetectionSpec,
) -> Result<RunReport, LedgerError> {
    let start = header.start_date;
    let n = header.duration_days as usize;
    let mut days: Vec<ReportDay> = (0..n).map(|d| day_new(start + Duration::days(d as i64))).collect();
    let mut series = SeriesCollector::new(start, header.duration_days);
    let mut balances: Vec<i64> = Vec::new();
    let mut locked: BTreeSet<PurseId> = BTreeSet::new();
    let mut ever: BTreeSet<PurseId> = BTreeSet::new();
    let mut cons = Conservation {
        issued: Money::ZERO,
        injected: Money::ZERO,
        redeemed: Money::ZERO,
        balances: Money::ZERO,
    };
    let mut count = 0u64;
    let mut cur = 0usize;
    let mut set_balance = |id: PurseId, b: Money| {
        if id == ORIGINATOR {
            return;
        }
        let i = id.0 as usize;
        if balances.len() <= i {
            balances.resize(i + 1, 0);
        }
        balances[i] = b.minor();
    };
    for (i, r) in records.into_iter().enumerate() {
        let r = r?;
        let line = i as u64 + 7;
        let d = (r.timestamp.date - start).num_days();
        if d < 0 || d as usize >= n {
            return Err(LedgerError::Corrupt {
                line,
                message: format!("date {} outside the ledger's period", r.timestamp.date),
            });
        }
        let d = d as usize;
        while cur < d {
            days[cur].locked = locked.len() as u64;
            days[cur].ever_locked = ever.len() as u64;
            cur += 1;
        }
        count += 1;
        series.observe(&r);
        let day = &mut days[d];
        if r.status.is_executed() {
            day.executed[r.tx_type.index()] += 1;
            day.value[r.tx_type.index()] += r.amount.minor();
            match r.tx_type {
                TxType::Issuance => cons.issued += r.amount,
                TxType::Redemption => {
                    cons.redeemed += r.amount;
                    day.redemption += r.amount;
                }
                TxType::CounterfeitInjection => cons.injected += r.amount,
                TxType::Recustomization => {
                    locked.remove(&r.payee_id);
                }
                _ => {}
            }
            if let (Some(p), Some(b)) = (r.payer_id, r.payer_balance_after) {
                set_balance(p, b);
            }
            set_balance(r.payee_id, r.payee_balance_after);
        } else {
            day.denied += 1;
        }
        if r.onchip_events.contains(EventSet::CTL_EXCEEDED) {
            day.new_locks += 1;
            locked.insert(r.payee_id);
            ever.insert(r.payee_id);
        }
    }
    while cur < n {
        days[cur].locked = locked.len() as u64;
        days[cur].ever_locked = ever.len() as u64;
        cur += 1;
    }
    cons.balances = Money::new(balances.iter().sum());

    let currency = series
        .currency_series()
        .ok()
        .and_then(|s| rolling_flags(&s, &RollingModel::from(det.currency)).ok());
    if let Some(c) = &currency {
        for (day, f) in days.iter_mut().zip(&c.days) {
            day.currency_flag = f.flagged;
        }
    }
    let last = start + Duration::days(n.saturating_sub(1) as i64);
    let cal = det.calibration_end.unwrap_or(last - Duration::days(6));
    let merchant = merchant_flags(
        &series.merchant_series(),
        &RollingModel::from(det.merchant.model),
        det.merchant.system_k,
        cal,
    )
    .ok();
    if let Some(m) = &merchant {
        for s in &m.system {
            if let Some(i) = days.iter().position(|d| d.date == s.date) {
                days[i].merchant_alarm = s.alarm;
            }
        }
    }
    Ok(RunReport {
        header: header.clone(),
        days,
        conservation: cons,
        records: count,
        currency,
        currency_k: det.currency.k,
        merchant,
    })
}

/// Daily table as comma-separated text.
pub fn write_daily_table(report: &RunReport, mut out: impl Write) -> io::Result<()> {
    let mut cols: Vec<String> = vec!["date".into()];
    cols.extend(TxType::ALL.iter().map(|t| format!("n_{t}")));
    cols.extend(TxType::ALL.iter().map(|t| format!("v_{t}")));
    cols.extend(
        [
            "denied",
            "new_locks",
            "locked",
            "ever_locked",
            "redemption",
            "currency_flag",
            "merchant_alarm",
        ]
        .map(String::from),
    );
    writeln!(out, "{}", cols.join(","))?;
    for d in &report.days {
        let mut row = vec![d.date.to_string()];
        row.extend(d.executed.iter().map(u64::to_string));
        row.extend(d.value.iter().map(i64::to_string));
        row.extend([
            d.denied.to_string(),
            d.new_locks.to_string(),
            d.locked.to_string(),
            d.ever_locked.to_string(),
            d.redemption.minor().to_string(),
            (d.currency_flag as u8).to_string(),
            (d.merchant_alarm as u8).to_string(),
        ]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Short human-readable summary.
pub fn write_summary(report: &RunReport, mut out: impl Write) -> io::Result<()> {
    let h = &report.header;
    writeln!(out, "scenario_digest={}", h.scenario_digest)?;
    writeln!(out, "seed={}", h.seed)?;
    writeln!(out, "period={}..+{}d", h.start_date, h.duration_days)?;
    writeln!(out, "records={}", report.records)?;
    writeln!(out, "conservation: {}", report.conservation)?;
    let ever = report.days.last().map_or(0, |d| d.ever_locked);
    writeln!(out, "purses_ever_locked={ever}")?;
    let first = |v: Option<NaiveDate>| v.map_or("none".to_string(), |d| d.to_string());
    match &report.currency {
        Some(c) => writeln!(
            out,
            "currency_first_alarm={} flagged_days={}",
            first(c.first_alarm),
            c.flag_count()
        )?,
        None => writeln!(out, "currency_first_alarm=unavailable")?,
    }
    match &report.merchant {
        Some(m) => writeln!(
            out,
            "merchant_first_alarm={} alarm_days={} p_hat={:.5}",
            first(m.first_alarm),
            m.alarm_days(),
            m.p_hat
        )?,
        None => writeln!(out, "merchant_first_alarm=unavailable")?,
    }
    Ok(())
}

pub fn write_report_files(report: &RunReport, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_daily_table(
        report,
        io::BufWriter::new(std::fs::File::create(dir.join("daily.csv"))?),
    )?;
    write_summary(report, std::fs::File::create(dir.join("summary.txt"))?)
}
