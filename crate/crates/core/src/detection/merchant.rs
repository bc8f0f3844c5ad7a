use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::record::PurseId;

use super::{rolling_flags, AlarmReport, DailySeries, DetectionError, RollingModel};

/// Red-star count for one day against the binomial bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDay {
    pub date: NaiveDate,
    /// Merchants past their own warm-up.
    pub eligible: usize,
    pub flagged: usize,
    /// `n·p̂ + k·√(n·p̂·(1−p̂))`; `None` inside the calibration span.
    pub bound: Option<f64>,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantReport {
    pub per_merchant: BTreeMap<PurseId, AlarmReport>,
    pub system: Vec<SystemDay>,
    /// Per-merchant daily flag rate over the calibration span.
    pub p_hat: f64,
    pub calibration_end: NaiveDate,
    pub first_alarm: Option<NaiveDate>,
}

impl MerchantReport {
    pub fn first_alarm_from(&self, date: NaiveDate) -> Option<NaiveDate> {
        self.system.iter().find(|d| d.alarm && d.date >= date).map(|d| d.date)
    }

    pub fn alarm_days(&self) -> usize {
        self.system.iter().filter(|d| d.alarm).count()
    }

    /// Flagged merchant-days over evaluated merchant-days.
    pub fn flag_rate(&self) -> f64 {
        let (f, n) = self
            .system
            .iter()
            .fold((0, 0), |a, d| (a.0 + d.flagged, a.1 + d.eligible));
        if n == 0 {
            0.0
        } else {
            f as f64 / n as f64
        }
    }
}

/// Merchant monitoring.
///
/// Each merchant's series is evaluated on its own once it has a full window
/// of history; merchants that never get there are skipped. `p̂` is estimated
/// over days up to `calibration_end` and the system alarm is evaluated on
/// the days after it.
pub fn merchant_flags(
    series: &BTreeMap<PurseId, DailySeries>,
    model: &RollingModel,
    system_k: f64,
    calibration_end: NaiveDate,
) -> Result<MerchantReport, DetectionError> {
    let mut per_merchant = BTreeMap::new();
    for (id, s) in series {
        match rolling_flags(s, model) {
            Ok(r) => {
                per_merchant.insert(*id, r);
            }
            Err(DetectionError::InsufficientHistory { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if per_merchant.is_empty() {
        return Err(DetectionError::NoEligibleMerchants);
    }
    let mut by_day: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
    for r in per_merchant.values() {
        for d in r.days.iter().filter(|d| d.z.is_some()) {
            let e = by_day.entry(d.date).or_default();
            e.0 += 1;
            e.1 += d.flagged as usize;
        }
    }
    let (cal_n, cal_f) = by_day
        .range(..=calibration_end)
        .fold((0usize, 0usize), |a, (_, v)| (a.0 + v.0, a.1 + v.1));
    let p_hat = if cal_n == 0 { 0.0 } else { cal_f as f64 / cal_n as f64 };
    let mut first_alarm = None;
    let system = by_day
        .into_iter()
        .map(|(date, (n, f))| {
            let bound = (date > calibration_end).then(|| {
                let n = n as f64;
                n * p_hat + system_k * (n * p_hat * (1.0 - p_hat)).sqrt()
            });
            let alarm = bound.is_some_and(|b| f as f64 > b);
            if alarm && first_alarm.is_none() {
                first_alarm = Some(date);
            }
            SystemDay {
                date,
                eligible: n,
                flagged: f,
                bound,
                alarm,
            }
        })
        .collect();
    Ok(MerchantReport {
        per_merchant,
        system,
        p_hat,
        calibration_end,
        first_alarm,
    })
}
