//! Host-side counterfeit detection over the ledger.
//!
//! Two monitoring systems share one rolling trailing-window model: currency
//! monitoring on the originator's daily redemption series, and merchant
//! monitoring on each merchant's daily deposits (log domain) with a
//! system-level alarm on the count of flagged merchants. Detectors read only
//! host-visible record fields.

mod merchant;
mod series;
pub mod training;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelSpec;

pub use merchant::{merchant_flags, MerchantReport, SystemDay};
pub use series::{currency_series, merchant_series, SeriesCollector};
pub use training::{export_training_set, RowKind, TrainingRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Level is the previous day; dispersion comes from the trailing week.
    Daily,
    Weekly,
    Monthly,
}

impl Window {
    pub const ALL: [Window; 3] = [Window::Daily, Window::Weekly, Window::Monthly];

    /// Trailing days each evaluation needs; also the warm-up length.
    pub fn history(self) -> usize {
        match self {
            Window::Daily | Window::Weekly => 7,
            Window::Monthly => 30,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Window::Daily => "daily",
            Window::Weekly => "weekly",
            Window::Monthly => "monthly",
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Window::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown window `{s}` (daily, weekly, monthly)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Linear,
    /// `ln(1 + x)`, which admits zero days.
    #[serde(alias = "log1p")]
    Log,
}

impl Domain {
    fn apply(self, x: f64) -> f64 {
        match self {
            Domain::Linear => x,
            Domain::Log => x.max(0.0).ln_1p(),
        }
    }

    fn min_floor(self) -> f64 {
        match self {
            Domain::Linear => 1.0,
            Domain::Log => 0.01,
        }
    }
}

/// Trailing-window surge model: flag day `d` when
/// `(x_d − mean) / max(std, floor) > k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingModel {
    pub window: Window,
    pub k: f64,
    pub seasonal_adjust: bool,
    pub domain: Domain,
    /// Explicit std floor. Defaults to `max(1% of |mean|, 1 unit)` in the
    /// linear domain and `max(1% of |mean|, 0.01)` in the log domain.
    pub floor: Option<f64>,
}

impl RollingModel {
    pub fn new(window: Window, k: f64, domain: Domain) -> Self {
        RollingModel {
            window,
            k,
            seasonal_adjust: false,
            domain,
            floor: None,
        }
    }
}

impl From<ModelSpec> for RollingModel {
    fn from(m: ModelSpec) -> Self {
        RollingModel {
            window: m.window,
            k: m.k,
            seasonal_adjust: m.seasonal_adjust,
            domain: m.domain,
            floor: m.floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectionError {
    #[error("series has {have} days; the model needs more than {need}")]
    InsufficientHistory { need: usize, have: usize },
    #[error("seasonal adjustment needs a window of at least 14 days")]
    SeasonalWindowTooShort,
    #[error("alarm threshold k must be positive and finite")]
    BadThreshold,
    #[error("ledger contains no settlement records")]
    NoSettlement,
    #[error("no merchant has enough history for the model")]
    NoEligibleMerchants,
}

/// One value per day from `start`, no gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<i64>,
}

impl DailySeries {
    pub fn zeros(start: NaiveDate, days: usize) -> Self {
        DailySeries {
            start,
            values: vec![0; days],
        }
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.values.len()).then_some(d as usize)
    }

    pub fn total(&self) -> i64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFlag {
    pub date: NaiveDate,
    pub value: i64,
    /// Today's value after adjustment and transform. `None` during warm-up,
    /// as are the other statistics.
    pub x: Option<f64>,
    pub mean: Option<f64>,
    /// Dispersion after flooring.
    pub std: Option<f64>,
    pub z: Option<f64>,
    pub flagged: bool,
}

impl DayFlag {
    /// Alarm threshold in the model's domain: `mean + k·std`.
    pub fn threshold(&self, k: f64) -> Option<f64> {
        Some(self.mean? + k * self.std?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub days: Vec<DayFlag>,
    pub first_alarm: Option<NaiveDate>,
}

impl AlarmReport {
    pub fn first_alarm_from(&self, date: NaiveDate) -> Option<NaiveDate> {
        self.days.iter().find(|d| d.flagged && d.date >= date).map(|d| d.date)
    }

    pub fn flag_count(&self) -> usize {
        self.days.iter().filter(|d| d.flagged).count()
    }

    pub fn evaluated(&self) -> usize {
        self.days.iter().filter(|d| d.z.is_some()).count()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Day-of-week indices (Monday first) from a window: each weekday's mean over
/// the overall mean. Weekdays without positive data get index 1.
fn weekday_index(start: NaiveDate, from: usize, values: &[f64]) -> [f64; 7] {
    let mut sum = [0.0; 7];
    let mut cnt = [0usize; 7];
    for (i, v) in values.iter().enumerate() {
        let w = (start + Duration::days((from + i) as i64))
            .weekday()
            .num_days_from_monday() as usize;
        sum[w] += v;
        cnt[w] += 1;
    }
    let overall = values.iter().sum::<f64>() / values.len() as f64;
    let mut idx = [1.0; 7];
    if overall > 0.0 {
        for w in 0..7 {
            if cnt[w] > 0 {
                let m = sum[w] / cnt[w] as f64 / overall;
                if m > 0.0 {
                    idx[w] = m;
                }
            }
        }
    }
    idx
}

/// Evaluates a rolling model on every day of a series.
///
/// Days inside the warm-up (the first `window.history()` days) get no
/// statistics and are never flagged.
pub fn rolling_flags(series: &DailySeries, model: &RollingModel) -> Result<AlarmReport, DetectionError> {
    if !(model.k.is_finite() && model.k > 0.0) {
        return Err(DetectionError::BadThreshold);
    }
    let h = model.window.history();
    if model.seasonal_adjust && h < 14 {
        return Err(DetectionError::SeasonalWindowTooShort);
    }
    if series.len() <= h {
        return Err(DetectionError::InsufficientHistory {
            need: h,
            have: series.len(),
        });
    }
    let raw: Vec<f64> = series.values.iter().map(|v| *v as f64).collect();
    let weekday = |i: usize| series.date(i).weekday().num_days_from_monday() as usize;
    let mut days = Vec::with_capacity(series.len());
    let mut first_alarm = None;
    let mut base = Vec::with_capacity(h);
    for d in 0..series.len() {
        let date = series.date(d);
        if d < h {
            days.push(DayFlag {
                date,
                value: series.values[d],
                x: None,
                mean: None,
                std: None,
                z: None,
                flagged: false,
            });
            continue;
        }
        let idx = if model.seasonal_adjust {
            weekday_index(series.start, d - h, &raw[d - h..d])
        } else {
            [1.0; 7]
        };
        base.clear();
        base.extend((d - h..d).map(|i| model.domain.apply(raw[i] / idx[weekday(i)])));
        let x = model.domain.apply(raw[d] / idx[weekday(d)]);
        let (wmean, wstd) = mean_std(&base);
        let mean = match model.window {
            Window::Daily => base[h - 1],
            _ => wmean,
        };
        let floor = model
            .floor
            .unwrap_or_else(|| (0.01 * mean.abs()).max(model.domain.min_floor()));
        let std = wstd.max(floor);
        let z = (x - mean) / std;
        let flagged = z > model.k;
        if flagged && first_alarm.is_none() {
            first_alarm = Some(date);
        }
        days.push(DayFlag {
            date,
            value: series.values[d],
            x: Some(x),
            mean: Some(mean),
            std: Some(std),
            z: Some(z),
            flagged,
        });
    }
    Ok(AlarmReport { days, first_alarm })
}
