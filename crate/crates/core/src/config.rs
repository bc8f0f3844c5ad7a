//! Scenario definition: the full, declarative description of one experiment.
//!
//! These types deserialize directly from the scenario file; semantic checks
//! live in [`crate::ledger_io::scenario_file`].

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::detection::{Domain, Window};
use crate::money::Money;
use crate::purse::{ClassPattern, PurseClass, TargetSelector};
use crate::record::{PurseId, TxType};
use crate::txgen::calendar::CalendarProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub simulator: SimulatorSpec,
    #[serde(default)]
    pub calendar: CalendarProfile,
    #[serde(default)]
    pub originator: OriginatorSpec,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub class_matrix: Vec<ClassOverride>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub c3: Vec<C3Entry>,
    #[serde(default)]
    pub detection: DetectionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub start_date: NaiveDate,
    pub duration_days: u32,
    pub seed: u64,
}

impl SimulatorSpec {
    pub fn last_date(&self) -> Option<NaiveDate> {
        self.duration_days
            .checked_sub(1)
            .map(|d| self.start_date + chrono::Duration::days(d as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginatorSpec {
    /// Working float each member keeps after its daily redemption, unless the
    /// member segment sets its own.
    pub working_float: Money,
}

impl Default for OriginatorSpec {
    fn default() -> Self {
        OriginatorSpec {
            working_float: Money::new(1_000_000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

impl NormalParams {
    pub const fn fixed(v: f64) -> Self {
        NormalParams { mean: v, sd: 0.0 }
    }
}

/// Poisson count per active day plus Normal amount parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxParams {
    pub rate: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub merchants: NormalParams,
    pub consumers: NormalParams,
    pub in_circle_p: f64,
    /// Restrict circle merchants to these segments. All merchants otherwise.
    #[serde(default)]
    pub merchant_segments: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub id: String,
    pub class: PurseClass,
    pub initial_count: u32,
    #[serde(default)]
    pub birth_rate: f64,
    #[serde(default)]
    pub death_rate: f64,
    #[serde(default)]
    pub counterfeit: bool,
    #[serde(default = "default_active_rate")]
    pub active_rate: NormalParams,
    #[serde(default)]
    pub tx: BTreeMap<TxType, TxParams>,
    #[serde(default)]
    pub circle: Option<CircleSpec>,
    #[serde(default = "default_purse_limit")]
    pub purse_limit: Money,
    #[serde(default = "default_ctl_limit")]
    pub ctl_limit: Money,
    #[serde(default)]
    pub ctl_reset_interval_days: Option<u32>,
    /// Hours between a CTL lockup and the holder's visit to the home member.
    /// `None` means locked purses stay locked.
    #[serde(default = "default_visit_delay")]
    pub lock_visit_delay_hours: Option<u32>,
    #[serde(default)]
    pub initial_balance: Option<NormalParams>,
    /// Member segments only: overrides the originator's default float.
    #[serde(default)]
    pub working_float: Option<Money>,
    /// Member segments consumers and merchants of this segment bank with.
    /// Defaults to every honest member segment able to serve the class.
    #[serde(default)]
    pub home_segments: Option<Vec<String>>,
    /// Merchants: hour of the nightly sweep of takings to the member.
    #[serde(default = "default_sweep_hour")]
    pub sweep_hour: u8,
}

fn default_active_rate() -> NormalParams {
    NormalParams::fixed(1.0)
}
fn default_purse_limit() -> Money {
    Money::new(100_000)
}
fn default_ctl_limit() -> Money {
    Money::new(50_000)
}
fn default_visit_delay() -> Option<u32> {
    Some(24)
}
fn default_sweep_hour() -> u8 {
    23
}

impl SegmentSpec {
    /// A segment with library defaults for every optional field.
    pub fn new(id: &str, class: PurseClass, initial_count: u32) -> Self {
        SegmentSpec {
            id: id.to_string(),
            class,
            initial_count,
            birth_rate: 0.0,
            death_rate: 0.0,
            counterfeit: false,
            active_rate: default_active_rate(),
            tx: BTreeMap::new(),
            circle: None,
            purse_limit: default_purse_limit(),
            ctl_limit: default_ctl_limit(),
            ctl_reset_interval_days: None,
            lock_visit_delay_hours: default_visit_delay(),
            initial_balance: None,
            working_float: None,
            home_segments: None,
            sweep_hour: default_sweep_hour(),
        }
    }

    pub fn tx_params(&self, t: TxType) -> Option<&TxParams> {
        self.tx.get(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOverride {
    pub payer: ClassPattern,
    pub payee: ClassPattern,
    pub tx_type: TxType,
    pub allowed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetCornerSpec {
    pub test: Money,
    pub full: Money,
    pub days: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub mean: f64,
    pub sd: f64,
    pub min: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub name: String,
    pub counterfeiter_segment: String,
    pub buyer_segment: String,
    pub start_date: NaiveDate,
    #[serde(default)]
    pub daily_injections: Option<Vec<Money>>,
    #[serde(default)]
    pub street_corner: Option<StreetCornerSpec>,
    #[serde(default)]
    pub price_discount: f64,
    pub batch: BatchSpec,
    #[serde(default = "default_inject_hour")]
    pub inject_hour: u8,
    #[serde(default = "default_distribution_hours")]
    pub distribution_hours: [u8; 2],
    #[serde(default = "one")]
    pub spend_multiplier: f64,
    /// Share of its counterfeit holding a buyer deposits at its member when
    /// it visits to have a lockup cleared.
    #[serde(default)]
    pub cashout_fraction: f64,
}

fn default_inject_hour() -> u8 {
    7
}
fn default_distribution_hours() -> [u8; 2] {
    [8, 18]
}
fn one() -> f64 {
    1.0
}

impl AttackSpec {
    /// Day-by-day injection amounts, whichever form the file used.
    pub fn injections(&self) -> Vec<Money> {
        if let Some(v) = &self.daily_injections {
            return v.clone();
        }
        match self.street_corner {
            Some(sc) => crate::scenario::street_corner_schedule(sc.test, sc.full, sc.days)
                .map(|s| s.daily_injections)
                .unwrap_or_default(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTime {
    pub date: NaiveDate,
    #[serde(default)]
    pub hour: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmSource {
    Currency,
    Merchant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C3Entry {
    pub name: String,
    #[serde(default)]
    pub at: Option<FixedTime>,
    #[serde(default)]
    pub on_alarm: Option<AlarmSource>,
    pub kind: String,
    #[serde(default)]
    pub value: Option<Money>,
    #[serde(default)]
    pub target: TargetSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(default)]
    pub segments: Option<Vec<String>>,
    #[serde(default)]
    pub purse_ids: Option<Vec<u32>>,
    #[serde(default)]
    pub classes: Option<Vec<ClassPattern>>,
}

impl TargetSpec {
    pub fn selector(&self) -> TargetSelector {
        TargetSelector {
            segments: self.segments.as_ref().map(|s| s.iter().cloned().collect()),
            purse_ids: self.purse_ids.as_ref().map(|s| s.iter().map(|i| PurseId(*i)).collect()),
            classes: self.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub window: Window,
    pub k: f64,
    #[serde(default)]
    pub seasonal_adjust: bool,
    pub domain: Domain,
    #[serde(default)]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MerchantModelSpec {
    #[serde(flatten)]
    pub model: ModelSpec,
    pub system_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    pub currency: ModelSpec,
    pub merchant: MerchantModelSpec,
    /// Last day of the merchant system's calibration span. Defaults to six
    /// days before the end of the run.
    #[serde(default)]
    pub calibration_end: Option<NaiveDate>,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        DetectionSpec {
            currency: ModelSpec {
                window: Window::Monthly,
                k: 3.0,
                seasonal_adjust: false,
                domain: Domain::Linear,
                floor: None,
            },
            merchant: MerchantModelSpec {
                model: ModelSpec {
                    window: Window::Weekly,
                    k: 3.0,
                    seasonal_adjust: false,
                    domain: Domain::Log,
                    floor: None,
                },
                system_k: 3.0,
            },
            calibration_end: None,
        }
    }
}

impl ScenarioSpec {
    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    /// The scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.simulator.seed = seed;
        s
    }

    /// The scenario with every attack removed.
    pub fn without_attacks(&self) -> Self {
        let mut s = self.clone();
        s.attacks.clear();
        s
    }
}
