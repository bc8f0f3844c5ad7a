//! Replicate runs and the measurements the street-corner experiment is
//! judged by. Shared by the command-line tool and the test suites.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use chrono::{Duration, NaiveDate};

use crate::config::ScenarioSpec;
use crate::detection::{
    merchant_flags, rolling_flags, AlarmReport, DailySeries, MerchantReport, RollingModel, SeriesCollector,
};
use crate::ledger_io::{scenario_digest, LedgerHeader, LedgerWriter, FORMAT_VERSION};
use crate::money::Money;
use crate::purse::Tier;
use crate::record::{EventSet, PurseId, TransactionRecord};
use crate::txgen::{run, RecordSink, RunError, RunOutput};

/// First CTL lockup date of every purse that was ever locked.
#[derive(Debug, Clone, Default)]
pub struct LockTracker {
    pub first_lock: BTreeMap<PurseId, NaiveDate>,
    pub lock_dates: BTreeMap<PurseId, BTreeSet<NaiveDate>>,
}

impl RecordSink for LockTracker {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        if r.onchip_events.contains(EventSet::CTL_EXCEEDED) {
            let d = r.timestamp.date;
            self.first_lock.entry(r.payee_id).or_insert(d);
            self.lock_dates.entry(r.payee_id).or_default().insert(d);
        }
        Ok(())
    }
}

impl LockTracker {
    /// Purses locked at least once in `[from, to]`.
    pub fn locked_between(&self, from: NaiveDate, to: NaiveDate) -> BTreeSet<PurseId> {
        self.lock_dates
            .iter()
            .filter(|(_, ds)| ds.range(from..=to).next().is_some())
            .map(|(id, _)| *id)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub hit: usize,
    pub of: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        if self.of == 0 {
            0.0
        } else {
            self.hit as f64 / self.of as f64
        }
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} ({:.2}%)", self.hit, self.of, 100.0 * self.value())
    }
}

/// Everything measured on one run.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub ledger_digest: String,
    pub records: u64,
    /// `issued + injected == balances + redeemed` on every day.
    pub conserved_daily: bool,
    /// Value injected per day of the first attack, read from the taint ledger.
    pub injections: Vec<Money>,
    pub attack_window: Option<(NaiveDate, NaiveDate)>,
    /// Buyer purses locked at least once during the attack window.
    pub buyers_locked: Fraction,
    /// Honest consumer purses locked at least once over the whole run.
    pub honest_locked: Fraction,
    /// Sample standard deviation of daily redemption over the 30 days before
    /// the attack (or the run's last 30 days without one).
    pub baseline_sigma: f64,
    pub redemption: DailySeries,
    pub currency: AlarmReport,
    pub merchant: Option<MerchantReport>,
    pub merchant_series: BTreeMap<PurseId, DailySeries>,
}

impl Replicate {
    /// 1-based attack day of the first currency alarm on or after the
    /// attack start.
    pub fn currency_alarm_day(&self) -> Option<i64> {
        let (start, _) = self.attack_window?;
        self.currency
            .first_alarm_from(start)
            .map(|d| (d - start).num_days() + 1)
    }

    /// Merchant system alarms inside the attack window.
    pub fn merchant_alarms_in_window(&self) -> usize {
        let (Some((a, b)), Some(m)) = (self.attack_window, &self.merchant) else {
            return 0;
        };
        m.system
            .iter()
            .filter(|d| d.alarm && d.date >= a && d.date <= b)
            .count()
    }
}

/// Runs `spec` and takes every measurement. The ledger is hashed but not
/// stored.
pub fn replicate(spec: &ScenarioSpec) -> Result<(Replicate, RunOutput), RunError> {
    let sim = &spec.simulator;
    let header = LedgerHeader {
        format_version: FORMAT_VERSION,
        scenario_digest: scenario_digest(spec),
        seed: sim.seed,
        start_date: sim.start_date,
        duration_days: sim.duration_days,
    };
    let writer = LedgerWriter::new(io::sink(), &header)?;
    let series = SeriesCollector::new(sim.start_date, sim.duration_days);
    let mut sink = ((writer, series), LockTracker::default());
    let out = run(spec, &mut sink)?;
    let ((writer, series), locks) = sink;
    let ledger_digest = writer.finish()?;

    let conserved_daily = out
        .daily
        .iter()
        .all(|d| d.issued_total + d.injected_total == d.balance_total + d.redeemed_total);
    let mut injections = Vec::new();
    let mut attack_window = None;
    let mut buyers_locked = Fraction { hit: 0, of: 0 };
    if let Some(a) = out.attacks.first() {
        let start = a.schedule.start_date;
        let n = a.schedule.daily_injections.len() as i64;
        let end = start + Duration::days(n - 1);
        attack_window = Some((start, end));
        let cumulative = |date: NaiveDate| {
            out.daily
                .iter()
                .find(|d| d.date == date)
                .map_or(Money::ZERO, |d| d.injected_total)
        };
        for i in 0..n {
            let d = start + Duration::days(i);
            injections.push(cumulative(d) - cumulative(d - Duration::days(1)));
        }
        let locked = locks.locked_between(start, end);
        buyers_locked = Fraction {
            hit: a.buyers.iter().filter(|b| locked.contains(b)).count(),
            of: a.buyers.len(),
        };
    }
    let buyer_segments: BTreeSet<&str> = spec.attacks.iter().map(|a| a.buyer_segment.as_str()).collect();
    let honest: Vec<PurseId> = out
        .population
        .purses
        .iter()
        .filter_map(|slot| {
            let seg = &spec.segments[slot.segment?];
            (seg.class.tier() == Tier::Consumer && !seg.counterfeit && !buyer_segments.contains(seg.id.as_str()))
                .then_some(slot.state.purse_id)
        })
        .collect();
    let honest_locked = Fraction {
        hit: honest.iter().filter(|id| locks.first_lock.contains_key(id)).count(),
        of: honest.len(),
    };

    let redemption = series.currency_series_through(sim.duration_days - 1);
    let base_end = attack_window.map_or(redemption.len(), |(s, _)| redemption.index_of(s).unwrap_or(0));
    let baseline_sigma = sample_sd(&redemption.values[base_end.saturating_sub(30)..base_end]);
    let det = &spec.detection;
    let currency = rolling_flags(&redemption, &RollingModel::from(det.currency))
        .map_err(|e| RunError::Invalid(format!("currency model: {e}")))?;
    let merchant_series = series.merchant_series();
    let last = sim.last_date().unwrap_or(sim.start_date);
    let cal = det.calibration_end.unwrap_or(last - Duration::days(6));
    let merchant = merchant_flags(
        &merchant_series,
        &RollingModel::from(det.merchant.model),
        det.merchant.system_k,
        cal,
    )
    .ok();
    Ok((
        Replicate {
            seed: sim.seed,
            ledger_digest,
            records: out.records,
            conserved_daily,
            injections,
            attack_window,
            buyers_locked,
            honest_locked,
            baseline_sigma,
            redemption,
            currency,
            merchant,
            merchant_series,
        },
        out,
    ))
}

pub fn sample_sd(v: &[i64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|x| *x as f64).sum::<f64>() / n;
    (v.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Smallest whole amount that, added to day `day` of `series`, makes `model`
/// flag that day. Found by bisection, which relies on flags being monotone in
/// the day's value.
pub fn min_detectable_at(series: &DailySeries, day: usize, model: &RollingModel) -> Option<i64> {
    let flagged = |extra: i64| {
        let mut s = series.clone();
        s.values[day] += extra;
        rolling_flags(&s, model).ok().map(|r| r.days[day].flagged)
    };
    if flagged(0)? {
        return Some(0);
    }
    let mut hi = 1i64;
    while !flagged(hi)? {
        hi = hi.checked_mul(2)?;
    }
    let mut lo = 0i64;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if flagged(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// The amount detected on at least `coverage` of the (series, day) cases:
/// the `coverage` quantile of the per-case minimum detectable amounts.
pub fn min_detectable(
    series: &[DailySeries],
    days: std::ops::Range<usize>,
    model: &RollingModel,
    coverage: f64,
) -> Option<i64> {
    let mut v = Vec::new();
    for s in series {
        for d in days.clone() {
            v.push(min_detectable_at(s, d, model)?);
        }
    }
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let i = ((coverage * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Some(v[i])
}

/// Seeds and ranges for a replicated street-corner check.
#[derive(Debug, Clone)]
pub struct CheckPlan {
    pub attack_seeds: Vec<u64>,
    pub quiet_seeds: Vec<u64>,
    /// Extra runs of the first attack seed for the determinism check.
    pub repeat_runs: usize,
    /// Days over which the minimum detectable injection is measured.
    pub mdi_days: std::ops::Range<usize>,
    pub mdi_coverage: f64,
}

impl Default for CheckPlan {
    fn default() -> Self {
        CheckPlan {
            attack_seeds: (1..=10).collect(),
            quiet_seeds: (1..=20).collect(),
            repeat_runs: 2,
            mdi_days: 60..170,
            mdi_coverage: 0.9,
        }
    }
}

/// One acceptance line: what was required and what the runs showed.
#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: expected {}; observed {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.expected,
            self.observed
        )
    }
}

#[derive(Debug, Clone)]
pub struct CheckRun {
    pub attack: Vec<Replicate>,
    pub quiet: Vec<Replicate>,
    pub criteria: Vec<Criterion>,
}

impl CheckRun {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

fn at_least(hit: usize, of: usize, share: f64) -> bool {
    of > 0 && hit as f64 >= share * of as f64
}

/// Runs the street-corner scenario over the plan's seeds, with and without
/// its attacks, and judges criteria 1 to 7.
pub fn check_street_corner(spec: &ScenarioSpec, plan: &CheckPlan) -> Result<CheckRun, RunError> {
    let attack: Vec<Replicate> = plan
        .attack_seeds
        .iter()
        .map(|s| replicate(&spec.with_seed(*s)).map(|r| r.0))
        .collect::<Result<_, _>>()?;
    let quiet_spec = spec.without_attacks();
    let quiet: Vec<Replicate> = plan
        .quiet_seeds
        .iter()
        .map(|s| replicate(&quiet_spec.with_seed(*s)).map(|r| r.0))
        .collect::<Result<_, _>>()?;
    let mut criteria = Vec::new();

    let broken: Vec<String> = attack
        .iter()
        .map(|r| ("attack", r))
        .chain(quiet.iter().map(|r| ("quiet", r)))
        .filter(|(_, r)| !r.conserved_daily)
        .map(|(k, r)| format!("{k} seed {}", r.seed))
        .collect();
    criteria.push(Criterion {
        id: 1,
        name: "conservation",
        expected: "issued + injected == balances + redeemed on every day of every run".into(),
        observed: if broken.is_empty() {
            format!("held on all {} runs", attack.len() + quiet.len())
        } else {
            format!("broken in {}", broken.join(", "))
        },
        pass: broken.is_empty() && !attack.is_empty(),
    });

    let mut det = Criterion {
        id: 2,
        name: "determinism",
        expected: format!(
            "{} runs of one seed share a digest; another seed differs",
            plan.repeat_runs + 1
        ),
        observed: "no attack seeds".into(),
        pass: false,
    };
    if let Some(first) = attack.first() {
        let mut digests = vec![first.ledger_digest.clone()];
        for _ in 0..plan.repeat_runs {
            digests.push(replicate(&spec.with_seed(first.seed))?.0.ledger_digest);
        }
        let same = digests.iter().all(|d| *d == digests[0]);
        let other = match attack.get(1) {
            Some(r) => r.ledger_digest.clone(),
            None => replicate(&spec.with_seed(first.seed.wrapping_add(1)))?.0.ledger_digest,
        };
        det.observed = format!(
            "seed {} digest {} in {}/{} runs; other seed {}",
            first.seed,
            &digests[0][..12],
            digests.iter().filter(|d| **d == digests[0]).count(),
            digests.len(),
            if other != digests[0] { "differs" } else { "identical" }
        );
        det.pass = same && other != digests[0];
    }
    criteria.push(det);

    let want: Vec<Money> = spec.attacks.first().map(|a| a.injections()).unwrap_or_default();
    let off: Vec<u64> = attack.iter().filter(|r| r.injections != want).map(|r| r.seed).collect();
    let show = |v: &[Money]| v.iter().map(|m| m.minor().to_string()).collect::<Vec<_>>().join(", ");
    criteria.push(Criterion {
        id: 3,
        name: "injection pattern",
        expected: format!(
            "[{}] from {}",
            show(&want),
            spec.attacks.first().map_or("-".into(), |a| a.start_date.to_string())
        ),
        observed: match (attack.first(), off.is_empty()) {
            (Some(r), true) => format!("[{}] on all {} seeds", show(&r.injections), attack.len()),
            (Some(_), false) => format!("differs on seeds {off:?}"),
            (None, _) => "no attack seeds".into(),
        },
        pass: !want.is_empty() && !attack.is_empty() && off.is_empty(),
    });

    let min_buyers = attack
        .iter()
        .map(|r| r.buyers_locked)
        .min_by(|a, b| a.value().total_cmp(&b.value()));
    let max_honest = attack
        .iter()
        .map(|r| r.honest_locked)
        .max_by(|a, b| a.value().total_cmp(&b.value()));
    criteria.push(Criterion {
        id: 4,
        name: "containment",
        expected: ">= 95% of buyers locked in the window and <= 1% of honest consumers ever locked, every seed".into(),
        observed: match (min_buyers, max_honest) {
            (Some(b), Some(h)) => format!("worst buyers {b}, worst honest {h}"),
            _ => "no attack seeds".into(),
        },
        pass: matches!((min_buyers, max_honest), (Some(b), Some(h)) if b.of > 0 && b.value() >= 0.95 && h.value() <= 0.01),
    });

    let (test, full) = spec
        .attacks
        .first()
        .and_then(|a| a.street_corner.as_ref())
        .map_or((0.0, 0.0), |s| (s.test.as_f64(), s.full.as_f64()));
    let setup_ok = attack
        .iter()
        .all(|r| r.baseline_sigma > 0.0 && full >= 5.0 * r.baseline_sigma && test <= r.baseline_sigma);
    let day2 = attack.iter().filter(|r| r.currency_alarm_day() == Some(2)).count();
    let days: Vec<String> = attack
        .iter()
        .map(|r| r.currency_alarm_day().map_or("-".into(), |d| d.to_string()))
        .collect();
    let sigma_max = attack.iter().map(|r| r.baseline_sigma).fold(0.0, f64::max);
    criteria.push(Criterion {
        id: 5,
        name: "currency alarm on attack day 2",
        expected: "first monthly-model alarm on day 2 in >= 9/10 seeds, with full >= 5σ and test <= 1σ".into(),
        observed: format!(
            "{day2}/{} on day 2 (days [{}]); largest σ {:.0}, {}",
            attack.len(),
            days.join(", "),
            sigma_max,
            if setup_ok { "setup holds" } else { "setup violated" }
        ),
        pass: setup_ok && at_least(day2, attack.len(), 0.9),
    });

    let series: Vec<DailySeries> = attack.iter().map(|r| r.redemption.clone()).collect();
    let base = RollingModel::from(spec.detection.currency);
    let mdi: Vec<Option<i64>> = crate::detection::Window::ALL
        .iter()
        .map(|w| {
            let model = RollingModel {
                window: *w,
                seasonal_adjust: false,
                ..base
            };
            min_detectable(&series, plan.mdi_days.clone(), &model, plan.mdi_coverage)
        })
        .collect();
    criteria.push(Criterion {
        id: 6,
        name: "relative sensitivity",
        expected: "minimum detectable injection daily >= weekly >= monthly".into(),
        observed: format!(
            "daily {}, weekly {}, monthly {}",
            mdi[0].map_or("-".into(), |v| v.to_string()),
            mdi[1].map_or("-".into(), |v| v.to_string()),
            mdi[2].map_or("-".into(), |v| v.to_string())
        ),
        pass: matches!(mdi[..], [Some(d), Some(w), Some(m)] if d >= w && w >= m),
    });

    let caught = attack.iter().filter(|r| r.merchant_alarms_in_window() > 0).count();
    let false_alarms: Vec<(u64, usize)> = quiet
        .iter()
        .map(|r| (r.seed, r.merchant.as_ref().map_or(0, |m| m.alarm_days())))
        .filter(|(_, n)| *n > 0)
        .collect();
    let quiet_ok = quiet.iter().all(|r| r.merchant.is_some());
    let worst_rate = quiet
        .iter()
        .filter_map(|r| r.merchant.as_ref().map(|m| m.flag_rate()))
        .fold(0.0, f64::max);
    criteria.push(Criterion {
        id: 7,
        name: "merchant system alarm",
        expected: ">= 9/10 attack seeds alarm in the window; 0 alarms and per-merchant flag rate <= 1% on quiet seeds"
            .into(),
        observed: format!(
            "{caught}/{} attack seeds; {} alarm days on {} quiet seeds {:?}; worst flag rate {:.4}",
            attack.len(),
            false_alarms.iter().map(|f| f.1).sum::<usize>(),
            quiet.len(),
            false_alarms.iter().map(|f| f.0).collect::<Vec<_>>(),
            worst_rate
        ),
        pass: at_least(caught, attack.len(), 0.9)
            && !quiet.is_empty()
            && quiet_ok
            && false_alarms.is_empty()
            && worst_rate <= 0.01,
    });

    Ok(CheckRun {
        attack,
        quiet,
        criteria,
    })
}
