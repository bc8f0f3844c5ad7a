use std::collections::BTreeMap;
use std::io;

use chrono::NaiveDate;
use thiserror::Error;

use crate::clock::SimClock;
use crate::config::{AlarmSource, ScenarioSpec};
use crate::detection::{self, RollingModel, SeriesCollector};
use crate::economy::{
    build_population, evolve_population, initial_balance_draw, issue_value, settle_member_day, EconomyError,
    Population, TxIds,
};
use crate::money::Money;
use crate::purse::{apply_transfer, authorize_transfer, recustomize, C3Command, C3Kind, ClassMatrix, LockReason, Tier};
use crate::record::{EventSet, PurseId, TransactionRecord, TxStatus, TxType};
use crate::rng::{RngError, SimRng, StreamKey};
use crate::scenario::{distribution_plan, inject_counterfeit, AttackSchedule, C3Channel, ScenarioError, TaintLedger};

use super::plan::{activate_cards, daily_plan, merchant_plan, Counterparties, PlannedTransaction};

/// Destination for ledger records as they are produced.
pub trait RecordSink {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()>;
}

impl RecordSink for Vec<TransactionRecord> {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        self.push(r.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl RecordSink for NullSink {
    fn record(&mut self, _: &TransactionRecord) -> io::Result<()> {
        Ok(())
    }
}

impl<A: RecordSink, B: RecordSink> RecordSink for (A, B) {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        self.0.record(r)?;
        self.1.record(r)
    }
}

impl<T: RecordSink + ?Sized> RecordSink for &mut T {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        (**self).record(r)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Economy(#[from] EconomyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{context}: {source}")]
    Draw { context: String, source: RngError },
    #[error("ledger output: {0}")]
    Sink(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

fn draw<T>(context: impl FnOnce() -> String, r: Result<T, RngError>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Draw {
        context: context(),
        source,
    })
}

/// End-of-day aggregates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayMetrics {
    pub date: NaiveDate,
    pub executed: [u64; 10],
    pub value: [i64; 10],
    pub denied: u64,
    pub new_ctl_locks: u64,
    pub locked_end_of_day: u64,
    pub issued_total: Money,
    pub redeemed_total: Money,
    pub injected_total: Money,
    pub balance_total: Money,
    pub live_purses: u64,
    pub births: u64,
    pub deaths: u64,
}

impl DayMetrics {
    fn new(date: NaiveDate) -> Self {
        DayMetrics {
            date,
            executed: [0; 10],
            value: [0; 10],
            denied: 0,
            new_ctl_locks: 0,
            locked_end_of_day: 0,
            issued_total: Money::ZERO,
            redeemed_total: Money::ZERO,
            injected_total: Money::ZERO,
            balance_total: Money::ZERO,
            live_purses: 0,
            births: 0,
            deaths: 0,
        }
    }

    pub fn redemption(&self) -> Money {
        Money::new(self.value[TxType::Redemption.index()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub name: String,
    pub schedule: AttackSchedule,
    /// Value actually injected on each schedule day.
    pub injected: Vec<Money>,
    pub buyers: Vec<PurseId>,
    pub batches_sold: u64,
    pub batches_refused: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub population: Population,
    pub taint: TaintLedger,
    pub daily: Vec<DayMetrics>,
    pub c3: C3Channel,
    pub attacks: Vec<AttackOutcome>,
    pub records: u64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Fund(PurseId),
    Tx(PlannedTransaction),
    Sweep(PurseId),
    Visit(PurseId),
    Inject(usize, Money),
    Sell(usize, Money),
    C3(usize),
}

struct AttackRuntime {
    counterfeiter_segment: usize,
    buyer_segment: usize,
    queue: Vec<PurseId>,
    cursor: usize,
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    pop: Population,
    taint: TaintLedger,
    matrix: ClassMatrix,
    c3: C3Channel,
    ids: TxIds,
    queue: BTreeMap<(u32, u64), Event>,
    seq: u64,
    sink: &'a mut dyn RecordSink,
    day: DayMetrics,
    daily: Vec<DayMetrics>,
    attacks: Vec<AttackOutcome>,
    attack_rt: Vec<AttackRuntime>,
    alarms: Option<SeriesCollector>,
    /// C3 entries waiting on an alarm, and whether each has fired.
    alarm_fired: Vec<bool>,
    records: u64,
}

fn build_matrix(spec: &ScenarioSpec) -> ClassMatrix {
    let mut m = ClassMatrix::standard();
    for o in &spec.class_matrix {
        m.set(o.payer, o.payee, o.tx_type, o.allowed);
    }
    m
}

/// C3 payload for a scenario entry. Kinds are checked at validation time.
pub fn c3_kind(kind: &str, value: Option<Money>) -> Option<C3Kind> {
    Some(match kind {
        "set_ctl_limit" => C3Kind::SetCtlLimit(value?),
        "set_purse_limit" => C3Kind::SetPurseLimit(value?),
        "lock" => C3Kind::Lock,
        "unlock" => C3Kind::Unlock,
        "reset_counters" => C3Kind::ResetCounters,
        _ => return None,
    })
}

/// Runs a validated scenario to completion, streaming every record to `sink`.
pub fn run(spec: &ScenarioSpec, sink: &mut dyn RecordSink) -> Result<RunOutput, RunError> {
    let seed = spec.simulator.seed;
    let pop = build_population(&spec.segments, spec.originator.working_float, seed)?;
    let mut attacks = Vec::new();
    let mut attack_rt = Vec::new();
    for a in &spec.attacks {
        let seg = |name: &str| {
            spec.segment_index(name)
                .ok_or_else(|| RunError::Invalid(format!("attack `{}`: unknown segment `{name}`", a.name)))
        };
        let schedule = AttackSchedule {
            start_date: a.start_date,
            daily_injections: a.injections(),
            price_discount: a.price_discount,
            batch: a.batch,
        };
        attacks.push(AttackOutcome {
            name: a.name.clone(),
            injected: vec![Money::ZERO; schedule.daily_injections.len()],
            schedule,
            buyers: Vec::new(),
            batches_sold: 0,
            batches_refused: 0,
        });
        attack_rt.push(AttackRuntime {
            counterfeiter_segment: seg(&a.counterfeiter_segment)?,
            buyer_segment: seg(&a.buyer_segment)?,
            queue: Vec::new(),
            cursor: 0,
        });
    }
    let wants_alarms = spec.c3.iter().any(|e| e.on_alarm.is_some());
    let mut sim = Sim {
        spec,
        pop,
        taint: TaintLedger::new(),
        matrix: build_matrix(spec),
        c3: C3Channel::default(),
        ids: TxIds::default(),
        queue: BTreeMap::new(),
        seq: 0,
        sink,
        day: DayMetrics::new(spec.simulator.start_date),
        daily: Vec::new(),
        attacks,
        attack_rt,
        alarms: wants_alarms.then(|| SeriesCollector::new(spec.simulator.start_date, spec.simulator.duration_days)),
        alarm_fired: vec![false; spec.c3.len()],
        records: 0,
    };
    for day in 0..spec.simulator.duration_days {
        sim.run_day(day)?;
    }
    Ok(RunOutput {
        population: sim.pop,
        taint: sim.taint,
        daily: sim.daily,
        c3: sim.c3,
        attacks: sim.attacks,
        records: sim.records,
    })
}

impl Sim<'_> {
    fn clock(&self, day: u32, hour: u8) -> SimClock {
        SimClock::at(self.spec.simulator.start_date, day, hour)
    }

    fn seed(&self) -> u64 {
        self.spec.simulator.seed
    }

    fn push(&mut self, abs_hour: u32, e: Event) {
        self.seq += 1;
        self.queue.insert((abs_hour, self.seq), e);
    }

    fn emit(&mut self, r: TransactionRecord) -> Result<(), RunError> {
        match r.status {
            TxStatus::Executed => {
                let i = r.tx_type.index();
                self.day.executed[i] += 1;
                self.day.value[i] += r.amount.minor();
            }
            TxStatus::Denied(_) => self.day.denied += 1,
        }
        if r.onchip_events.contains(EventSet::CTL_EXCEEDED) {
            self.day.new_ctl_locks += 1;
        }
        if let Some(c) = self.alarms.as_mut() {
            c.observe(&r);
        }
        self.records += 1;
        self.sink.record(&r)?;
        Ok(())
    }

    fn emit_all(&mut self, rs: Vec<TransactionRecord>) -> Result<(), RunError> {
        rs.into_iter().try_for_each(|r| self.emit(r))
    }

    fn contact(&mut self, a: PurseId, b: PurseId, clock: SimClock) -> Result<(), RunError> {
        if self.c3.is_empty() {
            return Ok(());
        }
        let ids = &mut self.ids;
        let recs = self.c3.exchange(&mut self.pop, a, b, clock, &mut || ids.next());
        self.emit_all(recs)
    }

    /// One chip-to-chip transfer through the full pipeline. Returns whether
    /// value moved.
    fn transfer(
        &mut self,
        payer: PurseId,
        payee: PurseId,
        tx_type: TxType,
        amount: Money,
        clock: SimClock,
    ) -> Result<bool, RunError> {
        if !self.pop.get(payer).alive || !self.pop.get(payee).alive {
            return Ok(false);
        }
        self.contact(payer, payee, clock)?;
        let payer_state = *self.pop.state(payer);
        let payee_state = *self.pop.state(payee);

        let mut shortfall = Money::ZERO;
        if tx_type == TxType::Withdrawal && payer_state.class.tier() == Tier::Member {
            let pending = self.pop.books[&payer].pending;
            shortfall = (amount - (payer_state.balance - pending)).max(Money::ZERO);
        }
        let mut funded = payer_state;
        funded.balance += shortfall;
        let decision = authorize_transfer(&funded, &payee_state, amount, tx_type, &self.matrix);
        if let Some(reason) = decision.deny_reason {
            let rec = TransactionRecord {
                tx_id: self.ids.next(),
                timestamp: clock,
                tx_type,
                status: TxStatus::Denied(reason),
                payer_id: Some(payer),
                payer_class: Some(payer_state.class),
                payee_id: payee,
                payee_class: payee_state.class,
                amount,
                payer_balance_after: Some(payer_state.balance),
                payee_balance_after: payee_state.balance,
                onchip_events: EventSet::EMPTY,
                counterfeit_taint: false,
                taint_amount: Money::ZERO,
            };
            self.emit(rec)?;
            return Ok(false);
        }
        if shortfall.is_positive() {
            let rec = issue_value(&mut self.pop, payer, shortfall, clock, self.ids.next())?;
            self.emit(rec)?;
        }
        let payer_state = *self.pop.state(payer);
        let out = apply_transfer(&payer_state, &payee_state, amount, tx_type, clock, self.ids.next());
        let moved = self.taint.transfer(payer, payee, amount, payer_state.balance);
        self.pop.get_mut(payer).state = out.payer;
        self.pop.get_mut(payee).state = out.payee;
        if let Some(book) = self.pop.books.get_mut(&payee) {
            book.pending += amount;
        }
        if out.events.contains(EventSet::PURSE_LOCKED) && payee_state.class.tier() == Tier::Consumer {
            if let Some(delay) = self.pop.segment_of(payee).and_then(|s| s.lock_visit_delay_hours) {
                self.push(clock.tertiary_period + delay, Event::Visit(payee));
            }
        }
        let mut rec = out.record;
        rec.taint_amount = moved;
        rec.counterfeit_taint = moved.is_positive();
        self.emit(rec)?;
        Ok(true)
    }

    fn visit(&mut self, id: PurseId, clock: SimClock) -> Result<(), RunError> {
        let slot = self.pop.get(id);
        if !slot.alive || slot.state.lock != Some(LockReason::CtlExceeded) {
            return Ok(());
        }
        let Some(home) = slot.home.filter(|h| self.pop.get(*h).alive) else {
            return Ok(());
        };
        self.contact(id, home, clock)?;
        let member = *self.pop.state(home);
        let (after, rec) = recustomize(self.pop.state(id), None, &member, clock, self.ids.next())
            .expect("home member re-customizes its consumer");
        self.pop.get_mut(id).state = after;
        self.emit(rec)?;

        let seg = self.pop.get(id).segment;
        let frac = self
            .spec
            .attacks
            .iter()
            .zip(&self.attack_rt)
            .filter(|(_, rt)| Some(rt.buyer_segment) == seg)
            .map(|(a, _)| a.cashout_fraction)
            .fold(0.0, f64::max);
        let held = self.taint.taint_of(id);
        if frac > 0.0 && held.is_positive() {
            let amount = Money::new((frac * held.as_f64()).floor() as i64);
            if amount.is_positive() {
                self.transfer(id, home, TxType::Deposit, amount, clock)?;
            }
        }
        Ok(())
    }

    fn sell(&mut self, ai: usize, amount: Money, clock: SimClock) -> Result<(), RunError> {
        let Some(&cf) = self.pop.roster[self.attack_rt[ai].counterfeiter_segment].first() else {
            return Err(RunError::Invalid(format!(
                "attack `{}`: counterfeiter segment is empty",
                self.attacks[ai].name
            )));
        };
        let n = self.attack_rt[ai].queue.len();
        for _ in 0..n {
            let rt = &mut self.attack_rt[ai];
            let buyer = rt.queue[rt.cursor % n];
            rt.cursor += 1;
            if !self.pop.get(buyer).alive {
                continue;
            }
            if self.transfer(cf, buyer, TxType::ConsumerToConsumer, amount, clock)? {
                self.attacks[ai].batches_sold += 1;
                return Ok(());
            }
            self.attacks[ai].batches_refused += 1;
        }
        Ok(())
    }

    fn inject(&mut self, ai: usize, amount: Money, clock: SimClock) -> Result<(), RunError> {
        let Some(&cf) = self.pop.roster[self.attack_rt[ai].counterfeiter_segment].first() else {
            return Err(RunError::Invalid(format!(
                "attack `{}`: counterfeiter segment is empty",
                self.attacks[ai].name
            )));
        };
        let rec = inject_counterfeit(&mut self.pop, &mut self.taint, cf, amount, clock, self.ids.next())?;
        self.emit(rec)?;
        let a = &mut self.attacks[ai];
        let d = (clock.date - a.schedule.start_date).num_days() as usize;
        if let Some(slot) = a.injected.get_mut(d) {
            *slot += amount;
        }
        Ok(())
    }

    fn issue_c3(&mut self, entry: usize, clock: SimClock) -> Result<(), RunError> {
        let e = &self.spec.c3[entry];
        let kind =
            c3_kind(&e.kind, e.value).ok_or_else(|| RunError::Invalid(format!("c3 `{}`: bad command kind", e.name)))?;
        let cmd = C3Command {
            kind,
            target: e.target.selector(),
            issue_time: clock,
        };
        let ids = &mut self.ids;
        let recs = self
            .c3
            .deliver_c3(&mut self.pop, &e.name, cmd, clock, &mut || ids.next())?;
        self.emit_all(recs)
    }

    fn run_day(&mut self, day: u32) -> Result<(), RunError> {
        let spec = self.spec;
        let seed = self.seed();
        let c0 = self.clock(day, 0);
        let date = c0.date;
        let base = day * 24;
        self.day = DayMetrics::new(date);

        // Population step at month boundaries, initial funding on day 0.
        if day == 0 {
            let ids: Vec<PurseId> = self.pop.live_ids().collect();
            for id in ids {
                self.push(base, Event::Fund(id));
            }
        } else if c0.primary_period != self.clock(day - 1, 0).primary_period {
            let (recs, evo) = evolve_population(&mut self.pop, &mut self.taint, c0, &mut self.ids)?;
            self.emit_all(recs)?;
            self.day.births = evo.born.len() as u64;
            self.day.deaths = evo.died.len() as u64;
            for id in evo.born {
                self.push(base, Event::Fund(id));
            }
        }

        // On-chip periodic CTL reset for unlocked purses.
        for si in 0..spec.segments.len() {
            if let Some(i) = spec.segments[si].ctl_reset_interval_days.filter(|i| *i > 0) {
                if day > 0 && day.is_multiple_of(i) {
                    for id in self.pop.roster[si].clone() {
                        let s = &mut self.pop.get_mut(id).state;
                        if !s.is_locked() {
                            s.ctl_accumulated = Money::ZERO;
                        }
                    }
                }
            }
        }

        // Scheduled and alarm-triggered C3 commands.
        for (i, e) in spec.c3.iter().enumerate() {
            if let Some(at) = e.at.filter(|a| a.date == date) {
                self.push(base + at.hour as u32, Event::C3(i));
            }
        }

        // Attacks.
        for ai in 0..self.attacks.len() {
            let a = &spec.attacks[ai];
            let Some(amount) = self.attacks[ai].schedule.amount_on(date) else {
                continue;
            };
            if self.attack_rt[ai].queue.is_empty() {
                let mut q = self.pop.roster[self.attack_rt[ai].buyer_segment].clone();
                let mut rng = SimRng::stream(seed, StreamKey::new("buyers", ai as u64, 0));
                rng.shuffle(&mut q);
                self.attacks[ai].buyers = q.clone();
                self.attack_rt[ai].queue = q;
            }
            if !amount.is_positive() {
                continue;
            }
            self.push(base + a.inject_hour as u32, Event::Inject(ai, amount));
            let mut rng = SimRng::stream(seed, StreamKey::new("attack", ai as u64, day as u64));
            let plan = distribution_plan(amount, &a.batch, a.distribution_hours, &mut rng)?;
            for (h, b) in plan {
                self.push(base + h as u32, Event::Sell(ai, b));
            }
        }

        // Everyday behaviour.
        let consumers: Vec<PurseId> = (0..spec.segments.len())
            .filter(|si| {
                let s = &spec.segments[*si];
                s.class.tier() == Tier::Consumer && !s.counterfeit
            })
            .flat_map(|si| self.pop.roster[si].iter().copied())
            .collect();
        for si in 0..spec.segments.len() {
            let seg = &spec.segments[si];
            let tier = seg.class.tier();
            if seg.counterfeit || !matches!(tier, Tier::Consumer | Tier::Merchant) {
                continue;
            }
            let roster = self.pop.roster[si].clone();
            let mut arng = SimRng::stream(seed, StreamKey::new("activate", si as u64, day as u64));
            let active = draw(
                || format!("segment `{}` activation", seg.id),
                activate_cards(&roster, seg, &mut arng),
            )?;
            if tier == Tier::Merchant {
                for id in active {
                    let mut rng = SimRng::stream(seed, StreamKey::new("plan", id.0 as u64, day as u64));
                    let plan = draw(
                        || format!("segment `{}` refunds", seg.id),
                        merchant_plan(id, seg, &consumers, &spec.calendar, date, &mut rng),
                    )?;
                    for p in plan {
                        self.push(base + p.hour as u32, Event::Tx(p));
                    }
                }
                for id in roster {
                    self.push(base + seg.sweep_hour as u32, Event::Sweep(id));
                }
                continue;
            }
            let merchants = self.pop.purchase_pool(si);
            let multiplier = spec
                .attacks
                .iter()
                .zip(&self.attack_rt)
                .filter(|(_, rt)| rt.buyer_segment == si)
                .map(|(a, _)| a.spend_multiplier)
                .fold(1.0, f64::max);
            for id in active {
                let Some(home) = self.pop.get(id).home else { continue };
                let mult = if self.taint.taint_of(id).is_positive() {
                    multiplier
                } else {
                    1.0
                };
                let mut rng = SimRng::stream(seed, StreamKey::new("plan", id.0 as u64, day as u64));
                let pools = Counterparties {
                    merchants: &merchants,
                    consumers: &consumers,
                };
                let plan = draw(
                    || format!("segment `{}` plan", seg.id),
                    daily_plan(
                        id,
                        home,
                        seg,
                        self.pop.circles.get(&id),
                        pools,
                        &spec.calendar,
                        date,
                        mult,
                        &mut rng,
                    ),
                )?;
                for p in plan {
                    self.push(base + p.hour as u32, Event::Tx(p));
                }
            }
        }

        // Execute in (hour, sequence) order; visits may add events as we go.
        let end = base + 24;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 >= end {
                break;
            }
            let ((abs, _), ev) = entry.remove_entry();
            let clock = self.clock(day, (abs - base) as u8);
            match ev {
                Event::Fund(id) => {
                    let slot = self.pop.get(id);
                    let (Some(home), Some(seg)) = (slot.home, self.pop.segment_of(id)) else {
                        continue;
                    };
                    let amount = draw(
                        || format!("segment `{}` balance", seg.id),
                        initial_balance_draw(seg, seed, id),
                    )?;
                    if amount.is_positive() && !slot.state.compromised {
                        self.transfer(home, id, TxType::Withdrawal, amount, clock)?;
                    }
                }
                Event::Tx(p) => {
                    self.transfer(p.payer, p.payee, p.tx_type, p.amount, clock)?;
                }
                Event::Sweep(id) => {
                    let slot = self.pop.get(id);
                    let bal = slot.state.balance;
                    if let (true, Some(home)) = (bal.is_positive() && slot.alive, slot.home) {
                        self.transfer(id, home, TxType::Deposit, bal, clock)?;
                    }
                }
                Event::Visit(id) => self.visit(id, clock)?,
                Event::Inject(ai, amount) => self.inject(ai, amount, clock)?,
                Event::Sell(ai, amount) => self.sell(ai, amount, clock)?,
                Event::C3(i) => self.issue_c3(i, clock)?,
            }
        }

        // Settlement, bookkeeping and checks.
        let close = self.clock(day, 23);
        for m in self.pop.members() {
            let rec = settle_member_day(&mut self.pop, &mut self.taint, m, close, self.ids.next());
            self.emit(rec)?;
        }
        self.c3.close_day(&self.pop, day);
        let o = self.pop.originator;
        let balances = self.pop.total_balance();
        assert_eq!(
            o.issued_total + self.taint.counterfeit_injected_total,
            balances + o.redeemed_total,
            "conservation violated on {date}"
        );
        assert!(self.taint.is_balanced(), "taint partition violated on {date}");
        self.day.issued_total = o.issued_total;
        self.day.redeemed_total = o.redeemed_total;
        self.day.injected_total = self.taint.counterfeit_injected_total;
        self.day.balance_total = balances;
        self.day.live_purses = self.pop.live_ids().count() as u64;
        self.day.locked_end_of_day = self.pop.live_ids().filter(|id| self.pop.state(*id).is_locked()).count() as u64;
        self.daily.push(self.day.clone());
        self.check_alarms(day)
    }

    /// In-run detection feeding alarm-triggered C3 entries.
    fn check_alarms(&mut self, day: u32) -> Result<(), RunError> {
        let Some(col) = &self.alarms else { return Ok(()) };
        let spec = self.spec;
        let det = &spec.detection;
        let today = self.clock(day, 0).date;
        let mut fired = [false; 2];
        let needs = |src| {
            spec.c3
                .iter()
                .zip(&self.alarm_fired)
                .any(|(e, f)| !f && e.on_alarm == Some(src))
        };
        if needs(AlarmSource::Currency) {
            let series = col.currency_series_through(day);
            if let Ok(r) = detection::rolling_flags(&series, &RollingModel::from(det.currency)) {
                fired[0] = r.days.last().is_some_and(|d| d.flagged);
            }
        }
        if needs(AlarmSource::Merchant) {
            let series = col.merchant_series_through(day);
            let cal = det
                .calibration_end
                .unwrap_or_else(|| spec.simulator.last_date().unwrap_or(today) - chrono::Duration::days(6));
            if let Ok(r) = detection::merchant_flags(
                &series,
                &RollingModel::from(det.merchant.model),
                det.merchant.system_k,
                cal,
            ) {
                fired[1] = r.system.last().is_some_and(|d| d.date == today && d.alarm);
            }
        }
        let next = (day + 1) * 24;
        for i in 0..spec.c3.len() {
            let hit = match spec.c3[i].on_alarm {
                Some(AlarmSource::Currency) => fired[0],
                Some(AlarmSource::Merchant) => fired[1],
                None => false,
            };
            if hit && !self.alarm_fired[i] {
                self.alarm_fired[i] = true;
                self.push(next, Event::C3(i));
            }
        }
        Ok(())
    }
}
