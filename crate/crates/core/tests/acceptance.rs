//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io;

use ecash_sim::detection::{merchant_flags, rolling_flags, DailySeries, Domain, RollingModel, SeriesCollector, Window};
use ecash_sim::ledger_io::{build_report, scenario_digest, LedgerHeader, FORMAT_VERSION};
use ecash_sim::money::Money;
use ecash_sim::record::TransactionRecord;
use ecash_sim::replication::{check_street_corner, replicate, CheckPlan, Criterion};
use ecash_sim::rng::{poisson_draw, truncated_normal_draw, SimRng, StreamKey};
use ecash_sim::txgen::{run, RecordSink};

use common::{
    brute_merchant_deposits, brute_redemption, brute_stats, corpus, load, rel_close, replay_ctl, run_digest, run_vec,
};

const DRAWS: usize = 100_000;

fn criterion(id: u8, name: &'static str, expected: &str, observed: String, pass: bool) -> Criterion {
    Criterion {
        id,
        name,
        expected: expected.into(),
        observed,
        pass,
    }
}

fn corpus_conservation() -> (Vec<String>, usize) {
    let mut broken = Vec::new();
    let all = corpus();
    for (name, spec) in &all {
        let (_, out) = run_digest(spec);
        let daily = out
            .daily
            .iter()
            .all(|m| m.issued_total + m.injected_total == m.balance_total + m.redeemed_total);
        if !daily || !out.taint.is_balanced() {
            broken.push(name.clone());
        }
    }
    (broken, all.len())
}

fn sample_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, m4)
}

/// Standard error of the sample variance given the fourth central moment.
fn se_var(var: f64, m4: f64, n: usize) -> f64 {
    let n = n as f64;
    ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).sqrt()
}

fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

fn distributions() -> Criterion {
    let mut notes = Vec::new();
    let mut pass = true;
    for (i, lambda) in [0.4, 2.0, 30.0].into_iter().enumerate() {
        let mut r = SimRng::stream(8, StreamKey::new("acceptance-poisson", i as u64, 0));
        let xs: Vec<f64> = (0..DRAWS)
            .map(|_| poisson_draw(&mut r, lambda).unwrap() as f64)
            .collect();
        let (mean, var, _) = sample_moments(&xs);
        // Poisson: variance λ, fourth central moment λ(1 + 3λ).
        let se_m = (lambda / DRAWS as f64).sqrt();
        let se_v = se_var(lambda, lambda * (1.0 + 3.0 * lambda), DRAWS);
        let ok = (mean - lambda).abs() < 3.0 * se_m && (var - lambda).abs() < 3.0 * se_v;
        pass &= ok;
        notes.push(format!("Poisson({lambda}) mean {mean:.4} var {var:.4}"));
    }
    // Normal(μ, σ) on [μ − σ, μ + σ]: the mean stays μ and the variance is
    // σ²·(1 − 2φ(1)/(2Φ(1) − 1)).
    let (mu, sigma) = (1500.0, 600.0);
    let phi1 = 0.241_970_724_519_143_37;
    let mass = 0.682_689_492_137_085_9;
    let var_want = sigma * sigma * (1.0 - 2.0 * phi1 / mass);
    let mut r = SimRng::stream(8, StreamKey::new("acceptance-tn", 0, 0));
    let xs: Vec<f64> = (0..DRAWS)
        .map(|_| truncated_normal_draw(&mut r, mu, sigma, mu - sigma, mu + sigma).unwrap())
        .collect();
    let (mean, var, m4) = sample_moments(&xs);
    let ok =
        (mean - mu).abs() < 3.0 * (var / DRAWS as f64).sqrt() && (var - var_want).abs() < 3.0 * se_var(var, m4, DRAWS);
    pass &= ok;
    notes.push(format!(
        "truncated Normal mean {mean:.2} var {var:.0} (want {var_want:.0})"
    ));

    // Deposits of merchants with at least 60 active days, on quiet runs.
    let spec = load("paper-fig2").without_attacks();
    let mut worst: f64 = 0.0;
    let (mut merchants, mut skewed) = (0, 0);
    for seed in [1, 2] {
        let (rep, _) = replicate(&spec.with_seed(seed)).unwrap();
        for s in rep.merchant_series.values() {
            let active: Vec<f64> = s
                .values
                .iter()
                .filter(|v| **v > 0)
                .map(|v| (*v as f64).ln_1p())
                .collect();
            if active.len() >= 60 {
                let g = skewness(&active).abs();
                worst = worst.max(g);
                merchants += 1;
                skewed += usize::from(g >= 1.0);
            }
        }
    }
    pass &= merchants > 0 && skewed == 0;
    notes.push(format!(
        "log deposits |skew| >= 1 for {skewed} of {merchants} merchant runs (worst {worst:.3})"
    ));
    criterion(
        8,
        "distribution calibration",
        "moments within 3 SE over 1e5 draws; |skew| < 1 for merchants with >= 60 active days",
        notes.join("; "),
        pass,
    )
}

fn oracle_equivalence() -> Criterion {
    let spec = load("small-attack");
    let (out, recs) = run_vec(&spec);
    let consumers = spec
        .segments
        .iter()
        .find(|s| s.id == "households")
        .map_or(0, |s| s.initial_count);
    let mut problems = Vec::new();
    let ctl = match replay_ctl(&spec, &out, &recs) {
        Ok(c) => format!(
            "CTL exact on {} purses ({} locks, {} read-backs)",
            c.finals, c.locks, c.read_backs
        ),
        Err(e) => {
            problems.push(e);
            "CTL replay failed".into()
        }
    };
    let (start, days) = (spec.simulator.start_date, spec.simulator.duration_days as usize);
    let mut series = vec![(
        "redemption".to_string(),
        DailySeries {
            start,
            values: brute_redemption(&recs, start, days),
        },
    )];
    for (id, (first, v)) in brute_merchant_deposits(&recs, start, days) {
        series.push((
            format!("merchant {id}"),
            DailySeries {
                start: start + chrono::Duration::days(first as i64),
                values: v,
            },
        ));
    }
    let mut compared = 0usize;
    let mut worst: f64 = 0.0;
    for window in [Window::Daily, Window::Weekly] {
        for domain in [Domain::Linear, Domain::Log] {
            let model = RollingModel::new(window, 3.0, domain);
            for (what, s) in &series {
                let Ok(report) = rolling_flags(s, &model) else { continue };
                for (d, day) in report.days.iter().enumerate() {
                    let Some(e) = brute_stats(&s.values, d, window, domain, model.k) else {
                        continue;
                    };
                    let got = [day.x, day.mean, day.std, day.threshold(model.k)];
                    for (g, w) in got.iter().zip([e.x, e.mean, e.std, e.threshold]) {
                        let g = g.unwrap_or(f64::NAN);
                        worst = worst.max((g - w).abs() / w.abs().max(1e-300));
                        if !rel_close(g, w, 1e-9) {
                            problems.push(format!("{what} {} day {d}: {g} vs {w}", window.as_str()));
                        }
                    }
                    if day.flagged != (e.x > e.threshold) {
                        problems.push(format!("{what} {} day {d}: flag differs", window.as_str()));
                    }
                    compared += 1;
                }
            }
        }
    }
    let pass = problems.is_empty() && compared > 0 && days == 30 && consumers == 50;
    criterion(
        9,
        "oracle equivalence",
        "30-day, 50-consumer run: CTL exact, model statistics within 1e-9 relative",
        format!(
            "{ctl}; {compared} model-days (daily/weekly windows; monthly needs > 30 days), worst relative error {worst:.1e}{}",
            problems.first().map_or(String::new(), |p| format!("; first mismatch {p}"))
        ),
        pass,
    )
}

/// Rewrites the ground-truth columns before passing rows on.
struct Scramble<S> {
    rng: SimRng,
    inner: S,
}

impl<S: RecordSink> RecordSink for Scramble<S> {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        let mut r = r.clone();
        r.counterfeit_taint = self.rng.bernoulli(0.5);
        r.taint_amount = Money::new(self.rng.below(1_000_000) as i64);
        self.inner.record(&r)
    }
}

fn detector_purity() -> Criterion {
    let mut notes = Vec::new();
    let mut pass = true;

    // Streaming monitors on the full street-corner run.
    let spec = load("paper-fig2");
    let (start, days) = (spec.simulator.start_date, spec.simulator.duration_days);
    let mut plain = SeriesCollector::new(start, days);
    run(&spec, &mut plain).unwrap();
    let mut scrambled = Scramble {
        rng: SimRng::stream(99, StreamKey::new("scramble", 0, 0)),
        inner: SeriesCollector::new(start, days),
    };
    run(&spec, &mut scrambled).unwrap();
    let currency = RollingModel::from(spec.detection.currency);
    let merchant = RollingModel::from(spec.detection.merchant.model);
    let cal_end = spec.simulator.last_date().unwrap() - chrono::Duration::days(6);
    let views = |c: &SeriesCollector| {
        (
            rolling_flags(&c.currency_series().unwrap(), &currency).unwrap(),
            merchant_flags(
                &c.merchant_series(),
                &merchant,
                spec.detection.merchant.system_k,
                cal_end,
            )
            .unwrap(),
        )
    };
    let (a, b) = (views(&plain), views(&scrambled.inner));
    let same = a == b;
    pass &= same && a.0.first_alarm.is_some();
    notes.push(format!(
        "street-corner monitors {} (currency first alarm {:?}, merchant alarm days {})",
        if same { "identical" } else { "differ" },
        a.0.first_alarm,
        a.1.alarm_days()
    ));

    // The report path over a stored ledger.
    let spec = load("countermeasure");
    let (_, recs) = run_vec(&spec);
    let mut rng = SimRng::stream(99, StreamKey::new("scramble", 1, 0));
    let mangled: Vec<TransactionRecord> = recs
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.counterfeit_taint = !r.counterfeit_taint;
            r.taint_amount = Money::new(rng.below(1_000_000) as i64);
            r
        })
        .collect();
    let header = LedgerHeader {
        format_version: FORMAT_VERSION,
        scenario_digest: scenario_digest(&spec),
        seed: spec.simulator.seed,
        start_date: spec.simulator.start_date,
        duration_days: spec.simulator.duration_days,
    };
    let report =
        |rows: &[TransactionRecord]| build_report(&header, rows.iter().cloned().map(Ok), &spec.detection).unwrap();
    let (x, y) = (report(&recs), report(&mangled));
    let same = x.days == y.days && x.currency == y.currency && x.merchant == y.merchant;
    pass &= same;
    notes.push(format!(
        "countermeasure report {}",
        if same { "identical" } else { "differs" }
    ));

    criterion(
        10,
        "detector purity",
        "monitor outputs unchanged when the counterfeit_taint column is scrambled",
        notes.join("; "),
        pass,
    )
}

fn main() {
    let mut criteria: BTreeMap<u8, Criterion> = BTreeMap::new();

    let spec = load("paper-fig2");
    match check_street_corner(&spec, &CheckPlan::default()) {
        Ok(check) => {
            for c in check.criteria {
                criteria.insert(c.id, c);
            }
        }
        Err(e) => {
            let c = criterion(1, "street-corner runs", "replicates run", format!("error: {e}"), false);
            criteria.insert(1, c);
        }
    }
    let (broken, n) = corpus_conservation();
    if let Some(c) = criteria.get_mut(&1) {
        c.expected = format!("{}; and on every corpus scenario", c.expected);
        c.observed = if broken.is_empty() {
            format!("{}; held on all {n} corpus scenarios", c.observed)
        } else {
            format!("{}; broken in {}", c.observed, broken.join(", "))
        };
        c.pass &= broken.is_empty();
    }
    for c in [distributions(), oracle_equivalence(), detector_purity()] {
        criteria.insert(c.id, c);
    }

    for c in criteria.values() {
        println!("{c}");
    }
    let failed = criteria.values().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
