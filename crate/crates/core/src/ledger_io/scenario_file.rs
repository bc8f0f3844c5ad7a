//! Scenario files: TOML in, validated [`ScenarioSpec`] out.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{NormalParams, ScenarioSpec, SegmentSpec, TxParams};
use crate::money::Money;
use crate::purse::Tier;
use crate::record::TxType;
use crate::scenario::MAX_C3_COMMANDS;
use crate::txgen::engine::c3_kind;

/// One problem found in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioIssue {
    /// Dotted key path, e.g. `segments[2].birth_rate`. Empty for syntax errors.
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.path.is_empty()) {
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (Some(l), false) => write!(f, "line {l}: {}: {}", self.path, self.message),
            (None, _) => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

/// Every problem found, in file order where known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioErrors(pub Vec<ScenarioIssue>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Bare TOML dates become ISO strings so they deserialize like quoted ones.
fn normalize_dates(v: &mut toml::Value) {
    match v {
        toml::Value::Datetime(d) if d.time.is_none() && d.offset.is_none() => {
            *v = toml::Value::String(d.to_string());
        }
        toml::Value::Array(a) => a.iter_mut().for_each(normalize_dates),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, x)| normalize_dates(x)),
        _ => {}
    }
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> ScenarioIssue {
    ScenarioIssue {
        path: path.into(),
        line: None,
        message: message.into(),
    }
}

/// Parses and validates a scenario document.
///
/// Syntax errors stop parsing and carry a line number. Otherwise unknown
/// keys and semantic problems are all reported, each with its key path.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioErrors> {
    let mut value: toml::Value = match text.parse::<toml::Table>() {
        Ok(t) => toml::Value::Table(t),
        Err(e) => {
            return Err(ScenarioErrors(vec![ScenarioIssue {
                path: String::new(),
                line: e.span().map(|s| line_of(text, s.start)),
                message: e.message().trim().to_string(),
            }]));
        }
    };
    normalize_dates(&mut value);
    let mut unknown = Vec::new();
    let mut on_unknown = |p: serde_ignored::Path<'_>| unknown.push(p.to_string());
    let de = serde_ignored::Deserializer::new(value, &mut on_unknown);
    let spec: ScenarioSpec = match serde_path_to_error::deserialize(de) {
        Ok(s) => s,
        Err(e) => {
            let path = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            return Err(ScenarioErrors(vec![issue(
                if path == "." { String::new() } else { path },
                message,
            )]));
        }
    };
    let mut issues: Vec<ScenarioIssue> = unknown.into_iter().map(|p| issue(p, "unknown key")).collect();
    issues.extend(validate(&spec).0);
    if issues.is_empty() {
        Ok(spec)
    } else {
        Err(ScenarioErrors(issues))
    }
}

/// Reads and parses a scenario file. I/O failures are reported as a single
/// issue.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ScenarioErrors(vec![ScenarioIssue {
            path: String::new(),
            line: None,
            message: format!("{}: {e}", path.display()),
        }])
    })?;
    parse_scenario(&text)
}

#[derive(Default)]
struct Checker(Vec<ScenarioIssue>);

impl Checker {
    fn err(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ScenarioIssue {
            path: path.into(),
            line: None,
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: impl FnOnce() -> String, message: &str) {
        if !ok {
            self.err(path(), message);
        }
    }

    fn non_negative(&mut self, path: &str, v: f64) {
        self.check(
            v.is_finite() && v >= 0.0,
            || path.into(),
            "must be a finite number >= 0",
        );
    }

    fn positive(&mut self, path: &str, v: f64) {
        self.check(v.is_finite() && v > 0.0, || path.into(), "must be a finite number > 0");
    }

    fn probability(&mut self, path: &str, v: f64) {
        self.check((0.0..=1.0).contains(&v), || path.into(), "must be in [0, 1]");
    }

    fn money_positive(&mut self, path: &str, v: Money) {
        self.check(v.is_positive(), || path.into(), "must be > 0");
    }

    fn normal(&mut self, path: &str, p: NormalParams) {
        self.non_negative(&format!("{path}.mean"), p.mean);
        self.non_negative(&format!("{path}.sd"), p.sd);
    }

    fn tx(&mut self, path: &str, p: &TxParams) {
        self.non_negative(&format!("{path}.rate"), p.rate);
        self.positive(&format!("{path}.mean"), p.mean);
        self.non_negative(&format!("{path}.sd"), p.sd);
    }

    fn hour(&mut self, path: &str, h: u8) {
        self.check(h < 24, || path.into(), "must be an hour in 0..=23");
    }
}

fn allowed_tx(tier: Tier) -> &'static [TxType] {
    match tier {
        Tier::Consumer => &[
            TxType::Purchase,
            TxType::ConsumerToConsumer,
            TxType::Deposit,
            TxType::Withdrawal,
        ],
        Tier::Merchant => &[TxType::Refund],
        _ => &[],
    }
}

/// Semantic checks on an already-typed spec. All problems are collected.
pub fn validate(spec: &ScenarioSpec) -> ScenarioErrors {
    let mut c = Checker::default();
    let sim = &spec.simulator;
    c.check(
        sim.duration_days >= 1,
        || "simulator.duration_days".into(),
        "must be at least 1",
    );
    let first = sim.start_date;
    let last = sim.last_date().unwrap_or(first);
    let in_run = |d: chrono::NaiveDate| d >= first && d <= last;

    let cal = &spec.calendar;
    c.check(
        cal.day_of_week_factor.len() == 7,
        || "calendar.day_of_week_factor".into(),
        "needs 7 entries (Monday to Sunday)",
    );
    c.check(
        cal.month_factor.len() == 12,
        || "calendar.month_factor".into(),
        "needs 12 entries",
    );
    c.check(
        cal.hourly_profile.len() == 24,
        || "calendar.hourly_profile".into(),
        "needs 24 entries",
    );
    for (name, v) in [
        ("day_of_week_factor", &cal.day_of_week_factor),
        ("month_factor", &cal.month_factor),
        ("hourly_profile", &cal.hourly_profile),
    ] {
        for (i, x) in v.iter().enumerate() {
            c.non_negative(&format!("calendar.{name}[{i}]"), *x);
        }
    }
    c.check(
        cal.hourly_profile.iter().sum::<f64>() > 0.0,
        || "calendar.hourly_profile".into(),
        "needs at least one positive weight",
    );
    c.non_negative("calendar.holiday_factor", cal.holiday_factor);
    c.check(
        spec.originator.working_float >= Money::ZERO,
        || "originator.working_float".into(),
        "must be >= 0",
    );

    // Segments.
    c.check(
        !spec.segments.is_empty(),
        || "segments".into(),
        "at least one segment is required",
    );
    let mut ids = BTreeSet::new();
    for (i, s) in spec.segments.iter().enumerate() {
        let p = format!("segments[{i}]");
        if s.id.is_empty() {
            c.err(format!("{p}.id"), "must not be empty");
        } else if !ids.insert(s.id.as_str()) {
            c.err(format!("{p}.id"), format!("duplicate segment id `{}`", s.id));
        }
        check_segment(&mut c, spec, &p, s);
    }
    let members = spec
        .segments
        .iter()
        .filter(|s| s.class.tier() == Tier::Member && !s.counterfeit);
    c.check(
        members.map(|s| s.initial_count).sum::<u32>() > 0,
        || "segments".into(),
        "at least one honest member purse is required",
    );

    // Attacks.
    let mut names = BTreeSet::new();
    for (i, a) in spec.attacks.iter().enumerate() {
        let p = format!("attacks[{i}]");
        if !names.insert(a.name.as_str()) {
            c.err(format!("{p}.name"), format!("duplicate attack name `{}`", a.name));
        }
        match spec.segment_index(&a.counterfeiter_segment).map(|j| &spec.segments[j]) {
            None => c.err(
                format!("{p}.counterfeiter_segment"),
                format!("unknown segment `{}`", a.counterfeiter_segment),
            ),
            Some(s) => {
                c.check(
                    s.counterfeit,
                    || format!("{p}.counterfeiter_segment"),
                    "segment must be marked counterfeit",
                );
                c.check(
                    s.class.tier() == Tier::Consumer,
                    || format!("{p}.counterfeiter_segment"),
                    "segment must hold consumer purses",
                );
                c.check(
                    s.initial_count > 0,
                    || format!("{p}.counterfeiter_segment"),
                    "segment is empty",
                );
            }
        }
        match spec.segment_index(&a.buyer_segment).map(|j| &spec.segments[j]) {
            None => c.err(
                format!("{p}.buyer_segment"),
                format!("unknown segment `{}`", a.buyer_segment),
            ),
            Some(s) => {
                c.check(
                    !s.counterfeit,
                    || format!("{p}.buyer_segment"),
                    "buyers must be ordinary purses",
                );
                c.check(
                    s.class.tier() == Tier::Consumer,
                    || format!("{p}.buyer_segment"),
                    "segment must hold consumer purses",
                );
            }
        }
        c.check(
            in_run(a.start_date),
            || format!("{p}.start_date"),
            "must fall inside the simulated period",
        );
        match (&a.daily_injections, &a.street_corner) {
            (Some(v), None) => {
                for (j, m) in v.iter().enumerate() {
                    c.check(
                        *m >= Money::ZERO,
                        || format!("{p}.daily_injections[{j}]"),
                        "must be >= 0",
                    );
                }
            }
            (None, Some(sc)) => {
                c.check(sc.days >= 3, || format!("{p}.street_corner.days"), "must be at least 3");
                c.check(
                    sc.test >= Money::ZERO,
                    || format!("{p}.street_corner.test"),
                    "must be >= 0",
                );
                c.check(
                    sc.full >= Money::ZERO,
                    || format!("{p}.street_corner.full"),
                    "must be >= 0",
                );
            }
            _ => c.err(p.clone(), "set exactly one of `daily_injections` and `street_corner`"),
        }
        c.probability(&format!("{p}.price_discount"), a.price_discount);
        c.positive(&format!("{p}.batch.mean"), a.batch.mean);
        c.non_negative(&format!("{p}.batch.sd"), a.batch.sd);
        c.money_positive(&format!("{p}.batch.min"), a.batch.min);
        c.hour(&format!("{p}.inject_hour"), a.inject_hour);
        let [h0, h1] = a.distribution_hours;
        c.hour(&format!("{p}.distribution_hours[0]"), h0);
        c.hour(&format!("{p}.distribution_hours[1]"), h1);
        c.check(
            h0 <= h1,
            || format!("{p}.distribution_hours"),
            "first hour must not be after the last",
        );
        c.non_negative(&format!("{p}.spend_multiplier"), a.spend_multiplier);
        c.probability(&format!("{p}.cashout_fraction"), a.cashout_fraction);
    }

    // C3 script.
    c.check(
        spec.c3.len() <= MAX_C3_COMMANDS,
        || "c3".into(),
        "too many commands for the on-chip command log",
    );
    let mut names = BTreeSet::new();
    for (i, e) in spec.c3.iter().enumerate() {
        let p = format!("c3[{i}]");
        if !names.insert(e.name.as_str()) {
            c.err(format!("{p}.name"), format!("duplicate command name `{}`", e.name));
        }
        match (e.at, e.on_alarm) {
            (Some(at), None) => {
                c.check(
                    in_run(at.date),
                    || format!("{p}.at.date"),
                    "must fall inside the simulated period",
                );
                c.hour(&format!("{p}.at.hour"), at.hour);
            }
            (None, Some(_)) => {}
            _ => c.err(p.clone(), "set exactly one of `at` and `on_alarm`"),
        }
        match c3_kind(&e.kind, e.value) {
            Some(_) => {
                if let Some(v) = e.value {
                    c.money_positive(&format!("{p}.value"), v);
                }
            }
            None if matches!(e.kind.as_str(), "set_ctl_limit" | "set_purse_limit") => {
                c.err(format!("{p}.value"), format!("`{}` needs a value", e.kind))
            }
            None => c.err(
                format!("{p}.kind"),
                format!(
                    "unknown command `{}` (set_ctl_limit, set_purse_limit, lock, unlock, reset_counters)",
                    e.kind
                ),
            ),
        }
        for (j, s) in e.target.segments.iter().flatten().enumerate() {
            c.check(
                spec.segment_index(s).is_some(),
                || format!("{p}.target.segments[{j}]"),
                "unknown segment",
            );
        }
    }

    // Detection.
    let d = &spec.detection;
    for (p, m) in [
        ("detection.currency", &d.currency),
        ("detection.merchant", &d.merchant.model),
    ] {
        c.positive(&format!("{p}.k"), m.k);
        if let Some(f) = m.floor {
            c.positive(&format!("{p}.floor"), f);
        }
        c.check(
            !m.seasonal_adjust || m.window.history() >= 14,
            || format!("{p}.seasonal_adjust"),
            "needs a window of at least 14 days",
        );
    }
    c.positive("detection.merchant.system_k", d.merchant.system_k);
    if let Some(e) = d.calibration_end {
        c.check(
            in_run(e),
            || "detection.calibration_end".into(),
            "must fall inside the simulated period",
        );
    }
    ScenarioErrors(c.0)
}

fn check_segment(c: &mut Checker, spec: &ScenarioSpec, p: &str, s: &SegmentSpec) {
    let tier = s.class.tier();
    c.check(
        tier != Tier::Originator,
        || format!("{p}.class"),
        "the originator is implicit",
    );
    c.non_negative(&format!("{p}.birth_rate"), s.birth_rate);
    c.probability(&format!("{p}.death_rate"), s.death_rate);
    if tier == Tier::Member {
        c.check(
            s.birth_rate == 0.0,
            || format!("{p}.birth_rate"),
            "member purses are not born or retired",
        );
        c.check(
            s.death_rate == 0.0,
            || format!("{p}.death_rate"),
            "member purses are not born or retired",
        );
        c.check(
            s.circle.is_none(),
            || format!("{p}.circle"),
            "only consumer segments have circles",
        );
        if let Some(w) = s.working_float {
            c.check(w >= Money::ZERO, || format!("{p}.working_float"), "must be >= 0");
        }
    } else if s.working_float.is_some() {
        c.err(
            format!("{p}.working_float"),
            "only member segments keep a working float",
        );
    }
    c.probability(&format!("{p}.active_rate.mean"), s.active_rate.mean);
    c.non_negative(&format!("{p}.active_rate.sd"), s.active_rate.sd);
    let allowed = allowed_tx(tier);
    for (t, params) in &s.tx {
        let tp = format!("{p}.tx.{t}");
        if allowed.contains(t) {
            c.tx(&tp, params);
        } else {
            c.err(
                tp,
                format!("{} purses do not initiate this transaction type", tier_name(tier)),
            );
        }
    }
    if let Some(circle) = &s.circle {
        c.check(
            tier == Tier::Consumer,
            || format!("{p}.circle"),
            "only consumer segments have circles",
        );
        c.normal(&format!("{p}.circle.merchants"), circle.merchants);
        c.normal(&format!("{p}.circle.consumers"), circle.consumers);
        c.probability(&format!("{p}.circle.in_circle_p"), circle.in_circle_p);
        for (j, m) in circle.merchant_segments.iter().flatten().enumerate() {
            let ok = spec
                .segment_index(m)
                .is_some_and(|k| spec.segments[k].class.tier() == Tier::Merchant);
            c.check(
                ok,
                || format!("{p}.circle.merchant_segments[{j}]"),
                "not a merchant segment",
            );
        }
    }
    c.money_positive(&format!("{p}.purse_limit"), s.purse_limit);
    c.money_positive(&format!("{p}.ctl_limit"), s.ctl_limit);
    if let Some(b) = s.initial_balance {
        c.normal(&format!("{p}.initial_balance"), b);
    }
    c.hour(&format!("{p}.sweep_hour"), s.sweep_hour);
    if let Some(homes) = &s.home_segments {
        for (j, h) in homes.iter().enumerate() {
            let ok = spec.segment_index(h).is_some_and(|k| {
                let m = &spec.segments[k];
                match tier {
                    Tier::Consumer => m.class.serves_consumers(),
                    Tier::Merchant => m.class.serves_merchants(),
                    _ => false,
                }
            });
            c.check(
                ok,
                || format!("{p}.home_segments[{j}]"),
                "not a member segment able to serve this class",
            );
        }
    } else if matches!(tier, Tier::Consumer | Tier::Merchant) && !s.counterfeit && s.initial_count > 0 {
        let any = spec.segments.iter().any(|m| {
            !m.counterfeit
                && m.initial_count > 0
                && if tier == Tier::Consumer {
                    m.class.serves_consumers()
                } else {
                    m.class.serves_merchants()
                }
        });
        c.check(any, || format!("{p}.class"), "no member segment can serve this class");
    }
}

fn tier_name(t: Tier) -> &'static str {
    match t {
        Tier::Originator => "originator",
        Tier::Member => "member",
        Tier::Merchant => "merchant",
        Tier::Consumer => "consumer",
    }
}

/// SHA-256 over the canonical JSON form of the spec.
///
/// Attacks that never inject anything are left out so that adding one does
/// not change the digest of an otherwise identical scenario.
pub fn scenario_digest(spec: &ScenarioSpec) -> String {
    let mut s = spec.clone();
    s.attacks.retain(|a| a.injections().iter().any(|m| m.is_positive()));
    let canon = serde_json::to_value(&s).expect("scenario serializes");
    hex::encode(Sha256::digest(canon.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = include_str!("../../scenarios/minimal.toml");
    const FIG2: &str = include_str!("../../scenarios/paper-fig2.toml");

    #[test]
    fn minimal_scenario_parses() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.simulator.duration_days, 1);
        assert_eq!(s.segments.len(), 3);
    }

    #[test]
    fn shipped_street_corner_scenario_parses() {
        let s = parse_scenario(FIG2).unwrap();
        let count = |t: Tier, cf: Option<bool>| {
            s.segments
                .iter()
                .filter(|x| x.class.tier() == t && cf.is_none_or(|c| x.counterfeit == c))
                .count()
        };
        assert_eq!(count(Tier::Member, None), 2);
        assert_eq!(count(Tier::Member, Some(true)), 1);
        assert_eq!(count(Tier::Consumer, None), 3);
        assert_eq!(count(Tier::Merchant, None), 2);
    }

    #[test]
    fn negative_birth_rate_names_the_key() {
        let text = MINIMAL.replace("initial_count = 10", "initial_count = 10\nbirth_rate = -0.5");
        let errs = parse_scenario(&text).unwrap_err();
        assert!(errs.0.iter().any(|e| e.path == "segments[2].birth_rate"), "{errs}");
    }

    #[test]
    fn all_errors_are_reported_together() {
        let text = MINIMAL
            .replace(
                "initial_count = 10",
                "initial_count = 10\nbirth_rate = -0.5\ndeath_rate = 2.0\nflavour = 3",
            )
            .replace("duration_days = 1", "duration_days = 0");
        let errs = parse_scenario(&text).unwrap_err();
        let paths: Vec<&str> = errs.0.iter().map(|e| e.path.as_str()).collect();
        for want in [
            "segments.2.flavour",
            "simulator.duration_days",
            "segments[2].birth_rate",
            "segments[2].death_rate",
        ] {
            assert!(paths.contains(&want), "missing {want} in {paths:?}");
        }
    }

    #[test]
    fn dangling_references_are_rejected() {
        let text = format!(
            "{MINIMAL}\n[[attacks]]\nname = \"a\"\ncounterfeiter_segment = \"nobody\"\nbuyer_segment = \"households\"\nstart_date = 1998-01-05\ndaily_injections = [100]\nbatch = {{ mean = 10, sd = 0, min = 10 }}\n"
        );
        let errs = parse_scenario(&text).unwrap_err();
        assert!(
            errs.0.iter().any(|e| e.path == "attacks[0].counterfeiter_segment"),
            "{errs}"
        );
    }

    #[test]
    fn syntax_error_carries_line_number() {
        let text = MINIMAL.replace("seed = 1", "seed = = 1");
        let errs = parse_scenario(&text).unwrap_err();
        assert_eq!(errs.0.len(), 1);
        assert_eq!(errs.0[0].line, Some(6), "{errs}");
    }

    #[test]
    fn digest_tracks_meaningful_fields_only() {
        let a = parse_scenario(FIG2).unwrap();
        let d = scenario_digest(&a);
        assert_eq!(d, scenario_digest(&parse_scenario(FIG2).unwrap()));
        assert_eq!(d.len(), 64);
        assert_ne!(d, scenario_digest(&a.with_seed(2)));
        let mut b = a.clone();
        b.segments[2].death_rate = 0.003;
        assert_ne!(d, scenario_digest(&b));
        // Comments and formatting are not meaningful.
        let reformatted = FIG2.replace("# Merchants", "# Shops");
        assert_eq!(d, scenario_digest(&parse_scenario(&reformatted).unwrap()));
        // An attack that injects nothing is not meaningful either.
        let mut quiet = a.without_attacks();
        assert_ne!(d, scenario_digest(&quiet));
        let base = scenario_digest(&quiet);
        let mut idle = a.attacks[0].clone();
        idle.street_corner = None;
        idle.daily_injections = Some(vec![Money::ZERO; 4]);
        quiet.attacks.push(idle);
        assert_eq!(base, scenario_digest(&quiet));
    }
}
