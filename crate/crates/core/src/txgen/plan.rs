use chrono::NaiveDate;

use crate::config::{SegmentSpec, TxParams};
use crate::economy::Circle;
use crate::money::Money;
use crate::record::{PurseId, TxType};
use crate::rng::{RngError, SimRng};

use super::calendar::{seasonal_factor, CalendarProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedTransaction {
    pub hour: u8,
    pub tx_type: TxType,
    pub payer: PurseId,
    pub payee: PurseId,
    pub amount: Money,
}

/// Counterparty pools for one day's planning.
#[derive(Debug, Clone, Copy)]
pub struct Counterparties<'a> {
    /// Merchants this consumer may buy from outside its circle.
    pub merchants: &'a [PurseId],
    /// Consumers eligible as peer-to-peer counterparties.
    pub consumers: &'a [PurseId],
}

/// Draws the day's active subset of a segment.
///
/// The active fraction is Normal(μ, σ) truncated to `[0, 1]`; `round(f·n)`
/// purses are then chosen uniformly without replacement. The result is in
/// ascending id order.
pub fn activate_cards(purses: &[PurseId], spec: &SegmentSpec, rng: &mut SimRng) -> Result<Vec<PurseId>, RngError> {
    if purses.is_empty() {
        return Ok(Vec::new());
    }
    let p = spec.active_rate;
    let f = rng.truncated_normal(p.mean, p.sd, 0.0, 1.0)?;
    let k = (f * purses.len() as f64).round() as usize;
    let mut out: Vec<PurseId> = rng
        .sample_indices(purses.len(), k)
        .into_iter()
        .map(|i| purses[i])
        .collect();
    out.sort();
    Ok(out)
}

fn amount(rng: &mut SimRng, p: &TxParams) -> Result<Money, RngError> {
    let x = rng.truncated_normal(p.mean, p.sd, 1.0, f64::INFINITY)?;
    Ok(Money::new(x.round().max(1.0) as i64))
}

fn hour(rng: &mut SimRng, profile: &CalendarProfile) -> u8 {
    rng.weighted_index(&profile.hourly_profile).unwrap_or(12) as u8
}

fn pick(rng: &mut SimRng, circle: &[PurseId], pool: &[PurseId], in_circle_p: f64, me: PurseId) -> Option<PurseId> {
    if !circle.is_empty() && rng.bernoulli(in_circle_p) {
        return Some(circle[rng.below(circle.len())]);
    }
    match pool.len() {
        0 => None,
        1 if pool[0] == me => None,
        n => loop {
            let c = pool[rng.below(n)];
            if c != me {
                break Some(c);
            }
        },
    }
}

/// One active consumer's transactions for `date`.
///
/// For each transaction type the count is Poisson(λ × seasonal factor ×
/// `purchase_multiplier` for purchases) and each amount a Normal draw
/// truncated at one minor unit. Purchases and peer transfers go to the circle
/// with the segment's in-circle probability and to a uniform pick from the
/// pools otherwise; deposits and withdrawals go through the home member.
#[allow(clippy::too_many_arguments)]
pub fn daily_plan(
    consumer: PurseId,
    home: PurseId,
    spec: &SegmentSpec,
    circle: Option<&Circle>,
    pools: Counterparties<'_>,
    profile: &CalendarProfile,
    date: NaiveDate,
    purchase_multiplier: f64,
    rng: &mut SimRng,
) -> Result<Vec<PlannedTransaction>, RngError> {
    let factor = seasonal_factor(profile, date);
    let in_p = spec.circle.as_ref().map_or(0.0, |c| c.in_circle_p);
    let empty: &[PurseId] = &[];
    let (cm, cc) = circle.map_or((empty, empty), |c| (&c.merchant_members[..], &c.consumer_members[..]));
    let mut out = Vec::new();
    for t in [
        TxType::Purchase,
        TxType::ConsumerToConsumer,
        TxType::Deposit,
        TxType::Withdrawal,
    ] {
        let Some(p) = spec.tx_params(t) else { continue };
        let mult = if t == TxType::Purchase {
            purchase_multiplier
        } else {
            1.0
        };
        let n = rng.poisson(p.rate * factor * mult)?;
        for _ in 0..n {
            let a = amount(rng, p)?;
            let h = hour(rng, profile);
            let (payer, payee) = match t {
                TxType::Purchase => match pick(rng, cm, pools.merchants, in_p, consumer) {
                    Some(m) => (consumer, m),
                    None => continue,
                },
                TxType::ConsumerToConsumer => match pick(rng, cc, pools.consumers, in_p, consumer) {
                    Some(c) => (consumer, c),
                    None => continue,
                },
                TxType::Deposit => (consumer, home),
                _ => (home, consumer),
            };
            out.push(PlannedTransaction {
                hour: h,
                tx_type: t,
                payer,
                payee,
                amount: a,
            });
        }
    }
    Ok(out)
}

/// An active merchant's refunds for `date`, each to a uniformly chosen
/// consumer.
pub fn merchant_plan(
    merchant: PurseId,
    spec: &SegmentSpec,
    consumers: &[PurseId],
    profile: &CalendarProfile,
    date: NaiveDate,
    rng: &mut SimRng,
) -> Result<Vec<PlannedTransaction>, RngError> {
    let Some(p) = spec.tx_params(TxType::Refund) else {
        return Ok(Vec::new());
    };
    if consumers.is_empty() {
        return Ok(Vec::new());
    }
    let n = rng.poisson(p.rate * seasonal_factor(profile, date))?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let a = amount(rng, p)?;
        let h = hour(rng, profile);
        out.push(PlannedTransaction {
            hour: h,
            tx_type: TxType::Refund,
            payer: merchant,
            payee: consumers[rng.below(consumers.len())],
            amount: a,
        });
    }
    Ok(out)
}
