//! Simulation clock with month / day / hour periods.

use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

/// Position of the simulation in time. Ticks are hourly.
///
/// `primary_period` counts calendar months since the run start, and
/// `secondary_period` / `tertiary_period` count days and hours since the run
/// start respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimClock {
    pub date: NaiveDate,
    pub hour: u8,
    pub primary_period: u32,
    pub secondary_period: u32,
    pub tertiary_period: u32,
}

impl SimClock {
    pub fn start(date: NaiveDate) -> Self {
        SimClock {
            date,
            hour: 0,
            primary_period: 0,
            secondary_period: 0,
            tertiary_period: 0,
        }
    }

    /// Clock at `hour` of day `day` of a run starting on `start`.
    pub fn at(start: NaiveDate, day: u32, hour: u8) -> Self {
        assert!(hour < 24, "hour out of range: {hour}");
        let date = start + Duration::days(day as i64);
        SimClock {
            date,
            hour,
            primary_period: months_between(start, date),
            secondary_period: day,
            tertiary_period: day * 24 + hour as u32,
        }
    }

    pub fn advance(self) -> Self {
        advance(self)
    }

    pub fn weekday(&self) -> Weekday {
        self.date.weekday()
    }

    pub fn day(&self) -> u32 {
        self.secondary_period
    }
}

impl fmt::Display for SimClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}T{:02}", self.date, self.hour)
    }
}

/// Next hour, rolling the day and month periods when their boundaries pass.
pub fn advance(clock: SimClock) -> SimClock {
    let mut next = clock;
    next.tertiary_period += 1;
    if clock.hour < 23 {
        next.hour += 1;
        return next;
    }
    next.hour = 0;
    next.date = clock.date.succ_opt().expect("calendar overflow");
    next.secondary_period += 1;
    if next.date.month() != clock.date.month() {
        next.primary_period += 1;
    }
    next
}

fn months_between(start: NaiveDate, date: NaiveDate) -> u32 {
    let m = (date.year() - start.year()) * 12 + date.month() as i32 - start.month() as i32;
    m.max(0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn month_end_rollover() {
        let c = SimClock::at(d(1998, 3, 1), 30, 23);
        assert_eq!(c.date, d(1998, 3, 31));
        let n = advance(c);
        assert_eq!(n.date, d(1998, 4, 1));
        assert_eq!(n.hour, 0);
        assert_eq!(n.secondary_period, c.secondary_period + 1);
        assert_eq!(n.primary_period, c.primary_period + 1);
    }

    #[test]
    fn same_day_hour_tick() {
        let c = SimClock::at(d(1998, 1, 10), 3, 5);
        let n = c.advance();
        assert_eq!((n.date, n.hour, n.secondary_period), (c.date, 6, 3));
        assert_eq!(n.tertiary_period, c.tertiary_period + 1);
    }

    #[test]
    fn advance_agrees_with_direct_construction() {
        let start = d(1997, 10, 9);
        let mut c = SimClock::start(start);
        for _ in 0..(200 * 24) {
            c = c.advance();
            let direct = SimClock::at(start, c.secondary_period, c.hour);
            assert_eq!(c, direct);
        }
    }

    #[test]
    fn hundred_eighty_day_window_reaches_attack_dates() {
        // Enumerate the calendar one day at a time.
        let mut date = d(1997, 10, 4);
        let mut days = vec![date];
        for _ in 0..179 {
            date = date.succ_opt().unwrap();
            days.push(date);
        }
        assert_eq!(days.len(), 180);
        assert_eq!(*days.last().unwrap(), d(1998, 4, 1));

        // A 180-day run whose final six days are the attack days
        // (1998-04-01 ..= 1998-04-06) starts on 1997-10-09.
        let start = d(1997, 10, 9);
        let last = SimClock::at(start, 179, 0).date;
        assert_eq!(last, d(1998, 4, 6));
        assert_eq!(SimClock::at(start, 174, 0).date, d(1998, 4, 1));
    }
}
