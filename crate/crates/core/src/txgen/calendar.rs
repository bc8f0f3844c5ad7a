use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// Calendar seasonality. `day_of_week_factor` runs Monday to Sunday.
/// Fields left out of a scenario take their identity value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalendarProfile {
    pub day_of_week_factor: Vec<f64>,
    pub month_factor: Vec<f64>,
    pub holiday_dates: BTreeSet<NaiveDate>,
    pub holiday_factor: f64,
    pub hourly_profile: Vec<f64>,
}

impl Default for CalendarProfile {
    fn default() -> Self {
        CalendarProfile::identity()
    }
}

impl CalendarProfile {
    /// All factors 1, uniform hours.
    pub fn identity() -> Self {
        CalendarProfile {
            day_of_week_factor: vec![1.0; 7],
            month_factor: vec![1.0; 12],
            holiday_dates: BTreeSet::new(),
            holiday_factor: 1.0,
            hourly_profile: vec![1.0 / 24.0; 24],
        }
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holiday_dates.contains(&date)
    }
}

/// Product of the day-of-week, month and (on holidays) holiday factors.
pub fn seasonal_factor(profile: &CalendarProfile, date: NaiveDate) -> f64 {
    let dow = profile.day_of_week_factor[date.weekday().num_days_from_monday() as usize];
    let month = profile.month_factor[date.month0() as usize];
    let holiday = if profile.is_holiday(date) {
        profile.holiday_factor
    } else {
        1.0
    };
    dow * month * holiday
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saturday() -> NaiveDate {
        NaiveDate::from_ymd_opt(1998, 3, 7).unwrap()
    }

    #[test]
    fn identity_profile_is_one() {
        let p = CalendarProfile::identity();
        let mut d = NaiveDate::from_ymd_opt(1997, 1, 1).unwrap();
        for _ in 0..400 {
            assert_eq!(seasonal_factor(&p, d), 1.0);
            d = d.succ_opt().unwrap();
        }
    }

    #[test]
    fn saturday_and_holiday_factors_multiply() {
        let mut p = CalendarProfile::identity();
        p.day_of_week_factor[5] = 1.4;
        assert_eq!(saturday().weekday(), chrono::Weekday::Sat);
        assert!((seasonal_factor(&p, saturday()) - 1.4).abs() < 1e-12);
        p.holiday_dates.insert(saturday());
        p.holiday_factor = 0.5;
        assert!((seasonal_factor(&p, saturday()) - 0.7).abs() < 1e-12);
    }
}
