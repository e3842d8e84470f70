//! Cyclic and categorical time features.
//!
//! Epoch minutes are interpreted as local wall-clock time counted from
//! 1970-01-01 00:00.

use std::collections::BTreeSet;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};

use crate::domain::{Minutes, SPEED_STEP};

use super::IngestError;

/// Number of entries produced by [`time_features`].
pub const TIME_FEATURE_WIDTH: usize = 11;

pub const TIME_OF_DAY_PERIOD: u32 = (24 * 60 / SPEED_STEP) as u32;
pub const WEEK_PERIOD: u32 = 53;
pub const MONTH_PERIOD: u32 = 12;

/// `[sin(2πi/T), cos(2πi/T)]`.
pub fn cyclic_encode(index: u32, period: u32) -> Result<[f64; 2], IngestError> {
    if period == 0 || index >= period {
        return Err(IngestError::CyclicRange { index: index as i64, period });
    }
    let angle = std::f64::consts::TAU * f64::from(index) / f64::from(period);
    Ok([angle.sin(), angle.cos()])
}

/// Like [`cyclic_encode`] but first wraps any integer index into the cycle.
pub fn cyclic_encode_wrapping(index: i64, period: u32) -> Result<[f64; 2], IngestError> {
    if period == 0 {
        return Err(IngestError::CyclicRange { index, period });
    }
    cyclic_encode(index.rem_euclid(i64::from(period)) as u32, period)
}

/// Merged day-of-week groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DayGroup {
    Monday = 0,
    Friday = 1,
    MidWeek = 2,
    WeekendOrHoliday = 3,
}

impl DayGroup {
    pub fn of(day: Weekday, is_holiday: bool) -> Self {
        if is_holiday {
            return Self::WeekendOrHoliday;
        }
        match day {
            Weekday::Mon => Self::Monday,
            Weekday::Fri => Self::Friday,
            Weekday::Tue | Weekday::Wed | Weekday::Thu => Self::MidWeek,
            Weekday::Sat | Weekday::Sun => Self::WeekendOrHoliday,
        }
    }
}

/// One-hot over `[Monday, Friday, Tue–Thu, weekend/holiday]`.
pub fn day_group_encode(day: Weekday, is_holiday: bool) -> [f64; 4] {
    let mut out = [0.0; 4];
    out[DayGroup::of(day, is_holiday) as usize] = 1.0;
    out
}

pub fn to_datetime(t: Minutes) -> NaiveDateTime {
    DateTime::from_timestamp(t * 60, 0)
        .expect("timestamp in chrono range")
        .naive_utc()
}

pub fn from_datetime(dt: NaiveDateTime) -> Minutes {
    dt.and_utc().timestamp() / 60
}

pub fn date_of(t: Minutes) -> NaiveDate {
    to_datetime(t).date()
}

/// Minutes since midnight.
pub fn minute_of_day(t: Minutes) -> Minutes {
    t.rem_euclid(24 * 60)
}

/// Midnight of the day containing `t`.
pub fn day_start(t: Minutes) -> Minutes {
    t - minute_of_day(t)
}

/// Calendar context: which dates count as holidays.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Calendar {
    holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn new(holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            holidays: holidays.into_iter().collect(),
        }
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }

    pub fn holidays(&self) -> impl Iterator<Item = &NaiveDate> {
        self.holidays.iter()
    }

    /// `[tod sin, tod cos, week sin, week cos, month sin, month cos,
    /// Monday, Friday, Tue–Thu, weekend/holiday, holiday flag]`.
    pub fn time_features(&self, t: Minutes) -> Vec<f64> {
        let dt = to_datetime(t);
        let tod = (dt.hour() * 60 + dt.minute()) / SPEED_STEP as u32;
        let week = dt.iso_week().week() - 1;
        let month = dt.month0();
        let holiday = self.is_holiday(dt.date());
        let mut out = Vec::with_capacity(TIME_FEATURE_WIDTH);
        for (i, period) in [(tod, TIME_OF_DAY_PERIOD), (week, WEEK_PERIOD), (month, MONTH_PERIOD)] {
            out.extend(cyclic_encode(i, period).expect("calendar index within period"));
        }
        out.extend(day_group_encode(dt.weekday(), holiday));
        out.push(if holiday { 1.0 } else { 0.0 });
        out
    }
}

pub fn time_features(t: Minutes, calendar: &Calendar) -> Vec<f64> {
    calendar.time_features(t)
}
