use serde::{Deserialize, Serialize};

use super::MarkovError;

/// Day-of-week discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum DaySplit {
    /// All days in one group.
    One,
    /// Weekdays and weekend.
    Two,
    /// Each weekday alone.
    Seven,
}

impl DaySplit {
    pub fn groups(self) -> u8 {
        match self {
            DaySplit::One => 1,
            DaySplit::Two => 2,
            DaySplit::Seven => 7,
        }
    }
}

impl TryFrom<u8> for DaySplit {
    type Error = MarkovError;

    fn try_from(groups: u8) -> Result<Self, Self::Error> {
        match groups {
            1 => Ok(DaySplit::One),
            2 => Ok(DaySplit::Two),
            7 => Ok(DaySplit::Seven),
            other => Err(MarkovError::Config(format!("day split must be 1, 2 or 7, got {other}"))),
        }
    }
}

impl From<DaySplit> for u8 {
    fn from(split: DaySplit) -> u8 {
        split.groups()
    }
}

/// Time-of-day discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TimeSplit {
    One,
    /// Four ranges of six hours.
    Four,
    /// Hourly.
    TwentyFour,
}

impl TimeSplit {
    pub fn groups(self) -> u8 {
        match self {
            TimeSplit::One => 1,
            TimeSplit::Four => 4,
            TimeSplit::TwentyFour => 24,
        }
    }
}

impl TryFrom<u8> for TimeSplit {
    type Error = MarkovError;

    fn try_from(groups: u8) -> Result<Self, Self::Error> {
        match groups {
            1 => Ok(TimeSplit::One),
            4 => Ok(TimeSplit::Four),
            24 => Ok(TimeSplit::TwentyFour),
            other => Err(MarkovError::Config(format!("time split must be 1, 4 or 24, got {other}"))),
        }
    }
}

impl From<TimeSplit> for u8 {
    fn from(split: TimeSplit) -> u8 {
        split.groups()
    }
}

/// Maps local wall-clock seconds to `(day_bucket, time_bucket)`.
/// Weekdays count from Monday = 0.
pub fn bucketize(local_t: i64, day: DaySplit, time: TimeSplit) -> (u8, u8) {
    let days = local_t.div_euclid(86_400);
    // 1970-01-01 was a Thursday
    let weekday = (days + 3).rem_euclid(7) as u8;
    let hour = (local_t.rem_euclid(86_400) / 3600) as u8;
    let day_bucket = match day {
        DaySplit::One => 0,
        DaySplit::Two => u8::from(weekday >= 5),
        DaySplit::Seven => weekday,
    };
    let time_bucket = match time {
        TimeSplit::One => 0,
        TimeSplit::Four => hour / 6,
        TimeSplit::TwentyFour => hour,
    };
    (day_bucket, time_bucket)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn local(y: i32, m: u32, d: u32, h: u32, min: u32) -> i64 {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
            .and_utc()
            .timestamp()
    }

    #[test]
    fn saturday_afternoon() {
        // 2024-01-06 was a Saturday
        assert_eq!(bucketize(local(2024, 1, 6, 13, 30), DaySplit::Two, TimeSplit::Four), (1, 2));
        assert_eq!(bucketize(local(2024, 1, 6, 13, 30), DaySplit::Seven, TimeSplit::TwentyFour), (5, 13));
    }

    #[test]
    fn degenerate_split() {
        for t in [-1_000_000, 0, 1_234_567_890] {
            assert_eq!(bucketize(t, DaySplit::One, TimeSplit::One), (0, 0));
        }
    }

    #[test]
    fn monday_midnight() {
        assert_eq!(bucketize(local(2024, 1, 1, 0, 0), DaySplit::Seven, TimeSplit::TwentyFour), (0, 0));
        assert_eq!(bucketize(local(2024, 1, 7, 23, 59), DaySplit::Seven, TimeSplit::TwentyFour), (6, 23));
    }

    #[test]
    fn splits_reject_other_sizes() {
        assert!(DaySplit::try_from(3).is_err());
        assert!(TimeSplit::try_from(6).is_err());
        assert_eq!(TimeSplit::try_from(24).unwrap().groups(), 24);
    }
}
