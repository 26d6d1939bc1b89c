use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::MarketDataError;

/// Calendar quarter in `YYYYQn` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuarterLabel {
    year: i32,
    quarter: u8,
}

impl QuarterLabel {
    pub fn new(year: i32, quarter: u8) -> Option<Self> {
        (1..=4).contains(&quarter).then_some(Self { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Quarters since year 0, used for contiguity checks.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(4) as i32,
            quarter: ordinal.rem_euclid(4) as u8 + 1,
        }
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }
}

impl fmt::Display for QuarterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for QuarterLabel {
    type Err = MarketDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MarketDataError::BadQuarter(s.to_string());
        let s = s.trim();
        let (year, q) = s.split_once(['Q', 'q']).ok_or_else(bad)?;
        if year.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        let year: i32 = year.parse().map_err(|_| bad())?;
        let quarter: u8 = q.parse().map_err(|_| bad())?;
        Self::new(year, quarter).ok_or_else(bad)
    }
}

impl Serialize for QuarterLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuarterLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let q: QuarterLabel = "1994Q3".parse().unwrap();
        assert_eq!(q.to_string(), "1994Q3");
        assert_eq!(q.next().to_string(), "1994Q4");
        assert_eq!(q.next().next().to_string(), "1995Q1");
        assert_eq!(q.offset(-3).to_string(), "1993Q4");
    }

    #[test]
    fn rejects_bad_labels() {
        for s in ["1994Q5", "1994Q0", "94Q1", "1994-3", "", "1994Q12"] {
            assert!(s.parse::<QuarterLabel>().is_err(), "{s}");
        }
    }

    #[test]
    fn ordinal_round_trip() {
        for ord in 7960..8000 {
            assert_eq!(QuarterLabel::from_ordinal(ord).ordinal(), ord);
        }
    }
}
