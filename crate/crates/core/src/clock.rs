use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

/// Source of timestamps. Runs against the mock backend use a fixed clock so
/// that output files are byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// Fixed clock at the Unix epoch.
    pub fn epoch() -> Self {
        Clock::Fixed(Utc.timestamp_opt(0, 0).single().expect("epoch is valid"))
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }

    /// RFC 3339 timestamp with second precision and a `Z` suffix.
    pub fn timestamp(&self) -> String {
        self.now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    /// Fixed clock from an RFC 3339 string.
    pub fn parse_fixed(s: &str) -> Result<Self, chrono::ParseError> {
        Ok(Clock::Fixed(DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc)))
    }
}
