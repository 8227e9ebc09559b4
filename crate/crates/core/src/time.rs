//! Timestamp helpers shared by the record formats.

use chrono::{DateTime, FixedOffset, NaiveDate, TimeZone};
use chrono_tz::Tz;

/// ISO-8601 with millisecond precision and an explicit UTC offset.
pub const ISO_MS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3f%:z";

pub fn format_iso(ts: &DateTime<FixedOffset>) -> String {
    ts.format(ISO_MS_FORMAT).to_string()
}

pub fn parse_iso(s: &str) -> Result<DateTime<FixedOffset>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s.trim())
}

/// Parses an IANA zone name such as `America/Chicago`.
pub fn parse_timezone(name: &str) -> Result<Tz, String> {
    name.parse::<Tz>()
        .map_err(|_| format!("unknown IANA timezone `{name}`"))
}

/// Civil date of `ts` in `tz`.
pub fn local_date(ts: &DateTime<FixedOffset>, tz: Tz) -> NaiveDate {
    ts.with_timezone(&tz).date_naive()
}

/// Re-expresses an instant in `tz`, keeping the offset that applies at that instant.
pub fn to_local_fixed(ts: &DateTime<FixedOffset>, tz: Tz) -> DateTime<FixedOffset> {
    ts.with_timezone(&tz).fixed_offset()
}

/// Milliseconds since the Unix epoch.
pub fn epoch_ms(ts: &DateTime<FixedOffset>) -> i64 {
    ts.timestamp_millis()
}

/// Builds a fixed-offset instant from epoch milliseconds, expressed in `tz`.
pub fn from_epoch_ms(ms: i64, tz: Tz) -> DateTime<FixedOffset> {
    tz.timestamp_millis_opt(ms)
        .single()
        .expect("epoch milliseconds out of chrono range")
        .fixed_offset()
}

pub(crate) mod iso_ms {
    use chrono::{DateTime, FixedOffset};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<FixedOffset>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_iso(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<FixedOffset>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_iso(&raw).map_err(serde::de::Error::custom)
    }
}
