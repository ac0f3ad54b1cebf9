//! Parsing, validation, and canonical serialization of the access-log line
//! format.
//!
//! A record is one line of six fields joined by `", "`:
//!
//! ```text
//! 0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00 +0700], /path/chunk.ts, 437664
//! ```
//!
//! The separator never splits inside the bracketed timestamp, so the variant
//! with a comma before the offset (`[03/Dec/2018:00:00:00, +0700]`) also
//! tokenizes to six fields. Lines that do not conform are rejected with a
//! single machine-readable reason; [`clean_stream`] counts rather than fails.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

/// Cache outcome recorded for a request, as written on the wire.
///
/// `Local` is written `-` and means the request was satisfied by the client
/// device before reaching any CDN server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStatus {
    /// Not cached at any CDN server; served by the origin.
    Miss,
    /// Served by an edge cache.
    Hit,
    /// Served by a regional cache.
    Hit1,
    /// Served by the client device's own cache (`-` on the wire).
    Local,
}

impl HitStatus {
    pub fn wire(&self) -> &'static str {
        match self {
            HitStatus::Miss => "MISS",
            HitStatus::Hit => "HIT",
            HitStatus::Hit1 => "HIT1",
            HitStatus::Local => "-",
        }
    }

    pub fn from_wire(token: &str) -> Option<HitStatus> {
        match token {
            "MISS" => Some(HitStatus::Miss),
            "HIT" => Some(HitStatus::Hit),
            "HIT1" => Some(HitStatus::Hit1),
            "-" => Some(HitStatus::Local),
            _ => None,
        }
    }
}

impl fmt::Display for HitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire())
    }
}

impl FromStr for HitStatus {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HitStatus::from_wire(s).ok_or(ParseError::new(RejectReason::BadStatus))
    }
}

/// One parsed request record.
///
/// Latency is stored in whole milliseconds; the wire format carries exactly
/// three decimal places of seconds, so the representation is lossless and
/// records compare exactly. Inputs with extra decimals are rounded to the
/// nearest millisecond on parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub latency_ms: u64,
    pub client_ip: IpAddr,
    pub status: HitStatus,
    pub timestamp: DateTime<FixedOffset>,
    pub content_path: String,
    pub size_bytes: u64,
}

impl LogRecord {
    pub fn latency_seconds(&self) -> f64 {
        self.latency_ms as f64 / 1000.0
    }
}

/// Why a line was rejected. Exactly one reason is reported per line, chosen
/// by the fixed precedence order in which the variants are declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    FieldCount,
    BadLatency,
    BadIp,
    BadStatus,
    BadTimestamp,
    BadSize,
    EmptyPath,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        RejectReason::FieldCount,
        RejectReason::BadLatency,
        RejectReason::BadIp,
        RejectReason::BadStatus,
        RejectReason::BadTimestamp,
        RejectReason::BadSize,
        RejectReason::EmptyPath,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::FieldCount => "field_count",
            RejectReason::BadLatency => "bad_latency",
            RejectReason::BadIp => "bad_ip",
            RejectReason::BadStatus => "bad_status",
            RejectReason::BadTimestamp => "bad_timestamp",
            RejectReason::BadSize => "bad_size",
            RejectReason::EmptyPath => "empty_path",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid log line: {reason}")]
pub struct ParseError {
    pub reason: RejectReason,
}

impl ParseError {
    fn new(reason: RejectReason) -> ParseError {
        ParseError { reason }
    }
}

/// Tokenizer failure: a `[` span was opened but never closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unterminated bracket span starting at byte {start}")]
pub struct TokenizeError {
    pub start: usize,
}

/// Per-line accounting for a cleaning pass.
///
/// `accepted + rejected = total_lines` and the per-reason counts sum to
/// `rejected`. Two stat blocks from disjoint shards merge by field-wise
/// addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionStats {
    pub total_lines: u64,
    pub accepted: u64,
    pub rejected: u64,
    by_reason: [u64; 7],
}

impl RejectionStats {
    pub fn record_accepted(&mut self) {
        self.total_lines += 1;
        self.accepted += 1;
    }

    pub fn record_rejected(&mut self, reason: RejectReason) {
        self.total_lines += 1;
        self.rejected += 1;
        self.by_reason[reason.index()] += 1;
    }

    pub fn rejected_by(&self, reason: RejectReason) -> u64 {
        self.by_reason[reason.index()]
    }

    pub fn rejected_by_reason(&self) -> BTreeMap<RejectReason, u64> {
        RejectReason::ALL
            .iter()
            .map(|r| (*r, self.by_reason[r.index()]))
            .collect()
    }

    pub fn merge(&mut self, other: &RejectionStats) {
        self.total_lines += other.total_lines;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for i in 0..self.by_reason.len() {
            self.by_reason[i] += other.by_reason[i];
        }
    }
}

impl Serialize for RejectionStats {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        map.serialize_entry("total_lines", &self.total_lines)?;
        map.serialize_entry("accepted", &self.accepted)?;
        map.serialize_entry("rejected", &self.rejected)?;
        let reasons: BTreeMap<&str, u64> = RejectReason::ALL
            .iter()
            .map(|r| (r.as_str(), self.by_reason[r.index()]))
            .collect();
        map.serialize_entry("rejected_by_reason", &reasons)?;
        map.end()
    }
}

/// Splits one log line on the two-byte separator `", "`, except inside a
/// `[...]` span. Returns borrowed tokens in order.
///
/// Bracket spans may themselves contain `[`; the span ends when every open
/// bracket has been closed. A `]` with no open span is treated as a literal
/// byte. An unclosed span is an error.
pub fn tokenize_line(text: &str) -> Result<Vec<&str>, TokenizeError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::with_capacity(8);
    let mut start = 0usize;
    let mut depth = 0usize;
    let mut span_start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'[' => {
                if depth == 0 {
                    span_start = i;
                }
                depth += 1;
            }
            b']' => depth = depth.saturating_sub(1),
            b',' if depth == 0 && bytes.get(i + 1) == Some(&b' ') => {
                tokens.push(&text[start..i]);
                start = i + 2;
                i += 1;
            }
            _ => {}
        }
        i += 1;
    }
    if depth > 0 {
        return Err(TokenizeError { start: span_start });
    }
    tokens.push(&text[start..]);
    Ok(tokens)
}

/// Parses one log line into a [`LogRecord`].
///
/// Trailing whitespace (including a CR from CRLF input) is ignored. The line
/// must tokenize to exactly six fields; each field is then validated in
/// reason-precedence order, so a line with several problems reports the
/// first one. A tokenizer failure counts as `field_count` since the fields
/// cannot be delimited.
pub fn parse_line(text: &str) -> Result<LogRecord, ParseError> {
    let text = text.trim_end();
    let tokens =
        tokenize_line(text).map_err(|_| ParseError::new(RejectReason::FieldCount))?;
    if tokens.len() != 6 {
        return Err(ParseError::new(RejectReason::FieldCount));
    }

    let latency_ms = parse_latency(tokens[0])?;
    let client_ip: IpAddr = tokens[1]
        .parse()
        .map_err(|_| ParseError::new(RejectReason::BadIp))?;
    let status =
        HitStatus::from_wire(tokens[2]).ok_or(ParseError::new(RejectReason::BadStatus))?;
    let timestamp = parse_timestamp(tokens[3])?;
    let size_bytes: u64 = parse_size(tokens[5])?;
    let content_path = tokens[4];
    if content_path.is_empty() {
        return Err(ParseError::new(RejectReason::EmptyPath));
    }

    Ok(LogRecord {
        latency_ms,
        client_ip,
        status,
        timestamp,
        content_path: content_path.to_owned(),
        size_bytes,
    })
}

fn parse_latency(token: &str) -> Result<u64, ParseError> {
    let bad = ParseError::new(RejectReason::BadLatency);
    if token.is_empty() || !token.as_bytes()[0].is_ascii_digit() {
        return Err(bad);
    }
    let seconds: f64 = token.parse().map_err(|_| bad)?;
    if !seconds.is_finite() || seconds < 0.0 {
        return Err(bad);
    }
    let ms = (seconds * 1000.0).round();
    if ms > u64::MAX as f64 {
        return Err(bad);
    }
    Ok(ms as u64)
}

fn parse_size(token: &str) -> Result<u64, ParseError> {
    token
        .parse()
        .map_err(|_| ParseError::new(RejectReason::BadSize))
}

const MONTH_ABBREV: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Parses `[DD/Mon/YYYY:HH:MM:SS ±ZZZZ]`, also accepting a comma between the
/// seconds and the offset. The fast path handles the fixed-width canonical
/// layout; anything else falls back to chrono's parser.
fn parse_timestamp(token: &str) -> Result<DateTime<FixedOffset>, ParseError> {
    let bad = ParseError::new(RejectReason::BadTimestamp);
    let inner = token
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or(bad)?;
    // Optional comma variant: "03/Dec/2018:00:00:00, +0700".
    let canonical;
    let inner = if let Some(idx) = inner.find(", ") {
        canonical = format!("{} {}", &inner[..idx], &inner[idx + 2..]);
        canonical.as_str()
    } else {
        inner
    };

    if let Some(ts) = parse_timestamp_fixed(inner) {
        return Ok(ts);
    }
    DateTime::parse_from_str(inner, "%d/%b/%Y:%H:%M:%S %z").map_err(|_| bad)
}

/// Fixed-width fast path: `DD/Mon/YYYY:HH:MM:SS ±HHMM` (26 bytes).
fn parse_timestamp_fixed(s: &str) -> Option<DateTime<FixedOffset>> {
    let b = s.as_bytes();
    if b.len() != 26 {
        return None;
    }
    if b[2] != b'/' || b[6] != b'/' || b[11] != b':' || b[14] != b':' || b[17] != b':' || b[20] != b' '
    {
        return None;
    }
    let day = two_digits(b, 0)?;
    let mon_txt = &s[3..6];
    let month = MONTH_ABBREV.iter().position(|m| *m == mon_txt)? as u32 + 1;
    let year = four_digits(b, 7)?;
    let hour = two_digits(b, 12)?;
    let min = two_digits(b, 15)?;
    let sec = two_digits(b, 18)?;
    let sign = match b[21] {
        b'+' => 1i32,
        b'-' => -1i32,
        _ => return None,
    };
    let off_h = two_digits(b, 22)? as i32;
    let off_m = two_digits(b, 24)? as i32;
    let offset = FixedOffset::east_opt(sign * (off_h * 3600 + off_m * 60))?;
    NaiveDate::from_ymd_opt(year as i32, month, day)?
        .and_hms_opt(hour, min, sec)?
        .and_local_timezone(offset)
        .single()
}

fn two_digits(b: &[u8], at: usize) -> Option<u32> {
    let (d0, d1) = (b[at], b[at + 1]);
    if d0.is_ascii_digit() && d1.is_ascii_digit() {
        Some((d0 - b'0') as u32 * 10 + (d1 - b'0') as u32)
    } else {
        None
    }
}

fn four_digits(b: &[u8], at: usize) -> Option<u32> {
    Some(two_digits(b, at)? * 100 + two_digits(b, at + 2)?)
}

/// Serializes a record in the canonical line format: six fields joined by
/// `", "`, latency with exactly three decimals, the no-comma timestamp form,
/// and `-` for [`HitStatus::Local`].
///
/// Not every `LogRecord` is representable on the wire: a `content_path`
/// containing the `", "` separator or an unbalanced `[` produces a line that
/// will not parse back to the same record. Paths written by real CDN
/// configurations do not contain either.
pub fn format_record(r: &LogRecord) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(64 + r.content_path.len());
    let _ = write!(
        out,
        "{}.{:03}, {}, {}, [{}], {}, {}",
        r.latency_ms / 1000,
        r.latency_ms % 1000,
        r.client_ip,
        r.status.wire(),
        r.timestamp.format("%d/%b/%Y:%H:%M:%S %z"),
        r.content_path,
        r.size_bytes
    );
    out
}

/// Parses every line, keeping accepted records in input order and counting
/// each rejection by reason.
pub fn clean_stream<I, S>(lines: I) -> (Vec<LogRecord>, RejectionStats)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut records = Vec::new();
    let mut stats = RejectionStats::default();
    for line in lines {
        match parse_line(line.as_ref()) {
            Ok(record) => {
                stats.record_accepted();
                records.push(record);
            }
            Err(err) => stats.record_rejected(err.reason),
        }
    }
    (records, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_ROW: &str = "0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00 +0700], /38f16b08fd/dongthap1tv-mid-5803464.ts, 437664";

    #[test]
    fn tokenize_plain_row() {
        let tokens = tokenize_line(TABLE_ROW).unwrap();
        assert_eq!(tokens.len(), 6);
        assert_eq!(tokens[0], "0.136");
        assert_eq!(tokens[3], "[03/Dec/2018:00:00:00 +0700]");
        assert_eq!(tokens[5], "437664");
    }

    #[test]
    fn tokenize_preserves_comma_inside_brackets() {
        let line = "0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00, +0700], /a.ts, 437664";
        let tokens = tokenize_line(line).unwrap();
        assert_eq!(tokens.len(), 6);
        assert_eq!(tokens[3], "[03/Dec/2018:00:00:00, +0700]");
    }

    #[test]
    fn tokenize_comma_in_content_name() {
        // A separator inside the content name shifts the remaining fields: the
        // song title becomes a sixth token and the size is lost.
        let line =
            "0.017, 118.69.133.153, -, [03/Dec/2018:00:00:00 +0700], /img_songs/Nonstop, TONNY";
        let tokens = tokenize_line(line).unwrap();
        assert_eq!(tokens.len(), 6);
        assert_eq!(tokens[4], "/img_songs/Nonstop");
        assert_eq!(tokens[5], "TONNY");
    }

    #[test]
    fn tokenize_unterminated_bracket() {
        let err = tokenize_line("0.1, 1.2.3.4, HIT, [03/Dec/2018, /a.ts, 10").unwrap_err();
        assert_eq!(err.start, 19);
    }

    #[test]
    fn parse_table_row() {
        let r = parse_line(TABLE_ROW).unwrap();
        assert_eq!(r.latency_ms, 136);
        assert_eq!(r.client_ip, "118.68.222.40".parse::<IpAddr>().unwrap());
        assert_eq!(r.status, HitStatus::Miss);
        assert_eq!(r.size_bytes, 437664);
        assert_eq!(r.content_path, "/38f16b08fd/dongthap1tv-mid-5803464.ts");
        assert_eq!(r.timestamp.to_rfc3339(), "2018-12-03T00:00:00+07:00");
    }

    #[test]
    fn parse_comma_timestamp_variant() {
        let line = "0.000, 1.52.122.25, HIT, [03/Dec/2018:00:00:00, +0700], /live/prod_kplus_pm_hd-audio_vie=56000-video=2499968.m3u8, 0";
        let r = parse_line(line).unwrap();
        assert_eq!(r.latency_ms, 0);
        assert_eq!(r.status, HitStatus::Hit);
        assert_eq!(r.size_bytes, 0);
    }

    #[test]
    fn parse_rejects_by_reason() {
        let cases = [
            ("too, few, fields", RejectReason::FieldCount),
            (
                "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 10, extra",
                RejectReason::FieldCount,
            ),
            (
                "-1.0, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 10",
                RejectReason::BadLatency,
            ),
            (
                "abc, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 10",
                RejectReason::BadLatency,
            ),
            (
                "0.1, 999.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 10",
                RejectReason::BadIp,
            ),
            (
                "0.1, 1.2.3.4, HITX, [03/Dec/2018:00:00:00 +0700], /a.ts, 10",
                RejectReason::BadStatus,
            ),
            (
                "0.1, 1.2.3.4, HIT, [99/Dec/2018:00:00:00 +0700], /a.ts, 10",
                RejectReason::BadTimestamp,
            ),
            (
                "0.1, 1.2.3.4, HIT, 03/Dec/2018:00:00:00 +0700, /a.ts, 10",
                RejectReason::BadTimestamp,
            ),
            (
                "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, -5",
                RejectReason::BadSize,
            ),
            (
                "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 1x",
                RejectReason::BadSize,
            ),
            (
                "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], , 10",
                RejectReason::EmptyPath,
            ),
        ];
        for (line, reason) in cases {
            assert_eq!(parse_line(line).unwrap_err().reason, reason, "line: {line}");
        }
    }

    #[test]
    fn reason_precedence_latency_before_ip() {
        // Both the latency and the IP are invalid; the earlier reason wins.
        let line = "x, bogus, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 10";
        assert_eq!(
            parse_line(line).unwrap_err().reason,
            RejectReason::BadLatency
        );
    }

    #[test]
    fn parse_accepts_crlf_and_trailing_space() {
        assert!(parse_line(&format!("{TABLE_ROW}\r")).is_ok());
        assert!(parse_line(&format!("{TABLE_ROW} ")).is_ok());
    }

    #[test]
    fn parse_ipv6() {
        let line = "0.020, 2001:db8::1, HIT1, [03/Dec/2018:10:30:00 +0700], /a.m3u8, 99";
        let r = parse_line(line).unwrap();
        assert_eq!(r.client_ip, "2001:db8::1".parse::<IpAddr>().unwrap());
        assert_eq!(r.status, HitStatus::Hit1);
    }

    #[test]
    fn format_canonical_row() {
        let r = parse_line(TABLE_ROW).unwrap();
        assert_eq!(format_record(&r), TABLE_ROW);
    }

    #[test]
    fn format_normalizes_comma_timestamp() {
        let line = "0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00, +0700], /a.ts, 437664";
        let r = parse_line(line).unwrap();
        assert_eq!(
            format_record(&r),
            "0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00 +0700], /a.ts, 437664"
        );
    }

    #[test]
    fn format_local_status_as_dash() {
        let mut r = parse_line(TABLE_ROW).unwrap();
        r.status = HitStatus::Local;
        let line = format_record(&r);
        assert_eq!(tokenize_line(&line).unwrap()[2], "-");
        assert_eq!(parse_line(&line).unwrap().status, HitStatus::Local);
    }

    #[test]
    fn clean_table_examples() {
        // The two red rows from the wrong-record examples: one loses its size
        // field to a separator in the song name, one is truncated.
        let lines = [
            "0.017, 118.69.133.153, -, [03/Dec/2018:00:00:00 +0700], /img_songs/Nonstop, TONNY",
            TABLE_ROW,
            "0.019, 118.69.133.153, -, [03/Dec/2018:00:00:00 +0700], /img_songs/Nonstop, ",
            "0.000, 1.52.122.25, HIT, [03/Dec/2018:00:00:00, +0700], /live/prod_kplus_pm_hd-audio_vie=56000-video=2499968.m3u8, 0",
        ];
        let (records, stats) = clean_stream(lines);
        assert_eq!(records.len(), 2);
        assert_eq!(stats.total_lines, 4);
        assert_eq!(stats.accepted, 2);
        assert_eq!(stats.rejected, 2);
        // Token counts: the first row still has six tokens (the song title
        // lands in the size position), the third collapses to five.
        assert_eq!(stats.rejected_by(RejectReason::BadSize), 1);
        assert_eq!(stats.rejected_by(RejectReason::FieldCount), 1);
    }

    #[test]
    fn clean_empty_input() {
        let (records, stats) = clean_stream(Vec::<String>::new());
        assert!(records.is_empty());
        assert_eq!(stats, RejectionStats::default());
    }

    #[test]
    fn stats_merge_is_fieldwise() {
        let (_, mut a) = clean_stream([TABLE_ROW, "junk"]);
        let (_, b) = clean_stream(["more junk, here", TABLE_ROW, TABLE_ROW]);
        a.merge(&b);
        assert_eq!(a.total_lines, 5);
        assert_eq!(a.accepted, 3);
        assert_eq!(a.rejected, 2);
        assert_eq!(a.rejected_by(RejectReason::FieldCount), 2);
    }

    #[test]
    fn stats_serialize_shape() {
        let (_, stats) = clean_stream([TABLE_ROW, "junk"]);
        let json = serde_json::to_value(stats).unwrap();
        assert_eq!(json["total_lines"], 2);
        assert_eq!(json["rejected_by_reason"]["field_count"], 1);
        assert_eq!(json["rejected_by_reason"]["bad_ip"], 0);
    }
}
