//! Performance statistics over cleaned (and optionally classified and
//! geo-enriched) records: layered hit rates, latency and size summaries,
//! hourly time series, and MIME breakdowns.
//!
//! Every aggregation is exposed both as a one-shot function and as a
//! collector with an `add` / `merge` / `finish` contract, so shards of a
//! stream can be processed independently and merged: the merged result
//! equals the single-pass result over the concatenation, regardless of
//! shard boundaries or merge order.
//!
//! Quantiles are exact order statistics with linear interpolation (the
//! common "type 7" definition): for `n` sorted values, quantile `p` sits at
//! rank `(n-1)·p` and interpolates between the surrounding values. Whiskers
//! follow Tukey's rule: the farthest data points within `1.5 × IQR` of the
//! quartiles. Groups beyond 10^7 values fall back to deterministic
//! reservoir sampling (fixed seed, 10^6 samples) and are flagged
//! approximate. In reservoir mode the shard/merge result is deterministic
//! for a fixed shard layout but may differ from the single-pass result.
//!
//! Sums feeding the reports are computed order-independently (integer
//! arithmetic, or floating-point addition over sorted values), so
//! shard/merge equality is bit-exact rather than approximate.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use chrono::{NaiveDateTime, Timelike};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::classify::ServiceClass;
use crate::geoip::GeoInfo;
use crate::logline::{HitStatus, LogRecord};

/// Tallies of the four hit statuses. Merging is field-wise addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HitCounts {
    pub n_miss: u64,
    pub n_hit: u64,
    pub n_hit1: u64,
    pub n_local: u64,
}

impl HitCounts {
    pub fn count(&mut self, status: HitStatus) {
        match status {
            HitStatus::Miss => self.n_miss += 1,
            HitStatus::Hit => self.n_hit += 1,
            HitStatus::Hit1 => self.n_hit1 += 1,
            HitStatus::Local => self.n_local += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_miss + self.n_hit + self.n_hit1 + self.n_local
    }
}

impl Add for HitCounts {
    type Output = HitCounts;

    fn add(self, other: HitCounts) -> HitCounts {
        HitCounts {
            n_miss: self.n_miss + other.n_miss,
            n_hit: self.n_hit + other.n_hit,
            n_hit1: self.n_hit1 + other.n_hit1,
            n_local: self.n_local + other.n_local,
        }
    }
}

impl AddAssign for HitCounts {
    fn add_assign(&mut self, other: HitCounts) {
        *self = *self + other;
    }
}

/// Layered hit rates for one group.
///
/// With `C = n_miss + n_hit + n_hit1` (CDN-served requests):
/// `edge = n_hit / C`, `regional = n_hit1 / (n_hit1 + n_miss)`,
/// `system = (n_hit + n_hit1) / C`, and algebraically
/// `system = edge + (1 - edge) × regional`. `-` records are tallied in
/// `n_local` but excluded from all three denominators; they were served
/// before reaching the CDN. A rate whose denominator is zero is `None`
/// (rendered `null`), never `0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitRateReport {
    pub edge_rate: Option<f64>,
    pub regional_rate: Option<f64>,
    pub system_rate: Option<f64>,
    #[serde(flatten)]
    pub counts: HitCounts,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HitRateOptions {
    /// Count `-` records as system-level hits (sensitivity analysis):
    /// `system = (n_hit + n_hit1 + n_local) / (C + n_local)`.
    pub include_local_in_system: bool,
}

impl HitRateReport {
    pub fn from_counts(counts: HitCounts, opts: HitRateOptions) -> HitRateReport {
        let cdn_total = counts.n_miss + counts.n_hit + counts.n_hit1;
        let ratio = |num: u64, den: u64| {
            if den > 0 {
                Some(num as f64 / den as f64)
            } else {
                None
            }
        };
        let system_rate = if opts.include_local_in_system {
            ratio(
                counts.n_hit + counts.n_hit1 + counts.n_local,
                cdn_total + counts.n_local,
            )
        } else {
            ratio(counts.n_hit + counts.n_hit1, cdn_total)
        };
        HitRateReport {
            edge_rate: ratio(counts.n_hit, cdn_total),
            regional_rate: ratio(counts.n_hit1, counts.n_hit1 + counts.n_miss),
            system_rate,
            counts,
        }
    }
}

/// Tukey boxplot statistics plus the arithmetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiveNumberSummary {
    pub count: u64,
    pub mean: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
    /// True when computed from a reservoir sample rather than all values.
    pub approximate: bool,
}

pub type LatencySummary = FiveNumberSummary;

/// Linear-interpolation quantile over sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (n - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn five_number(sorted: &[f64], count: u64, mean: f64, approximate: bool) -> FiveNumberSummary {
    let q1 = quantile_sorted(sorted, 0.25);
    let median = quantile_sorted(sorted, 0.5);
    let q3 = quantile_sorted(sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let lower_whisker = *sorted
        .iter()
        .find(|v| **v >= lo_fence)
        .expect("q1 is within the fence");
    let upper_whisker = *sorted
        .iter()
        .rev()
        .find(|v| **v <= hi_fence)
        .expect("q3 is within the fence");
    FiveNumberSummary {
        count,
        mean,
        lower_whisker,
        q1,
        median,
        q3,
        upper_whisker,
        approximate,
    }
}

/// Largest group that is summarized exactly; larger groups are sampled.
pub const EXACT_SUMMARY_LIMIT: usize = 10_000_000;
const RESERVOIR_SIZE: usize = 1_000_000;
const RESERVOIR_SEED: u64 = 0x5eed_0711;

/// Value collector behind every five-number summary.
#[derive(Debug, Clone, Default)]
pub struct SummaryCollector {
    values: Vec<f64>,
    seen: u64,
    sampling: bool,
    rng: Option<ChaCha12Rng>,
}

impl SummaryCollector {
    pub fn add(&mut self, value: f64) {
        self.seen += 1;
        if !self.sampling {
            self.values.push(value);
            if self.values.len() > EXACT_SUMMARY_LIMIT {
                self.switch_to_sampling();
            }
            return;
        }
        // Reservoir algorithm R.
        let rng = self.rng.as_mut().expect("sampling implies rng");
        let slot = rng.random_range(0..self.seen);
        if (slot as usize) < RESERVOIR_SIZE {
            self.values[slot as usize] = value;
        }
    }

    fn switch_to_sampling(&mut self) {
        let mut rng = ChaCha12Rng::seed_from_u64(RESERVOIR_SEED);
        // Downsample what we have to the reservoir size.
        for i in RESERVOIR_SIZE..self.values.len() {
            let slot = rng.random_range(0..=i as u64);
            if (slot as usize) < RESERVOIR_SIZE {
                self.values[slot as usize] = self.values[i];
            }
        }
        self.values.truncate(RESERVOIR_SIZE);
        self.sampling = true;
        self.rng = Some(rng);
    }

    pub fn merge(&mut self, other: SummaryCollector) {
        self.seen += other.seen;
        if !self.sampling && !other.sampling {
            self.values.extend(other.values);
            if self.values.len() > EXACT_SUMMARY_LIMIT {
                self.switch_to_sampling();
            }
        } else {
            // At least one side is a sample already; fold the other side's
            // retained values through the reservoir.
            if !self.sampling {
                self.switch_to_sampling();
            }
            let rng = self.rng.as_mut().expect("sampling implies rng");
            for v in other.values {
                let slot = rng.random_range(0..self.seen);
                if (slot as usize) < RESERVOIR_SIZE {
                    self.values[slot as usize] = v;
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.seen == 0
    }

    pub fn finish(mut self) -> Option<FiveNumberSummary> {
        if self.seen == 0 {
            return None;
        }
        self.values.sort_by(|a, b| a.total_cmp(b));
        // Summing the sorted values makes the mean independent of shard
        // boundaries and merge order. In sampling mode this is the sample
        // mean, covered by the `approximate` flag.
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        Some(five_number(&self.values, self.seen, mean, self.sampling))
    }
}

/// Grouping keys for hit-rate and latency reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    All,
    Service,
    Isp,
    Province,
    Hour,
}

impl GroupBy {
    pub fn parse(s: &str) -> Option<GroupBy> {
        match s {
            "all" => Some(GroupBy::All),
            "service" => Some(GroupBy::Service),
            "isp" => Some(GroupBy::Isp),
            "province" => Some(GroupBy::Province),
            "hour" => Some(GroupBy::Hour),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupBy::All => "all",
            GroupBy::Service => "service",
            GroupBy::Isp => "isp",
            GroupBy::Province => "province",
            GroupBy::Hour => "hour",
        }
    }
}

/// A record together with whatever context the pipeline has attached so
/// far. Service and geo are optional; records missing the grouping
/// attribute land in the `"unknown"` group so totals stay conserved.
#[derive(Debug, Clone, Copy)]
pub struct RecordCtx<'a> {
    pub record: &'a LogRecord,
    pub service: Option<ServiceClass>,
    pub geo: Option<&'a GeoInfo>,
}

impl<'a> RecordCtx<'a> {
    pub fn bare(record: &'a LogRecord) -> RecordCtx<'a> {
        RecordCtx {
            record,
            service: None,
            geo: None,
        }
    }
}

/// Hour-truncated wall-clock time in the record's own UTC offset. Records
/// from different offsets bucket by their own local hour.
pub fn local_hour(record: &LogRecord) -> NaiveDateTime {
    record
        .timestamp
        .naive_local()
        .with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zeroing sub-hour fields cannot fail")
}

pub fn hour_label(hour: &NaiveDateTime) -> String {
    hour.format("%Y-%m-%dT%H:00:00").to_string()
}

fn group_label(ctx: &RecordCtx<'_>, by: GroupBy) -> String {
    match by {
        GroupBy::All => "all".to_owned(),
        GroupBy::Service => ctx
            .service
            .map(|s| s.as_str().to_owned())
            .unwrap_or_else(|| "unknown".to_owned()),
        GroupBy::Isp => ctx
            .geo
            .map(|g| g.isp.clone())
            .unwrap_or_else(|| "unknown".to_owned()),
        GroupBy::Province => ctx
            .geo
            .map(|g| g.province.clone())
            .unwrap_or_else(|| "unknown".to_owned()),
        GroupBy::Hour => hour_label(&local_hour(ctx.record)),
    }
}

/// Sharded hit-rate aggregation.
#[derive(Debug, Clone, Default)]
pub struct HitRateCollector {
    by_group: BTreeMap<String, HitCounts>,
}

impl HitRateCollector {
    pub fn add(&mut self, ctx: &RecordCtx<'_>, by: GroupBy) {
        self.by_group
            .entry(group_label(ctx, by))
            .or_default()
            .count(ctx.record.status);
    }

    pub fn merge(&mut self, other: HitRateCollector) {
        for (group, counts) in other.by_group {
            *self.by_group.entry(group).or_default() += counts;
        }
    }

    pub fn finish(self, opts: HitRateOptions) -> BTreeMap<String, HitRateReport> {
        self.by_group
            .into_iter()
            .map(|(group, counts)| (group, HitRateReport::from_counts(counts, opts)))
            .collect()
    }
}

/// Per-group hit rates. See [`HitRateReport`] for the formulas.
pub fn hit_rates<'a, I>(records: I, by: GroupBy, opts: HitRateOptions) -> BTreeMap<String, HitRateReport>
where
    I: IntoIterator<Item = RecordCtx<'a>>,
{
    let mut collector = HitRateCollector::default();
    for ctx in records {
        collector.add(&ctx, by);
    }
    collector.finish(opts)
}

/// Sharded latency summary aggregation.
#[derive(Debug, Clone, Default)]
pub struct LatencyCollector {
    by_group: BTreeMap<String, SummaryCollector>,
}

impl LatencyCollector {
    pub fn add(&mut self, ctx: &RecordCtx<'_>, by: GroupBy) {
        self.by_group
            .entry(group_label(ctx, by))
            .or_default()
            .add(ctx.record.latency_seconds());
    }

    pub fn merge(&mut self, other: LatencyCollector) {
        for (group, collector) in other.by_group {
            match self.by_group.entry(group) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(collector);
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    o.get_mut().merge(collector);
                }
            }
        }
    }

    pub fn finish(self) -> BTreeMap<String, LatencySummary> {
        self.by_group
            .into_iter()
            .filter_map(|(group, c)| c.finish().map(|s| (group, s)))
            .collect()
    }
}

/// Per-group latency five-number summaries, in seconds. Empty groups are
/// omitted.
pub fn latency_summary<'a, I>(records: I, by: GroupBy) -> BTreeMap<String, LatencySummary>
where
    I: IntoIterator<Item = RecordCtx<'a>>,
{
    let mut collector = LatencyCollector::default();
    for ctx in records {
        collector.add(&ctx, by);
    }
    collector.finish()
}

/// One wall-clock hour of traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeSeriesBucket {
    pub bucket_start: NaiveDateTime,
    pub request_count: u64,
    pub total_bytes: u64,
    pub latency_sum_seconds: f64,
    pub latency_mean_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct BucketTally {
    requests: u64,
    bytes: u64,
    latency_sum_ms: u64,
}

/// Sharded hourly time-series aggregation.
#[derive(Debug, Clone, Default)]
pub struct TimeSeriesCollector {
    buckets: BTreeMap<NaiveDateTime, BucketTally>,
}

impl TimeSeriesCollector {
    pub fn add(&mut self, record: &LogRecord) {
        let tally = self.buckets.entry(local_hour(record)).or_default();
        tally.requests += 1;
        tally.bytes += record.size_bytes;
        tally.latency_sum_ms += record.latency_ms;
    }

    pub fn merge(&mut self, other: TimeSeriesCollector) {
        for (hour, tally) in other.buckets {
            let mine = self.buckets.entry(hour).or_default();
            mine.requests += tally.requests;
            mine.bytes += tally.bytes;
            mine.latency_sum_ms += tally.latency_sum_ms;
        }
    }

    pub fn finish(self) -> Vec<TimeSeriesBucket> {
        self.buckets
            .into_iter()
            .map(|(bucket_start, t)| {
                let latency_sum = t.latency_sum_ms as f64 / 1000.0;
                TimeSeriesBucket {
                    bucket_start,
                    request_count: t.requests,
                    total_bytes: t.bytes,
                    latency_sum_seconds: latency_sum,
                    latency_mean_seconds: latency_sum / t.requests as f64,
                }
            })
            .collect()
    }
}

/// Hourly request counts and byte volumes, sorted by bucket start. Counts
/// and byte sums over all buckets equal the stream totals.
pub fn time_series<'a, I>(records: I) -> Vec<TimeSeriesBucket>
where
    I: IntoIterator<Item = &'a LogRecord>,
{
    let mut collector = TimeSeriesCollector::default();
    for record in records {
        collector.add(record);
    }
    collector.finish()
}

/// MIME classes reported in content breakdowns, decided by path extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MimeClass {
    M3u8,
    Mpd,
    Ts,
    Dash,
    Mp3,
    Mp4,
    Image,
    Other,
}

impl MimeClass {
    pub const ALL: [MimeClass; 8] = [
        MimeClass::M3u8,
        MimeClass::Mpd,
        MimeClass::Ts,
        MimeClass::Dash,
        MimeClass::Mp3,
        MimeClass::Mp4,
        MimeClass::Image,
        MimeClass::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MimeClass::M3u8 => "m3u8",
            MimeClass::Mpd => "mpd",
            MimeClass::Ts => "ts",
            MimeClass::Dash => "dash",
            MimeClass::Mp3 => "mp3",
            MimeClass::Mp4 => "mp4",
            MimeClass::Image => "image",
            MimeClass::Other => "other",
        }
    }

    pub fn of_path(path: &str) -> MimeClass {
        match crate::classify::path_extension(path).as_deref() {
            Some("m3u8") => MimeClass::M3u8,
            Some("mpd") => MimeClass::Mpd,
            Some("ts") => MimeClass::Ts,
            Some("dash") => MimeClass::Dash,
            Some("mp3") => MimeClass::Mp3,
            Some("mp4") => MimeClass::Mp4,
            Some("jpg" | "jpeg" | "png" | "gif" | "webp" | "svg" | "ico" | "bmp") => {
                MimeClass::Image
            }
            _ => MimeClass::Other,
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Raw request/byte tallies per MIME class; fractions come out at
/// [`MimeCollector::finish`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MimeCollector {
    requests: [u64; 8],
    bytes: [u64; 8],
}

impl MimeCollector {
    pub fn add(&mut self, record: &LogRecord) {
        let idx = MimeClass::of_path(&record.content_path).index();
        self.requests[idx] += 1;
        self.bytes[idx] += record.size_bytes;
    }

    pub fn merge(&mut self, other: MimeCollector) {
        for i in 0..8 {
            self.requests[i] += other.requests[i];
            self.bytes[i] += other.bytes[i];
        }
    }

    pub fn finish(self) -> MimeBreakdown {
        let total_requests: u64 = self.requests.iter().sum();
        let total_bytes: u64 = self.bytes.iter().sum();
        let frac = |part: u64, total: u64| {
            if total > 0 {
                part as f64 / total as f64
            } else {
                0.0
            }
        };
        let classes = MimeClass::ALL
            .iter()
            .map(|class| {
                let i = class.index();
                MimeClassStats {
                    class: *class,
                    requests: self.requests[i],
                    bytes: self.bytes[i],
                    request_fraction: frac(self.requests[i], total_requests),
                    byte_fraction: frac(self.bytes[i], total_bytes),
                }
            })
            .collect();
        MimeBreakdown {
            total_requests,
            total_bytes,
            classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MimeClassStats {
    pub class: MimeClass,
    pub requests: u64,
    pub bytes: u64,
    pub request_fraction: f64,
    pub byte_fraction: f64,
}

/// Request-count and byte-volume fractions per MIME class. Each fraction
/// vector sums to 1 when its total is positive; with a zero total the
/// fractions are all zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MimeBreakdown {
    pub total_requests: u64,
    pub total_bytes: u64,
    pub classes: Vec<MimeClassStats>,
}

pub fn mime_breakdown<'a, I>(records: I) -> MimeBreakdown
where
    I: IntoIterator<Item = &'a LogRecord>,
{
    let mut collector = MimeCollector::default();
    for record in records {
        collector.add(record);
    }
    collector.finish()
}

const BYTES_PER_MB: f64 = 1e6;

/// Sharded per-service size distribution, in decimal megabytes.
#[derive(Debug, Clone, Default)]
pub struct SizeDistCollector {
    by_service: BTreeMap<ServiceClass, SummaryCollector>,
}

impl SizeDistCollector {
    pub fn add(&mut self, service: ServiceClass, size_bytes: u64) {
        self.by_service
            .entry(service)
            .or_default()
            .add(size_bytes as f64 / BYTES_PER_MB);
    }

    pub fn merge(&mut self, other: SizeDistCollector) {
        for (service, collector) in other.by_service {
            match self.by_service.entry(service) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(collector);
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    o.get_mut().merge(collector);
                }
            }
        }
    }

    pub fn finish(self) -> SizeDistribution {
        SizeDistribution {
            by_service: self
                .by_service
                .into_iter()
                .filter_map(|(s, c)| c.finish().map(|summary| (s, summary)))
                .collect(),
        }
    }
}

/// Five-number summary of content size per service class, in decimal
/// megabytes (`bytes / 1e6`). Empty classes are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeDistribution {
    pub by_service: BTreeMap<ServiceClass, FiveNumberSummary>,
}

pub fn size_distribution<'a, I>(records: I) -> SizeDistribution
where
    I: IntoIterator<Item = (&'a LogRecord, ServiceClass)>,
{
    let mut collector = SizeDistCollector::default();
    for (record, service) in records {
        collector.add(service, record.size_bytes);
    }
    collector.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logline::parse_line;

    fn record(latency: &str, status: &str, hour: u32, path: &str, size: u64) -> LogRecord {
        parse_line(&format!(
            "{latency}, 1.2.3.4, {status}, [03/Dec/2018:{hour:02}:15:00 +0700], {path}, {size}"
        ))
        .unwrap()
    }

    #[test]
    fn hit_rate_formulas() {
        let counts = HitCounts {
            n_miss: 1,
            n_hit: 8,
            n_hit1: 1,
            n_local: 0,
        };
        let report = HitRateReport::from_counts(counts, HitRateOptions::default());
        assert_eq!(report.edge_rate, Some(0.8));
        assert_eq!(report.regional_rate, Some(0.5));
        assert_eq!(report.system_rate, Some(0.9));
        let (e, r, s) = (0.8f64, 0.5f64, 0.9f64);
        assert!((e + (1.0 - e) * r - s).abs() < 1e-12);
    }

    #[test]
    fn hit_rate_all_local_is_null() {
        let counts = HitCounts {
            n_local: 10,
            ..HitCounts::default()
        };
        let report = HitRateReport::from_counts(counts, HitRateOptions::default());
        assert_eq!(report.edge_rate, None);
        assert_eq!(report.regional_rate, None);
        assert_eq!(report.system_rate, None);
        let with_local = HitRateReport::from_counts(
            counts,
            HitRateOptions {
                include_local_in_system: true,
            },
        );
        assert_eq!(with_local.system_rate, Some(1.0));
    }

    #[test]
    fn hit_rates_group_by_service() {
        let records = [
            (record("0.1", "HIT", 8, "/a.ts", 1), ServiceClass::LiveStreaming),
            (record("0.1", "MISS", 8, "/a.ts", 1), ServiceClass::LiveStreaming),
            (record("0.1", "HIT", 8, "/b.png", 1), ServiceClass::Website),
        ];
        let reports = hit_rates(
            records.iter().map(|(r, s)| RecordCtx {
                record: r,
                service: Some(*s),
                geo: None,
            }),
            GroupBy::Service,
            HitRateOptions::default(),
        );
        assert_eq!(reports.len(), 2);
        assert_eq!(reports["live_streaming"].edge_rate, Some(0.5));
        assert_eq!(reports["website"].edge_rate, Some(1.0));
    }

    #[test]
    fn five_number_small_sets() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut c = SummaryCollector::default();
        for v in values {
            c.add(v);
        }
        let s = c.finish().unwrap();
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.lower_whisker, 1.0);
        assert_eq!(s.upper_whisker, 5.0);
        assert!(!s.approximate);
    }

    #[test]
    fn five_number_single_value() {
        let mut c = SummaryCollector::default();
        c.add(7.25);
        let s = c.finish().unwrap();
        assert!(
            s.lower_whisker == 7.25
                && s.q1 == 7.25
                && s.median == 7.25
                && s.q3 == 7.25
                && s.upper_whisker == 7.25
        );
    }

    #[test]
    fn whiskers_exclude_outliers() {
        // 1..=11 plus a far outlier; the fence cuts the outlier off.
        let mut c = SummaryCollector::default();
        for v in 1..=11 {
            c.add(v as f64);
        }
        c.add(100.0);
        let s = c.finish().unwrap();
        assert_eq!(s.upper_whisker, 11.0);
        assert_eq!(s.lower_whisker, 1.0);
    }

    #[test]
    fn quantile_interpolates() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(quantile_sorted(&sorted, 0.25), 1.75);
    }

    #[test]
    fn latency_groups_by_hour_and_omits_empty() {
        let records = [
            record("1.000", "HIT", 8, "/a.ts", 1),
            record("2.000", "HIT", 8, "/a.ts", 1),
            record("9.000", "HIT", 9, "/a.ts", 1),
        ];
        let summaries = latency_summary(records.iter().map(RecordCtx::bare), GroupBy::Hour);
        assert_eq!(summaries.len(), 2);
        assert_eq!(summaries["2018-12-03T08:00:00"].count, 2);
        assert_eq!(summaries["2018-12-03T08:00:00"].mean, 1.5);
        assert_eq!(summaries["2018-12-03T09:00:00"].median, 9.0);
    }

    #[test]
    fn time_series_buckets_and_conservation() {
        let records = [
            record("0.1", "HIT", 0, "/a.ts", 1),
            record("0.1", "HIT", 0, "/a.ts", 2),
            record("0.1", "HIT", 0, "/a.ts", 3),
        ];
        let buckets = time_series(records.iter());
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].request_count, 3);
        assert_eq!(buckets[0].total_bytes, 6);
    }

    #[test]
    fn time_series_hour_boundary() {
        let a = parse_line(
            "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:59:59 +0700], /a.ts, 1",
        )
        .unwrap();
        let b = parse_line(
            "0.1, 1.2.3.4, HIT, [03/Dec/2018:01:00:00 +0700], /a.ts, 1",
        )
        .unwrap();
        let buckets = time_series([&a, &b]);
        assert_eq!(buckets.len(), 2);
        assert_eq!(hour_label(&buckets[0].bucket_start), "2018-12-03T00:00:00");
        assert_eq!(hour_label(&buckets[1].bucket_start), "2018-12-03T01:00:00");
    }

    #[test]
    fn mime_fractions() {
        let records = [
            record("0.1", "HIT", 8, "/a.ts", 100),
            record("0.1", "HIT", 8, "/b.m3u8", 0),
        ];
        let breakdown = mime_breakdown(records.iter());
        let by_class: BTreeMap<MimeClass, &MimeClassStats> =
            breakdown.classes.iter().map(|c| (c.class, c)).collect();
        assert_eq!(by_class[&MimeClass::Ts].request_fraction, 0.5);
        assert_eq!(by_class[&MimeClass::M3u8].request_fraction, 0.5);
        assert_eq!(by_class[&MimeClass::Ts].byte_fraction, 1.0);
        assert_eq!(by_class[&MimeClass::M3u8].byte_fraction, 0.0);
        let req_sum: f64 = breakdown.classes.iter().map(|c| c.request_fraction).sum();
        assert!((req_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mime_class_of_path() {
        assert_eq!(MimeClass::of_path("/a/b.TS"), MimeClass::Ts);
        assert_eq!(MimeClass::of_path("/a/logo.jpeg"), MimeClass::Image);
        assert_eq!(MimeClass::of_path("/a/app.js"), MimeClass::Other);
        assert_eq!(MimeClass::of_path("/a/noext"), MimeClass::Other);
    }

    #[test]
    fn mime_recovers_generated_trace_mix() {
        use crate::generate::{gen_trace, WorkloadConfig};
        let cfg = WorkloadConfig {
            seed: 99,
            requests_per_day: 20_000,
            ..WorkloadConfig::default()
        };
        let (events, _) = gen_trace(&cfg).unwrap();
        // Independent tally: classify extensions with a plain string match
        // over the event paths.
        let mut naive: BTreeMap<&str, u64> = BTreeMap::new();
        for event in &events {
            let ext = event.path.rsplit('.').next().unwrap_or("");
            let class = match ext {
                "m3u8" => "m3u8",
                "mpd" => "mpd",
                "ts" => "ts",
                "dash" => "dash",
                "mp3" => "mp3",
                "mp4" => "mp4",
                "jpg" | "jpeg" | "png" | "gif" | "webp" | "svg" | "ico" | "bmp" => "image",
                _ => "other",
            };
            *naive.entry(class).or_insert(0) += 1;
        }
        let records: Vec<LogRecord> = events
            .iter()
            .map(|e| {
                parse_line(&format!(
                    "0.001, {}, HIT, [03/Dec/2018:08:00:00 +0700], {}, {}",
                    e.client_ip, e.path, e.size_bytes
                ))
                .unwrap()
            })
            .collect();
        let breakdown = mime_breakdown(records.iter());
        let total = events.len() as f64;
        let l1: f64 = breakdown
            .classes
            .iter()
            .map(|c| {
                let expected = naive.get(c.class.as_str()).copied().unwrap_or(0) as f64 / total;
                (c.request_fraction - expected).abs()
            })
            .sum();
        assert!(l1 < 0.01, "L1 distance {l1} between recovered and trace mix");
    }

    #[test]
    fn size_distribution_megabytes() {
        let r = record("0.1", "MISS", 8, "/a.ts", 437664);
        let dist = size_distribution([(&r, ServiceClass::LiveStreaming)]);
        let s = &dist.by_service[&ServiceClass::LiveStreaming];
        assert!((s.median - 0.437664).abs() < 1e-12);
        assert_eq!(s.q1, s.q3);
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let a = HitCounts {
            n_miss: 1,
            n_hit: 2,
            n_hit1: 3,
            n_local: 4,
        };
        assert_eq!(a + HitCounts::default(), a);
        let b = HitCounts {
            n_miss: 5,
            n_hit: 6,
            n_hit1: 7,
            n_local: 8,
        };
        assert_eq!(a + b, b + a);
    }

    #[test]
    fn sharded_equals_single_pass() {
        let records: Vec<LogRecord> = (0..1000)
            .map(|i| {
                record(
                    &format!("0.{:03}", i % 997),
                    ["HIT", "MISS", "HIT1", "-"][i % 4],
                    (i % 24) as u32,
                    &format!("/c{}.ts", i % 37),
                    (i * 13 % 5000) as u64,
                )
            })
            .collect();

        let single = latency_summary(records.iter().map(RecordCtx::bare), GroupBy::Hour);
        let mut left = LatencyCollector::default();
        let mut right = LatencyCollector::default();
        for (i, r) in records.iter().enumerate() {
            let ctx = RecordCtx::bare(r);
            if i < 321 {
                left.add(&ctx, GroupBy::Hour);
            } else {
                right.add(&ctx, GroupBy::Hour);
            }
        }
        left.merge(right);
        assert_eq!(left.finish(), single);

        let single_ts = time_series(records.iter());
        let mut ts_a = TimeSeriesCollector::default();
        let mut ts_b = TimeSeriesCollector::default();
        for (i, r) in records.iter().enumerate() {
            if i % 2 == 0 {
                ts_a.add(r);
            } else {
                ts_b.add(r);
            }
        }
        ts_b.merge(ts_a);
        assert_eq!(ts_b.finish(), single_ts);
    }
}
