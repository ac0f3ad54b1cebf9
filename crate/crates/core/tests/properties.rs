//! Property tests for the core invariants: parser round-trips, tokenizer
//! bracket behavior, cleaning conservation, classification monotonicity,
//! normalization idempotence, aggregation merge laws, and LRU equivalence
//! against a naive reference implementation.

use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use chrono::{FixedOffset, NaiveDate, TimeZone};
use proptest::prelude::*;

use cdntrace_core::classify::{
    build_miss_set, classify_packaging, classify_service, PackagingClass, PatternConfig,
};
use cdntrace_core::generate::ZipfSampler;
use cdntrace_core::geoip::{GeoEntry, GeoInfo, Normalizer, SynonymTable};
use cdntrace_core::logline::{
    clean_stream, format_record, parse_line, tokenize_line, HitStatus, LogRecord,
};
use cdntrace_core::metrics::{GroupBy, HitCounts, LatencyCollector, RecordCtx, TimeSeriesCollector};
use cdntrace_core::simulate::{CacheNode, TtlBasis};

fn status_strategy() -> impl Strategy<Value = HitStatus> {
    prop_oneof![
        Just(HitStatus::Miss),
        Just(HitStatus::Hit),
        Just(HitStatus::Hit1),
        Just(HitStatus::Local),
    ]
}

fn ip_strategy() -> impl Strategy<Value = IpAddr> {
    prop_oneof![
        any::<u32>().prop_map(|v| IpAddr::V4(Ipv4Addr::from(v))),
        any::<u128>().prop_map(|v| IpAddr::V6(Ipv6Addr::from(v))),
    ]
}

/// Paths over the wire-safe alphabet: no `", "` separator, no brackets, no
/// control characters. This is the representable subset of the line format.
fn path_strategy() -> impl Strategy<Value = String> {
    proptest::string::string_regex("/[A-Za-z0-9_./=%-]{1,60}").expect("valid regex")
}

fn timestamp_strategy() -> impl Strategy<Value = chrono::DateTime<FixedOffset>> {
    (
        2015i32..2024,
        1u32..=12,
        1u32..=28,
        0u32..24,
        0u32..60,
        0u32..60,
        -14 * 60..=14 * 60i32,
    )
        .prop_map(|(y, mo, d, h, mi, s, off_min)| {
            let offset = FixedOffset::east_opt(off_min * 60).expect("offset in range");
            offset
                .from_local_datetime(
                    &NaiveDate::from_ymd_opt(y, mo, d)
                        .expect("valid date")
                        .and_hms_opt(h, mi, s)
                        .expect("valid time"),
                )
                .single()
                .expect("fixed offsets are unambiguous")
        })
}

prop_compose! {
    fn record_strategy()(
        latency_ms in 0u64..400_000,
        client_ip in ip_strategy(),
        status in status_strategy(),
        timestamp in timestamp_strategy(),
        content_path in path_strategy(),
        size_bytes in 0u64..10_000_000_000,
    ) -> LogRecord {
        LogRecord { latency_ms, client_ip, status, timestamp, content_path, size_bytes }
    }
}

proptest! {
    #[test]
    fn round_trip_is_field_exact(record in record_strategy()) {
        let line = format_record(&record);
        let parsed = parse_line(&line).expect("canonical lines parse");
        prop_assert_eq!(&parsed, &record);
        // Same instant is not enough: the offset must survive too.
        prop_assert_eq!(parsed.timestamp.offset(), record.timestamp.offset());
        prop_assert_eq!(format_record(&parsed), line);
    }

    #[test]
    fn bracketed_comma_preserves_token_count(
        prefix in proptest::string::string_regex("[a-z0-9]{1,8}(, [a-z0-9]{1,8}){0,4}").unwrap(),
        inner_left in "[a-z0-9 ]{0,10}",
        inner_right in "[a-z0-9 ]{0,10}",
        suffix in proptest::string::string_regex("[a-z0-9]{1,8}(, [a-z0-9]{1,8}){0,4}").unwrap(),
    ) {
        let plain = format!("{prefix}, [{inner_left}{inner_right}], {suffix}");
        let with_comma = format!("{prefix}, [{inner_left}, {inner_right}], {suffix}");
        let n_plain = tokenize_line(&plain).expect("terminated").len();
        let n_comma = tokenize_line(&with_comma).expect("terminated").len();
        prop_assert_eq!(n_plain, n_comma);
    }

    #[test]
    fn clean_stream_conserves_lines(lines in proptest::collection::vec("[ -~]{0,120}", 0..200)) {
        let (records, stats) = clean_stream(lines.iter());
        prop_assert_eq!(stats.total_lines, lines.len() as u64);
        prop_assert_eq!(stats.accepted + stats.rejected, stats.total_lines);
        prop_assert_eq!(records.len() as u64, stats.accepted);
        let by_reason: u64 = stats.rejected_by_reason().values().sum();
        prop_assert_eq!(by_reason, stats.rejected);
    }

    #[test]
    fn parsing_is_pure(line in "[ -~]{0,120}") {
        prop_assert_eq!(parse_line(&line), parse_line(&line));
    }

    #[test]
    fn classification_is_deterministic_and_monotone(
        paths in proptest::collection::vec(path_strategy(), 1..30),
        miss_flags in proptest::collection::vec(any::<bool>(), 1..30),
        extra_path in path_strategy(),
    ) {
        let cfg = PatternConfig::default();
        let records: Vec<LogRecord> = paths
            .iter()
            .zip(miss_flags.iter().cycle())
            .map(|(path, miss)| {
                let status = if *miss { "MISS" } else { "HIT" };
                parse_line(&format!(
                    "0.100, 1.2.3.4, {status}, [03/Dec/2018:08:00:00 +0700], {path}, 10"
                ))
                .expect("valid line")
            })
            .collect();
        let set = build_miss_set(records.iter(), &cfg);
        // Adding a MISS for an unrelated content never flips others.
        let mut extended = records.clone();
        extended.push(parse_line(&format!(
            "0.100, 1.2.3.4, MISS, [03/Dec/2018:08:00:00 +0700], {extra_path}, 10"
        )).expect("valid line"));
        let bigger = build_miss_set(extended.iter(), &cfg);
        for path in &paths {
            prop_assert_eq!(
                classify_packaging(path, &set, &cfg) == PackagingClass::NonPackaged,
                set.contains(path)
            );
            if set.contains(path) {
                prop_assert!(bigger.contains(path));
            }
            // Determinism: same inputs, same answer.
            prop_assert_eq!(
                classify_service(path, &cfg),
                classify_service(path, &cfg)
            );
        }
    }

    #[test]
    fn normalize_is_idempotent(
        isp in "[A-Za-z0-9 ]{0,12}",
        province in "[A-Za-z0-9 ]{0,12}",
        country in "[A-Za-z0-9 ]{0,12}",
    ) {
        let mut synonyms = SynonymTable::new();
        synonyms.add("HCMC", "Ho Chi Minh").unwrap();
        synonyms.add("VN", "Vietnam").unwrap();
        let normalizer = Normalizer::new(synonyms, Normalizer::default().deny);
        let raw = GeoInfo { isp, province, country };
        match normalizer.normalize(&raw) {
            GeoEntry::Valid(once) => {
                prop_assert_eq!(normalizer.normalize(&once), GeoEntry::Valid(once.clone()));
            }
            GeoEntry::Invalid => {} // discarding is terminal
        }
    }

    #[test]
    fn hit_counts_merge_laws(
        a in any::<[u32; 4]>(),
        b in any::<[u32; 4]>(),
    ) {
        let make = |v: [u32; 4]| HitCounts {
            n_miss: v[0] as u64,
            n_hit: v[1] as u64,
            n_hit1: v[2] as u64,
            n_local: v[3] as u64,
        };
        let (a, b) = (make(a), make(b));
        prop_assert_eq!(a + b, b + a);
        prop_assert_eq!(a + HitCounts::default(), a);
    }

    #[test]
    fn aggregation_is_order_and_shard_independent(
        seed_lines in proptest::collection::vec((0u64..5000, 0usize..4, 0u32..24, 0u64..9999), 1..120),
        split in 0usize..120,
    ) {
        let records: Vec<LogRecord> = seed_lines
            .iter()
            .map(|(lat, status, hour, size)| {
                let status = ["MISS", "HIT", "HIT1", "-"][*status];
                parse_line(&format!(
                    "{}.{:03}, 1.2.3.4, {status}, [03/Dec/2018:{hour:02}:30:00 +0700], /c{size}.ts, {size}",
                    lat / 1000, lat % 1000
                ))
                .expect("valid line")
            })
            .collect();
        let split = split.min(records.len());

        // Permutation invariance.
        let forward = cdntrace_core::metrics::latency_summary(
            records.iter().map(RecordCtx::bare), GroupBy::Hour);
        let mut reversed: Vec<&LogRecord> = records.iter().collect();
        reversed.reverse();
        let backward = cdntrace_core::metrics::latency_summary(
            reversed.into_iter().map(RecordCtx::bare), GroupBy::Hour);
        prop_assert_eq!(&forward, &backward);

        // Shard/merge equality, both merge directions.
        let (left, right) = records.split_at(split);
        let mut shard_a = LatencyCollector::default();
        let mut shard_b = LatencyCollector::default();
        for r in left { shard_a.add(&RecordCtx::bare(r), GroupBy::Hour); }
        for r in right { shard_b.add(&RecordCtx::bare(r), GroupBy::Hour); }
        let mut merged_ab = shard_a.clone();
        merged_ab.merge(shard_b.clone());
        let mut merged_ba = shard_b;
        merged_ba.merge(shard_a);
        prop_assert_eq!(merged_ab.finish(), forward.clone());
        prop_assert_eq!(merged_ba.finish(), forward);

        let mut ts_whole = TimeSeriesCollector::default();
        let mut ts_a = TimeSeriesCollector::default();
        let mut ts_b = TimeSeriesCollector::default();
        for (i, r) in records.iter().enumerate() {
            ts_whole.add(r);
            if i % 3 == 0 { ts_a.add(r) } else { ts_b.add(r) }
        }
        ts_a.merge(ts_b);
        prop_assert_eq!(ts_a.finish(), ts_whole.finish());
    }

    #[test]
    fn zipf_stays_in_range_and_is_deterministic(
        n in 1usize..200,
        s in 0.0f64..3.0,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let sampler = ZipfSampler::new(n, s);
        let mut rng_a = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut rng_b = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..64 {
            let a = sampler.sample(&mut rng_a);
            prop_assert!((1..=n).contains(&a));
            prop_assert_eq!(a, sampler.sample(&mut rng_b));
        }
    }
}

/// Naive reference LRU: a vector ordered most-recent-first, linear scans,
/// explicit byte accounting. Deliberately simple enough to be obviously
/// correct.
struct NaiveLru {
    capacity: u64,
    // (key, size, insert_ms, last_access_ms), most recent first
    entries: Vec<(u64, u64, i64, i64)>,
}

impl NaiveLru {
    fn new(capacity: u64) -> NaiveLru {
        NaiveLru {
            capacity,
            entries: Vec::new(),
        }
    }

    fn used(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    fn access(&mut self, key: u64, size: u64, now: i64, ttl_s: u64, basis: TtlBasis) -> bool {
        if size > self.capacity {
            return false;
        }
        let Some(pos) = self.entries.iter().position(|e| e.0 == key) else {
            return false;
        };
        if ttl_s > 0 {
            let since = match basis {
                TtlBasis::Insert => self.entries[pos].2,
                TtlBasis::LastAccess => self.entries[pos].3,
            };
            if now - since > (ttl_s * 1000) as i64 {
                self.entries.remove(pos);
                return false;
            }
        }
        let mut entry = self.entries.remove(pos);
        entry.3 = now;
        self.entries.insert(0, entry);
        true
    }

    fn insert(&mut self, key: u64, size: u64, now: i64) -> Vec<u64> {
        if size > self.capacity {
            return Vec::new();
        }
        if let Some(pos) = self.entries.iter().position(|e| e.0 == key) {
            self.entries.remove(pos);
        }
        self.entries.insert(0, (key, size, now, now));
        let mut evicted = Vec::new();
        while self.used() > self.capacity {
            let victim = self.entries.pop().expect("over capacity implies entries");
            evicted.push(victim.0);
        }
        evicted
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cache_node_matches_naive_lru(
        capacity in 1u64..12,
        ops in proptest::collection::vec((0u64..8, 1u64..4, any::<bool>(), 0u64..70), 1..300),
        ttl_s in prop_oneof![Just(0u64), Just(60u64)],
        basis in prop_oneof![Just(TtlBasis::Insert), Just(TtlBasis::LastAccess)],
    ) {
        let mut node: CacheNode<u64> = CacheNode::new(capacity);
        let mut naive = NaiveLru::new(capacity);
        let mut now = 0i64;
        for (key, size, insert_on_miss, advance_s) in ops {
            now += (advance_s * 1000) as i64;
            let hit = node.access(&key, size, now, ttl_s, basis);
            let naive_hit = naive.access(key, size, now, ttl_s, basis);
            prop_assert_eq!(hit, naive_hit);
            if !hit && insert_on_miss {
                let evicted = node.insert(key, size, now);
                let naive_evicted = naive.insert(key, size, now);
                prop_assert_eq!(evicted, naive_evicted);
            }
            prop_assert!(node.verify_capacity());
            prop_assert_eq!(node.used_bytes(), naive.used());
            prop_assert_eq!(node.len(), naive.entries.len());
            let resident: HashSet<u64> = naive.entries.iter().map(|e| e.0).collect();
            for key in 0..8u64 {
                prop_assert_eq!(node.contains(&key), resident.contains(&key));
            }
        }
    }
}
