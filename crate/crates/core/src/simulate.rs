//! Trace-driven replay through a two-layer cache hierarchy.
//!
//! The modeled deployment is a rack of edge servers in front of regional
//! servers, each running an LRU cache with a byte capacity and per-service
//! TTLs. A request routes to its client's edge; an edge miss escalates to
//! the regional responsible for the content; a regional miss goes to the
//! origin. On the response path the content is cached at every server it
//! traversed. Dynamically packaged content is pre-stored at regional
//! servers and never misses there.
//!
//! Client-to-edge affinity is a stable hash of the client IP (standing in
//! for "nearest edge"), and content is hash-partitioned across regionals so
//! pre-stored content has a unique home. Replay is a sequential state
//! machine: identical events and config produce identical outcomes on any
//! platform.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::io;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::ServiceClass;
use crate::logline::HitStatus;
use crate::metrics::HitCounts;

/// FNV-1a, 64-bit: offset basis 14695981039346656037, prime 1099511628211,
/// wrapping arithmetic. Used for deterministic request routing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 14695981039346656037u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(1099511628211);
    }
    hash
}

/// What age the TTL check measures.
///
/// `Insert` ages an entry from its (re-)insertion, so a popular entry still
/// expires. `LastAccess` ages from the previous access, treating the TTL as
/// a max gap between consecutive requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtlBasis {
    #[default]
    Insert,
    LastAccess,
}

/// TTL per service class, in seconds. Zero means no expiry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtlByService {
    #[serde(default)]
    pub live_streaming_s: u64,
    #[serde(default = "default_vod_ttl")]
    pub video_on_demand_s: u64,
    #[serde(default = "default_website_ttl")]
    pub website_s: u64,
}

fn default_vod_ttl() -> u64 {
    86_400
}

fn default_website_ttl() -> u64 {
    3_600
}

impl Default for TtlByService {
    fn default() -> Self {
        TtlByService {
            live_streaming_s: 0,
            video_on_demand_s: default_vod_ttl(),
            website_s: default_website_ttl(),
        }
    }
}

impl TtlByService {
    pub fn seconds_for(&self, service: ServiceClass) -> u64 {
        match service {
            ServiceClass::LiveStreaming => self.live_streaming_s,
            ServiceClass::VideoOnDemand => self.video_on_demand_s,
            ServiceClass::Website => self.website_s,
        }
    }
}

/// Service latency: `base + size / bandwidth` for the level that served the
/// request. Defaults are illustrative, not measurements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub t_local_s: f64,
    pub t_edge_s: f64,
    pub t_regional_s: f64,
    pub t_origin_s: f64,
    pub bandwidth_edge_bps: f64,
    pub bandwidth_regional_bps: f64,
    pub bandwidth_origin_bps: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            t_local_s: 0.0,
            t_edge_s: 0.002,
            t_regional_s: 0.020,
            t_origin_s: 0.120,
            bandwidth_edge_bps: 1.25e9,
            bandwidth_regional_bps: 2.5e8,
            bandwidth_origin_bps: 6.25e7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServeLevel {
    Edge,
    Regional,
    Origin,
}

impl LatencyModel {
    fn latency_seconds(&self, level: ServeLevel, size_bytes: u64) -> f64 {
        let (base, bw) = match level {
            ServeLevel::Edge => (self.t_edge_s, self.bandwidth_edge_bps),
            ServeLevel::Regional => (self.t_regional_s, self.bandwidth_regional_bps),
            ServeLevel::Origin => (self.t_origin_s, self.bandwidth_origin_bps),
        };
        base + size_bytes as f64 / bw
    }
}

const GIB: u64 = 1 << 30;

/// Hierarchy shape and cache parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub n_edges: usize,
    pub n_regionals: usize,
    pub edge_capacity_bytes: u64,
    pub regional_capacity_bytes: u64,
    pub ttl_by_service: TtlByService,
    pub ttl_basis: TtlBasis,
    pub latency: LatencyModel,
    /// Report packaged content served from the regional pre-store as `HIT`
    /// instead of `HIT1`, matching deployments that log packaged requests as
    /// edge hits.
    pub packaged_always_hit_at_edge: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_edges: 3,
            n_regionals: 2,
            edge_capacity_bytes: 32 * GIB,
            regional_capacity_bytes: 32 * GIB,
            ttl_by_service: TtlByService::default(),
            ttl_basis: TtlBasis::default(),
            latency: LatencyModel::default(),
            packaged_always_hit_at_edge: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("topology needs at least one edge and one regional server")]
    NoServers,
    #[error("cache capacities must be positive")]
    ZeroCapacity,
    #[error("latency bases must be non-decreasing local <= edge <= regional <= origin")]
    LatencyOrder,
    #[error("bandwidths must be positive")]
    BadBandwidth,
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_edges < 1 || self.n_regionals < 1 {
            return Err(ConfigError::NoServers);
        }
        if self.edge_capacity_bytes == 0 || self.regional_capacity_bytes == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        let l = &self.latency;
        if !(l.t_local_s <= l.t_edge_s
            && l.t_edge_s <= l.t_regional_s
            && l.t_regional_s <= l.t_origin_s)
        {
            return Err(ConfigError::LatencyOrder);
        }
        if l.bandwidth_edge_bps <= 0.0
            || l.bandwidth_regional_bps <= 0.0
            || l.bandwidth_origin_bps <= 0.0
        {
            return Err(ConfigError::BadBandwidth);
        }
        Ok(())
    }
}

/// Stable client-to-edge affinity: hash of the IP's text form.
pub fn route_edge(client_ip: IpAddr, cfg: &TopologyConfig) -> usize {
    (fnv1a64(client_ip.to_string().as_bytes()) % cfg.n_edges as u64) as usize
}

/// Content partitioning across regionals: hash of the content identity.
pub fn route_regional(identity: &str, cfg: &TopologyConfig) -> usize {
    (fnv1a64(identity.as_bytes()) % cfg.n_regionals as u64) as usize
}

#[derive(Debug, Clone)]
struct Entry<K> {
    size: u64,
    insert_ms: i64,
    last_access_ms: i64,
    seq: u64,
    key: K,
}

/// One server's LRU cache with a byte capacity.
///
/// Recency is a strict total order driven by a sequence counter; eviction
/// removes least-recent entries until the byte sum fits. Objects larger
/// than the whole cache bypass it: they are never admitted and always miss.
#[derive(Debug, Clone)]
pub struct CacheNode<K: Eq + Hash + Clone> {
    capacity_bytes: u64,
    used_bytes: u64,
    entries: HashMap<K, Entry<K>>,
    order: BTreeMap<u64, K>,
    next_seq: u64,
    evictions: u64,
    expirations: u64,
}

impl<K: Eq + Hash + Clone> CacheNode<K> {
    pub fn new(capacity_bytes: u64) -> CacheNode<K> {
        CacheNode {
            capacity_bytes,
            used_bytes: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
            next_seq: 0,
            evictions: 0,
            expirations: 0,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn expirations(&self) -> u64 {
        self.expirations
    }

    pub fn contains(&self, key: &K) -> bool {
        self.entries.contains_key(key)
    }

    fn touch(&mut self, key: &K, now_ms: i64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = self.entries.get_mut(key).expect("touch of resident key");
        self.order.remove(&entry.seq);
        entry.seq = seq;
        entry.last_access_ms = now_ms;
        self.order.insert(seq, key.clone());
    }

    /// Lookup with TTL check. A hit refreshes recency and last-access time
    /// but not the insertion time; an expired entry is evicted on the spot
    /// and reported as a miss. A miss never inserts — insertion happens
    /// separately on the response path.
    ///
    /// `ttl_s == 0` disables expiry.
    pub fn access(&mut self, key: &K, size: u64, now_ms: i64, ttl_s: u64, basis: TtlBasis) -> bool {
        if size > self.capacity_bytes {
            return false;
        }
        let Some(entry) = self.entries.get(key) else {
            return false;
        };
        if ttl_s > 0 {
            let since_ms = match basis {
                TtlBasis::Insert => entry.insert_ms,
                TtlBasis::LastAccess => entry.last_access_ms,
            };
            if now_ms - since_ms > (ttl_s * 1000) as i64 {
                let entry = self.entries.remove(key).expect("expired entry present");
                self.order.remove(&entry.seq);
                self.used_bytes -= entry.size;
                self.expirations += 1;
                return false;
            }
        }
        self.touch(key, now_ms);
        true
    }

    /// Inserts or refreshes an entry as most recent, with a fresh insertion
    /// time, evicting least-recently-used entries until the capacity
    /// invariant holds. Returns the evicted keys in eviction order. Objects
    /// larger than the capacity are not admitted.
    pub fn insert(&mut self, key: K, size: u64, now_ms: i64) -> Vec<K> {
        if size > self.capacity_bytes {
            return Vec::new();
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(old) = self.entries.remove(&key) {
            self.order.remove(&old.seq);
            self.used_bytes -= old.size;
        }
        self.used_bytes += size;
        self.entries.insert(
            key.clone(),
            Entry {
                size,
                insert_ms: now_ms,
                last_access_ms: now_ms,
                seq,
                key: key.clone(),
            },
        );
        self.order.insert(seq, key);

        let mut evicted = Vec::new();
        while self.used_bytes > self.capacity_bytes {
            let (&oldest_seq, _) = self.order.iter().next().expect("over capacity implies entries");
            let victim_key = self.order.remove(&oldest_seq).expect("seq present");
            let victim = self.entries.remove(&victim_key).expect("entry present");
            self.used_bytes -= victim.size;
            self.evictions += 1;
            evicted.push(victim.key);
        }
        evicted
    }

    /// Recomputes the byte sum from scratch and checks it against the
    /// running total and the capacity. Used by replay's verification mode.
    pub fn verify_capacity(&self) -> bool {
        let total: u64 = self.entries.values().map(|e| e.size).sum();
        total == self.used_bytes && total <= self.capacity_bytes
    }
}

/// One request to replay. Events are processed in non-decreasing `time_ms`
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestEvent {
    pub time_ms: i64,
    pub client_ip: IpAddr,
    pub path: String,
    pub size_bytes: u64,
    pub service: ServiceClass,
    pub packaged: bool,
}

/// Simulated outcome for one event. `regional` is set only when the request
/// escalated past the edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOutcome {
    pub status: HitStatus,
    pub latency_seconds: f64,
    pub edge: usize,
    pub regional: Option<usize>,
}

/// Per-server counters. For regionals, `requests` counts only escalations
/// that reached the node; packaged pre-store hits count as hits here even
/// when the reported status says `HIT`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct NodeStats {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub expirations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplaySummary {
    pub events: u64,
    pub hit_counts: HitCounts,
    pub bytes_total: u64,
    pub bytes_cache_served: u64,
    pub byte_hit_ratio: Option<f64>,
    pub edges: Vec<NodeStats>,
    pub regionals: Vec<NodeStats>,
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub outcomes: Vec<SimOutcome>,
    pub summary: ReplaySummary,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("event {index} is out of order: {time_ms} after {prev_ms}")]
    OutOfOrder { index: usize, time_ms: i64, prev_ms: i64 },
    #[error("capacity invariant violated at event {index} on {node}")]
    InvariantViolation { index: usize, node: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Re-verify every node's capacity invariant after every event.
    /// Quadratic in resident entries; meant for tests and debugging runs.
    pub verify_invariants: bool,
}

/// Replays a time-ordered event sequence through the hierarchy from cold
/// caches and returns per-event outcomes plus per-node totals.
pub fn replay(events: &[RequestEvent], cfg: &TopologyConfig) -> Result<ReplayOutput, ReplayError> {
    replay_with_options(events, cfg, ReplayOptions::default())
}

pub fn replay_with_options(
    events: &[RequestEvent],
    cfg: &TopologyConfig,
    opts: ReplayOptions,
) -> Result<ReplayOutput, ReplayError> {
    cfg.validate()?;

    let mut edges: Vec<CacheNode<u64>> = (0..cfg.n_edges)
        .map(|_| CacheNode::new(cfg.edge_capacity_bytes))
        .collect();
    let mut regionals: Vec<CacheNode<u64>> = (0..cfg.n_regionals)
        .map(|_| CacheNode::new(cfg.regional_capacity_bytes))
        .collect();
    let mut edge_stats = vec![NodeStats::default(); cfg.n_edges];
    let mut regional_stats = vec![NodeStats::default(); cfg.n_regionals];

    // Content identities interned to dense ids; routing still hashes the
    // full identity text.
    let mut ids: HashMap<String, u64> = HashMap::new();
    let mut edge_of_ip: HashMap<IpAddr, usize> = HashMap::new();

    let mut outcomes = Vec::with_capacity(events.len());
    let mut hit_counts = HitCounts::default();
    let mut bytes_total = 0u64;
    let mut bytes_cache_served = 0u64;
    let mut prev_ms = i64::MIN;

    for (index, event) in events.iter().enumerate() {
        if event.time_ms < prev_ms {
            return Err(ReplayError::OutOfOrder {
                index,
                time_ms: event.time_ms,
                prev_ms,
            });
        }
        prev_ms = event.time_ms;

        let key = match ids.get(&event.path) {
            Some(&id) => id,
            None => {
                let id = ids.len() as u64;
                ids.insert(event.path.clone(), id);
                id
            }
        };
        let edge_idx = *edge_of_ip
            .entry(event.client_ip)
            .or_insert_with(|| route_edge(event.client_ip, cfg));
        let ttl_s = cfg.ttl_by_service.seconds_for(event.service);
        let now = event.time_ms;

        edge_stats[edge_idx].requests += 1;
        let outcome = if edges[edge_idx].access(&key, event.size_bytes, now, ttl_s, cfg.ttl_basis) {
            edge_stats[edge_idx].hits += 1;
            SimOutcome {
                status: HitStatus::Hit,
                latency_seconds: cfg.latency.latency_seconds(ServeLevel::Edge, event.size_bytes),
                edge: edge_idx,
                regional: None,
            }
        } else {
            edge_stats[edge_idx].misses += 1;
            let reg_idx = route_regional(&event.path, cfg);
            regional_stats[reg_idx].requests += 1;
            let (status, level) = if event.packaged {
                // Pre-stored at its home regional: served without touching
                // the regional's LRU state.
                regional_stats[reg_idx].hits += 1;
                let status = if cfg.packaged_always_hit_at_edge {
                    HitStatus::Hit
                } else {
                    HitStatus::Hit1
                };
                (status, ServeLevel::Regional)
            } else if regionals[reg_idx].access(&key, event.size_bytes, now, ttl_s, cfg.ttl_basis)
            {
                regional_stats[reg_idx].hits += 1;
                (HitStatus::Hit1, ServeLevel::Regional)
            } else {
                regional_stats[reg_idx].misses += 1;
                // Fetched from origin; cached at the regional on the way
                // back.
                regionals[reg_idx].insert(key, event.size_bytes, now);
                (HitStatus::Miss, ServeLevel::Origin)
            };
            // The edge is always on the response path.
            edges[edge_idx].insert(key, event.size_bytes, now);
            SimOutcome {
                status,
                latency_seconds: cfg.latency.latency_seconds(level, event.size_bytes),
                edge: edge_idx,
                regional: Some(reg_idx),
            }
        };

        hit_counts.count(outcome.status);
        bytes_total += event.size_bytes;
        if outcome.status != HitStatus::Miss {
            bytes_cache_served += event.size_bytes;
        }
        outcomes.push(outcome);

        if opts.verify_invariants {
            for (i, node) in edges.iter().enumerate() {
                if !node.verify_capacity() {
                    return Err(ReplayError::InvariantViolation {
                        index,
                        node: format!("edge {i}"),
                    });
                }
            }
            for (i, node) in regionals.iter().enumerate() {
                if !node.verify_capacity() {
                    return Err(ReplayError::InvariantViolation {
                        index,
                        node: format!("regional {i}"),
                    });
                }
            }
        }
    }

    for (i, node) in edges.iter().enumerate() {
        edge_stats[i].evictions = node.evictions();
        edge_stats[i].expirations = node.expirations();
    }
    for (i, node) in regionals.iter().enumerate() {
        regional_stats[i].evictions = node.evictions();
        regional_stats[i].expirations = node.expirations();
    }

    let summary = ReplaySummary {
        events: events.len() as u64,
        hit_counts,
        bytes_total,
        bytes_cache_served,
        byte_hit_ratio: if bytes_total > 0 {
            Some(bytes_cache_served as f64 / bytes_total as f64)
        } else {
            None
        },
        edges: edge_stats,
        regionals: regional_stats,
    };

    Ok(ReplayOutput { outcomes, summary })
}

/// Confusion matrix between simulated and logged statuses over
/// `{MISS, HIT, HIT1}`. Pairs where either side is `-` are excluded from
/// the agreement fraction and counted separately.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    /// `matrix[logged][sim]`, indexed MISS=0, HIT=1, HIT1=2.
    pub matrix: [[u64; 3]; 3],
    pub compared: u64,
    pub matches: u64,
    pub skipped_local: u64,
    pub agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("sequence length mismatch: {sim} simulated vs {logged} logged")]
pub struct CompareError {
    pub sim: usize,
    pub logged: usize,
}

fn status_index(status: HitStatus) -> Option<usize> {
    match status {
        HitStatus::Miss => Some(0),
        HitStatus::Hit => Some(1),
        HitStatus::Hit1 => Some(2),
        HitStatus::Local => None,
    }
}

pub fn compare(sim: &[HitStatus], logged: &[HitStatus]) -> Result<AgreementReport, CompareError> {
    if sim.len() != logged.len() {
        return Err(CompareError {
            sim: sim.len(),
            logged: logged.len(),
        });
    }
    let mut matrix = [[0u64; 3]; 3];
    let mut skipped_local = 0u64;
    let mut matches = 0u64;
    let mut compared = 0u64;
    for (&s, &l) in sim.iter().zip(logged) {
        match (status_index(l), status_index(s)) {
            (Some(li), Some(si)) => {
                matrix[li][si] += 1;
                compared += 1;
                if li == si {
                    matches += 1;
                }
            }
            _ => skipped_local += 1,
        }
    }
    let agreement = if compared > 0 {
        matches as f64 / compared as f64
    } else {
        1.0
    };
    Ok(AgreementReport {
        matrix,
        compared,
        matches,
        skipped_local,
        agreement,
    })
}

/// Event-file column order: `time_unix_ms,ip,path,size,service,packaged`.
/// `packaged` is `1` or `0`.
pub fn write_events_csv<W: io::Write>(writer: W, events: &[RequestEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_unix_ms", "ip", "path", "size", "service", "packaged"])?;
    for e in events {
        w.write_record([
            e.time_ms.to_string().as_str(),
            &e.client_ip.to_string(),
            &e.path,
            &e.size_bytes.to_string(),
            e.service.as_str(),
            if e.packaged { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum EventReadError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn read_events_csv<R: io::Read>(reader: R) -> Result<Vec<RequestEvent>, EventReadError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut events = Vec::new();
    for result in r.records() {
        let record = result?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| -> Result<&str, EventReadError> {
            record.get(i).ok_or_else(|| EventReadError::Field {
                line,
                message: format!("missing column {name}"),
            })
        };
        let bad = |name: &str, value: &str| EventReadError::Field {
            line,
            message: format!("invalid {name}: {value}"),
        };
        let time_ms: i64 = field(0, "time_unix_ms")?
            .parse()
            .map_err(|_| bad("time_unix_ms", &record[0]))?;
        let client_ip: IpAddr = field(1, "ip")?.parse().map_err(|_| bad("ip", &record[1]))?;
        let path = field(2, "path")?.to_owned();
        let size_bytes: u64 = field(3, "size")?
            .parse()
            .map_err(|_| bad("size", &record[3]))?;
        let service: ServiceClass = field(4, "service")?
            .parse()
            .map_err(|_| bad("service", &record[4]))?;
        let packaged = match field(5, "packaged")? {
            "1" => true,
            "0" => false,
            other => return Err(bad("packaged", other)),
        };
        events.push(RequestEvent {
            time_ms,
            client_ip,
            path,
            size_bytes,
            service,
            packaged,
        });
    }
    Ok(events)
}

pub fn read_events_path(path: &Path) -> Result<Vec<RequestEvent>, EventReadError> {
    let file = std::fs::File::open(path)?;
    read_events_csv(io::BufReader::new(file))
}
