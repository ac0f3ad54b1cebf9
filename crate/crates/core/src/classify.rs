//! Service and packaging classification.
//!
//! Service class is decided from the content path alone: live-streaming
//! names contain a configured pattern (`live`, `tv`, channel names), VoD is
//! everything else with a streaming chunk/manifest extension, and the rest
//! is website traffic.
//!
//! Packaging class needs the whole analysis window: dynamically packaged
//! content is pre-stored at regional servers and therefore never logs a
//! `MISS`, while every normally cached content misses at least once. Pass
//! one collects the set of content identities seen with a `MISS`
//! ([`build_miss_set`]); pass two labels each record against it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::logline::{HitStatus, LogRecord};
use crate::simulate::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceClass {
    LiveStreaming,
    VideoOnDemand,
    Website,
}

impl ServiceClass {
    pub const ALL: [ServiceClass; 3] = [
        ServiceClass::LiveStreaming,
        ServiceClass::VideoOnDemand,
        ServiceClass::Website,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ServiceClass::LiveStreaming => "live_streaming",
            ServiceClass::VideoOnDemand => "video_on_demand",
            ServiceClass::Website => "website",
        }
    }
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live_streaming" => Ok(ServiceClass::LiveStreaming),
            "video_on_demand" => Ok(ServiceClass::VideoOnDemand),
            "website" => Ok(ServiceClass::Website),
            other => Err(format!("unknown service class: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackagingClass {
    Packaged,
    NonPackaged,
}

impl PackagingClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PackagingClass::Packaged => "packaged",
            PackagingClass::NonPackaged => "non_packaged",
        }
    }
}

impl fmt::Display for PackagingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PackagingClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "packaged" => Ok(PackagingClass::Packaged),
            "non_packaged" => Ok(PackagingClass::NonPackaged),
            other => Err(format!("unknown packaging class: {other}")),
        }
    }
}

/// A record with both labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedRecord {
    pub record: LogRecord,
    pub service: ServiceClass,
    pub packaging: PackagingClass,
}

fn default_live_patterns() -> Vec<String> {
    vec!["live".to_owned(), "tv".to_owned()]
}

fn default_streaming_extensions() -> Vec<String> {
    vec![
        ".ts".to_owned(),
        ".m3u8".to_owned(),
        ".mpd".to_owned(),
        ".dash".to_owned(),
    ]
}

fn default_hash_threshold() -> usize {
    4_000_000
}

/// Name-pattern configuration. Matching is case-insensitive substring
/// matching on the whole path ("dongthap1tv" must match "tv"), so keep
/// patterns specific. Channel names extend `live_patterns` via the config
/// file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternConfig {
    #[serde(default = "default_live_patterns")]
    pub live_patterns: Vec<String>,
    #[serde(default = "default_streaming_extensions")]
    pub streaming_extensions: Vec<String>,
    /// When set, content identity drops a leading path segment of 32+ hex
    /// characters (session tokens) before miss-set lookups. Off by default:
    /// identities are the exact path string.
    #[serde(default)]
    pub strip_hex_token_prefix: bool,
    /// Miss sets larger than this switch from exact strings to 64-bit
    /// hashes. See [`ContentMissSet`] for the collision trade-off.
    #[serde(default = "default_hash_threshold")]
    pub hash_threshold: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            live_patterns: default_live_patterns(),
            streaming_extensions: default_streaming_extensions(),
            strip_hex_token_prefix: false,
            hash_threshold: default_hash_threshold(),
        }
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.live_patterns.is_empty() {
            return Err("live_patterns must not be empty".into());
        }
        if self.streaming_extensions.is_empty() {
            return Err("streaming_extensions must not be empty".into());
        }
        Ok(())
    }

    /// Content identity for miss-set membership: the exact path, or the path
    /// with a leading hex-token segment removed when the hook is enabled.
    pub fn identity_of<'a>(&self, path: &'a str) -> &'a str {
        if !self.strip_hex_token_prefix {
            return path;
        }
        let rest = match path.strip_prefix('/') {
            Some(r) => r,
            None => return path,
        };
        let seg_end = rest.find('/').unwrap_or(rest.len());
        let seg = &rest[..seg_end];
        if seg.len() >= 32 && seg.bytes().all(|b| b.is_ascii_hexdigit()) {
            &rest[seg_end..]
        } else {
            path
        }
    }
}

fn contains_ignore_ascii_case(haystack: &str, needle: &str) -> bool {
    let (h, n) = (haystack.as_bytes(), needle.as_bytes());
    if n.is_empty() || n.len() > h.len() {
        return n.is_empty();
    }
    h.windows(n.len()).any(|w| w.eq_ignore_ascii_case(n))
}

/// Extension of the last path segment: the suffix after its last `.`,
/// lowercased. `None` when the last segment has no dot.
pub fn path_extension(path: &str) -> Option<String> {
    let last_segment = path.rsplit('/').next().unwrap_or(path);
    let dot = last_segment.rfind('.')?;
    Some(last_segment[dot + 1..].to_ascii_lowercase())
}

/// Assigns the service class from the content path.
pub fn classify_service(content_path: &str, cfg: &PatternConfig) -> ServiceClass {
    for pattern in &cfg.live_patterns {
        if contains_ignore_ascii_case(content_path, pattern) {
            return ServiceClass::LiveStreaming;
        }
    }
    if let Some(ext) = path_extension(content_path) {
        let dotted = format!(".{ext}");
        if cfg
            .streaming_extensions
            .iter()
            .any(|e| e.eq_ignore_ascii_case(&dotted))
        {
            return ServiceClass::VideoOnDemand;
        }
    }
    ServiceClass::Website
}

/// The set of content identities that logged at least one `MISS` in the
/// analysis window.
///
/// Small sets hold exact strings. Past `hash_threshold` entries the set
/// stores FNV-1a 64-bit hashes instead, trading memory for a collision
/// probability of about `n^2 / 2^65` (under one in a million at 100 M
/// distinct contents); a collision can only mislabel a packaged content as
/// non-packaged. Tests use the exact mode.
#[derive(Debug, Clone)]
pub enum ContentMissSet {
    Exact(HashSet<String>),
    Hashed(HashSet<u64>),
}

impl ContentMissSet {
    pub fn new() -> ContentMissSet {
        ContentMissSet::Exact(HashSet::new())
    }

    pub fn len(&self) -> usize {
        match self {
            ContentMissSet::Exact(s) => s.len(),
            ContentMissSet::Hashed(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, identity: &str, threshold: usize) {
        match self {
            ContentMissSet::Exact(set) => {
                set.insert(identity.to_owned());
                if set.len() > threshold {
                    let hashed = set.iter().map(|s| fnv1a64(s.as_bytes())).collect();
                    *self = ContentMissSet::Hashed(hashed);
                }
            }
            ContentMissSet::Hashed(set) => {
                set.insert(fnv1a64(identity.as_bytes()));
            }
        }
    }

    pub fn contains(&self, identity: &str) -> bool {
        match self {
            ContentMissSet::Exact(set) => set.contains(identity),
            ContentMissSet::Hashed(set) => set.contains(&fnv1a64(identity.as_bytes())),
        }
    }

    /// Union with another shard's set. Mixed modes hash the exact side.
    pub fn merge(&mut self, other: ContentMissSet) {
        match (&mut *self, other) {
            (ContentMissSet::Exact(a), ContentMissSet::Exact(b)) => a.extend(b),
            (ContentMissSet::Hashed(a), ContentMissSet::Hashed(b)) => a.extend(b),
            (ContentMissSet::Exact(a), ContentMissSet::Hashed(mut b)) => {
                b.extend(a.iter().map(|s| fnv1a64(s.as_bytes())));
                *self = ContentMissSet::Hashed(b);
            }
            (ContentMissSet::Hashed(a), ContentMissSet::Exact(b)) => {
                a.extend(b.iter().map(|s| fnv1a64(s.as_bytes())));
            }
        }
    }
}

impl Default for ContentMissSet {
    fn default() -> Self {
        ContentMissSet::new()
    }
}

/// Pass one: collect identities with at least one `MISS`. `HIT`, `HIT1`,
/// and `-` records never insert.
pub fn build_miss_set<'a, I>(records: I, cfg: &PatternConfig) -> ContentMissSet
where
    I: IntoIterator<Item = &'a LogRecord>,
{
    let mut set = ContentMissSet::new();
    for record in records {
        if record.status == HitStatus::Miss {
            set.insert(cfg.identity_of(&record.content_path), cfg.hash_threshold);
        }
    }
    set
}

/// Pass two: a content is `NonPackaged` iff its identity missed at least
/// once in the window, else `Packaged`.
pub fn classify_packaging(
    content_path: &str,
    miss_set: &ContentMissSet,
    cfg: &PatternConfig,
) -> PackagingClass {
    if miss_set.contains(cfg.identity_of(content_path)) {
        PackagingClass::NonPackaged
    } else {
        PackagingClass::Packaged
    }
}

pub type ClassCounts = BTreeMap<(ServiceClass, PackagingClass), u64>;

/// Labels every record and tallies counts per (service, packaging) pair.
pub fn classify_stream(
    records: Vec<LogRecord>,
    cfg: &PatternConfig,
) -> (Vec<ClassifiedRecord>, ClassCounts) {
    let miss_set = build_miss_set(records.iter(), cfg);
    let mut counts = ClassCounts::new();
    let classified = records
        .into_iter()
        .map(|record| {
            let service = classify_service(&record.content_path, cfg);
            let packaging = classify_packaging(&record.content_path, &miss_set, cfg);
            *counts.entry((service, packaging)).or_insert(0) += 1;
            ClassifiedRecord {
                record,
                service,
                packaging,
            }
        })
        .collect();
    (classified, counts)
}
