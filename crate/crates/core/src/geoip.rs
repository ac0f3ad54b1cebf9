//! IP-to-ISP/location enrichment.
//!
//! Resolution goes through a pluggable [`Resolver`]; the default is an
//! offline longest-prefix CIDR table so nothing in the pipeline needs
//! network access, and an HTTP JSON client is available for live lookups
//! against ip-api-style services. Raw answers pass through
//! [`Normalizer::normalize`], which folds synonymous location names into
//! canonical ones and discards answers with missing or known-bad values.
//!
//! Outcomes — including the discards — are cached per IP in a [`GeoCache`]
//! that persists to a CSV file, so a re-run never re-queries an IP it has
//! already seen.

use std::collections::{HashMap, HashSet};
use std::io::{self, Read, Write};
use std::net::{IpAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// ISP and location for one IP, after normalization: all fields non-empty,
/// province in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeoInfo {
    pub isp: String,
    pub province: String,
    pub country: String,
}

/// A cached resolution outcome. `Invalid` marks an IP whose answer was
/// unusable; it is remembered so the rate budget is never spent on it
/// again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeoEntry {
    Valid(GeoInfo),
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolverErrorKind {
    NotFound,
    Network,
    Timeout,
    Status(u16),
    Malformed,
}

/// Failure talking to a resolver. `retryable` distinguishes transient
/// trouble (network, timeouts, server errors) from answers that will not
/// change on retry.
#[derive(Debug, Clone, thiserror::Error)]
#[error("resolver error ({kind:?}): {message}")]
pub struct ResolverError {
    pub kind: ResolverErrorKind,
    pub retryable: bool,
    pub message: String,
}

impl ResolverError {
    pub fn not_found(ip: IpAddr) -> ResolverError {
        ResolverError {
            kind: ResolverErrorKind::NotFound,
            retryable: false,
            message: format!("no entry covers {ip}"),
        }
    }
}

/// Source of raw (un-normalized) geo answers.
pub trait Resolver {
    fn resolve(&self, ip: IpAddr) -> Result<GeoInfo, ResolverError>;
}

/// A CIDR prefix, v4 or v6, stored as the top bits of a u128.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cidr {
    bits: u128,
    prefix_len: u8,
    is_v6: bool,
}

impl Cidr {
    fn matches(&self, ip: IpAddr) -> bool {
        let (bits, width) = match ip {
            IpAddr::V4(v4) => {
                if self.is_v6 {
                    return false;
                }
                (u32::from(v4) as u128, 32u8)
            }
            IpAddr::V6(v6) => {
                if !self.is_v6 {
                    return false;
                }
                (u128::from(v6), 128u8)
            }
        };
        if self.prefix_len == 0 {
            return true;
        }
        let shift = (width - self.prefix_len) as u32;
        (bits >> shift) == (self.bits >> shift)
    }
}

impl FromStr for Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr_txt, len_txt) = s
            .split_once('/')
            .ok_or_else(|| format!("not a CIDR: {s}"))?;
        let addr: IpAddr = addr_txt
            .parse()
            .map_err(|_| format!("bad address in CIDR: {s}"))?;
        let prefix_len: u8 = len_txt.parse().map_err(|_| format!("bad prefix: {s}"))?;
        let (bits, width, is_v6) = match addr {
            IpAddr::V4(v4) => (u32::from(v4) as u128, 32, false),
            IpAddr::V6(v6) => (u128::from(v6), 128, true),
        };
        if prefix_len > width {
            return Err(format!("prefix too long: {s}"));
        }
        Ok(Cidr {
            bits,
            prefix_len,
            is_v6,
        })
    }
}

/// Offline resolver: longest-prefix match over CIDR rows loaded from CSV
/// (`cidr,isp,province,country`).
#[derive(Debug, Clone, Default)]
pub struct CidrTableResolver {
    rows: Vec<(Cidr, GeoInfo)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CidrTableResolver {
    pub fn new() -> CidrTableResolver {
        CidrTableResolver::default()
    }

    pub fn push(&mut self, cidr: &str, info: GeoInfo) -> Result<(), String> {
        self.rows.push((cidr.parse()?, info));
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<CidrTableResolver, TableError> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut table = CidrTableResolver::new();
        for result in csv_reader.records() {
            let record = result?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 4 {
                return Err(TableError::Row {
                    line,
                    message: format!("expected 4 columns, found {}", record.len()),
                });
            }
            table
                .push(
                    &record[0],
                    GeoInfo {
                        isp: record[1].to_owned(),
                        province: record[2].to_owned(),
                        country: record[3].to_owned(),
                    },
                )
                .map_err(|message| TableError::Row { line, message })?;
        }
        Ok(table)
    }

    pub fn from_csv_path(path: &Path) -> Result<CidrTableResolver, TableError> {
        Self::from_csv(io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Resolver for CidrTableResolver {
    fn resolve(&self, ip: IpAddr) -> Result<GeoInfo, ResolverError> {
        self.rows
            .iter()
            .filter(|(cidr, _)| cidr.matches(ip))
            .max_by_key(|(cidr, _)| cidr.prefix_len)
            .map(|(_, info)| info.clone())
            .ok_or_else(|| ResolverError::not_found(ip))
    }
}

fn default_isp_field() -> String {
    "isp".to_owned()
}

fn default_province_field() -> String {
    "regionName".to_owned()
}

fn default_country_field() -> String {
    "country".to_owned()
}

fn default_rate() -> u32 {
    45
}

fn default_timeout_ms() -> u64 {
    5_000
}

/// HTTP resolver settings. `base_url` is plain HTTP
/// (`http://host[:port]/json`); the IP is appended as a path segment and
/// fields are extracted from the JSON body by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpResolverConfig {
    pub base_url: String,
    #[serde(default = "default_isp_field")]
    pub isp_field: String,
    #[serde(default = "default_province_field")]
    pub province_field: String,
    #[serde(default = "default_country_field")]
    pub country_field: String,
    /// Requests per minute; lookups block to respect it.
    #[serde(default = "default_rate")]
    pub rate_per_minute: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

/// Minimal HTTP/1.1 JSON client for ip-api-style endpoints. Plain HTTP
/// only — these services are typically rate-limited HTTP APIs — with a
/// connect/read timeout and a blocking rate limiter.
pub struct HttpResolver {
    config: HttpResolverConfig,
    host: String,
    port: u16,
    base_path: String,
    last_request: Mutex<Option<Instant>>,
}

impl HttpResolver {
    pub fn new(config: HttpResolverConfig) -> Result<HttpResolver, String> {
        let rest = config
            .base_url
            .strip_prefix("http://")
            .ok_or_else(|| format!("base_url must start with http:// : {}", config.base_url))?;
        let (authority, path) = match rest.find('/') {
            Some(idx) => (&rest[..idx], &rest[idx..]),
            None => (rest, "/"),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (
                h.to_owned(),
                p.parse::<u16>().map_err(|_| format!("bad port: {p}"))?,
            ),
            None => (authority.to_owned(), 80),
        };
        Ok(HttpResolver {
            host,
            port,
            base_path: path.trim_end_matches('/').to_owned(),
            last_request: Mutex::new(None),
            config,
        })
    }

    fn pace(&self) {
        if self.config.rate_per_minute == 0 {
            return;
        }
        let min_gap = Duration::from_secs_f64(60.0 / self.config.rate_per_minute as f64);
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min_gap {
                std::thread::sleep(min_gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn fetch(&self, ip: IpAddr) -> Result<String, ResolverError> {
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let net_err = |message: String| ResolverError {
            kind: ResolverErrorKind::Network,
            retryable: true,
            message,
        };
        let addrs = format!("{}:{}", self.host, self.port);
        let addr = std::net::ToSocketAddrs::to_socket_addrs(&addrs)
            .map_err(|e| net_err(format!("resolve {addrs}: {e}")))?
            .next()
            .ok_or_else(|| net_err(format!("no address for {addrs}")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)
            .map_err(|e| net_err(format!("connect {addrs}: {e}")))?;
        stream.set_read_timeout(Some(timeout)).ok();
        stream.set_write_timeout(Some(timeout)).ok();
        let mut stream = stream;
        let request = format!(
            "GET {}/{} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\nAccept: application/json\r\n\r\n",
            self.base_path, ip, self.host
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| net_err(format!("send: {e}")))?;
        let mut response = Vec::new();
        stream.read_to_end(&mut response).map_err(|e| {
            if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut {
                ResolverError {
                    kind: ResolverErrorKind::Timeout,
                    retryable: true,
                    message: "read timed out".to_owned(),
                }
            } else {
                net_err(format!("read: {e}"))
            }
        })?;
        parse_http_response(&response)
    }
}

fn parse_http_response(raw: &[u8]) -> Result<String, ResolverError> {
    let malformed = |message: &str| ResolverError {
        kind: ResolverErrorKind::Malformed,
        retryable: false,
        message: message.to_owned(),
    };
    let header_end = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| malformed("no header terminator"))?;
    let head =
        std::str::from_utf8(&raw[..header_end]).map_err(|_| malformed("non-UTF-8 headers"))?;
    let status_line = head.lines().next().ok_or_else(|| malformed("empty response"))?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|code| code.parse().ok())
        .ok_or_else(|| malformed("bad status line"))?;
    if !(200..300).contains(&status) {
        return Err(ResolverError {
            kind: ResolverErrorKind::Status(status),
            retryable: status >= 500 || status == 429,
            message: format!("HTTP {status}"),
        });
    }
    let body = &raw[header_end + 4..];
    let chunked = head
        .lines()
        .any(|l| l.eq_ignore_ascii_case("transfer-encoding: chunked"));
    let body = if chunked {
        dechunk(body).ok_or_else(|| malformed("bad chunked body"))?
    } else {
        body.to_vec()
    };
    String::from_utf8(body).map_err(|_| malformed("non-UTF-8 body"))
}

fn dechunk(mut body: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        let line_end = body.windows(2).position(|w| w == b"\r\n")?;
        let size = usize::from_str_radix(std::str::from_utf8(&body[..line_end]).ok()?.trim(), 16)
            .ok()?;
        body = &body[line_end + 2..];
        if size == 0 {
            return Some(out);
        }
        if body.len() < size + 2 {
            return None;
        }
        out.extend_from_slice(&body[..size]);
        body = &body[size + 2..];
    }
}

/// Pulls the configured fields out of a provider's JSON answer. Split out
/// from the network path so it is testable on fixture bodies.
pub fn extract_geo_fields(
    body: &str,
    config: &HttpResolverConfig,
) -> Result<GeoInfo, ResolverError> {
    let malformed = |message: String| ResolverError {
        kind: ResolverErrorKind::Malformed,
        retryable: false,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| malformed(format!("bad JSON: {e}")))?;
    let get = |field: &str| {
        value
            .get(field)
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_owned()
    };
    Ok(GeoInfo {
        isp: get(&config.isp_field),
        province: get(&config.province_field),
        country: get(&config.country_field),
    })
}

impl Resolver for HttpResolver {
    fn resolve(&self, ip: IpAddr) -> Result<GeoInfo, ResolverError> {
        self.pace();
        let body = self.fetch(ip)?;
        extract_geo_fields(&body, &self.config)
    }
}

/// Variant-to-canonical location names. Canonical names are fixed points:
/// mapping a canonical name returns itself, which is what makes
/// normalization idempotent.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    map: HashMap<String, String>,
}

impl SynonymTable {
    pub fn new() -> SynonymTable {
        SynonymTable::default()
    }

    /// Adds `variant -> canonical`. Rejected when it would break the
    /// fixed-point property (the canonical name itself maps elsewhere, or
    /// the variant is already someone's canonical form).
    pub fn add(&mut self, variant: &str, canonical: &str) -> Result<(), String> {
        if let Some(existing) = self.map.get(canonical) {
            if existing != canonical {
                return Err(format!(
                    "canonical name {canonical:?} is itself mapped to {existing:?}"
                ));
            }
        }
        if variant != canonical && self.map.values().any(|c| c == variant) {
            return Err(format!(
                "{variant:?} is already a canonical name and cannot become a variant"
            ));
        }
        self.map.insert(variant.to_owned(), canonical.to_owned());
        Ok(())
    }

    pub fn apply<'a>(&'a self, name: &'a str) -> &'a str {
        self.map.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Loads `variant,canonical` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<SynonymTable, TableError> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut table = SynonymTable::new();
        for result in csv_reader.records() {
            let record = result?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 2 {
                return Err(TableError::Row {
                    line,
                    message: format!("expected 2 columns, found {}", record.len()),
                });
            }
            table
                .add(&record[0], &record[1])
                .map_err(|message| TableError::Row { line, message })?;
        }
        Ok(table)
    }

    pub fn from_csv_path(path: &Path) -> Result<SynonymTable, TableError> {
        Self::from_csv(io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Synonym folding plus a deny-list of values that mark an answer as
/// unusable. Which values count as "wrong" is deployment knowledge, so the
/// list is configuration; the defaults catch the common placeholder
/// answers.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub synonyms: SynonymTable,
    pub deny: HashSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            synonyms: SynonymTable::new(),
            deny: ["-", "unknown", "Unknown", "N/A", "n/a", "none"]
                .into_iter()
                .map(str::to_owned)
                .collect(),
        }
    }
}

impl Normalizer {
    pub fn new(synonyms: SynonymTable, deny: HashSet<String>) -> Normalizer {
        Normalizer { synonyms, deny }
    }

    /// Canonicalizes province and country and validates all fields.
    /// Idempotent: normalizing an already-normalized answer changes
    /// nothing.
    pub fn normalize(&self, raw: &GeoInfo) -> GeoEntry {
        let isp = raw.isp.trim().to_owned();
        let province = self.synonyms.apply(raw.province.trim()).to_owned();
        let country = self.synonyms.apply(raw.country.trim()).to_owned();
        for field in [&isp, &province, &country] {
            if field.is_empty() || self.deny.contains(field) {
                return GeoEntry::Invalid;
            }
        }
        GeoEntry::Valid(GeoInfo {
            isp,
            province,
            country,
        })
    }
}

/// The persistent IP-to-geo mapping.
///
/// Concurrent readers share the map; lookups of distinct IPs proceed in
/// parallel. Two threads missing on the same IP at the same time may both
/// call the resolver — the accepted relaxation of the one-call-per-IP rule;
/// the first stored outcome wins.
#[derive(Debug, Default)]
pub struct GeoCache {
    map: RwLock<HashMap<IpAddr, GeoEntry>>,
    resolver_calls: AtomicU64,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheFileError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const INVALID_SENTINEL: &str = "!";

impl GeoCache {
    pub fn new() -> GeoCache {
        GeoCache::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resolver invocations made through [`lookup`] on this cache.
    pub fn resolver_calls(&self) -> u64 {
        self.resolver_calls.load(Ordering::Relaxed)
    }

    pub fn get(&self, ip: IpAddr) -> Option<GeoEntry> {
        self.map.read().expect("cache lock").get(&ip).cloned()
    }

    /// Stores an outcome unless one is already present; returns the entry
    /// that ends up cached.
    pub fn put(&self, ip: IpAddr, entry: GeoEntry) -> GeoEntry {
        let mut map = self.map.write().expect("cache lock");
        map.entry(ip).or_insert(entry).clone()
    }

    /// Writes `ip,isp,province,country` rows, `Invalid` as `ip,!,!,!`,
    /// sorted by IP so equal caches produce equal files. The write goes to
    /// a temp file in the target directory followed by an atomic rename, so
    /// a concurrent reader sees either the old or the new file, never a
    /// partial one.
    pub fn save(&self, path: &Path) -> Result<(), CacheFileError> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut tmp: PathBuf = dir.to_path_buf();
        tmp.push(format!(
            ".{}.tmp.{}",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "geocache".to_owned()),
            std::process::id()
        ));
        {
            let file = std::fs::File::create(&tmp)?;
            let mut writer = csv::Writer::from_writer(io::BufWriter::new(file));
            let map = self.map.read().expect("cache lock");
            let mut rows: Vec<(&IpAddr, &GeoEntry)> = map.iter().collect();
            rows.sort_by_key(|(ip, _)| **ip);
            for (ip, entry) in rows {
                match entry {
                    GeoEntry::Valid(info) => writer.write_record([
                        ip.to_string().as_str(),
                        &info.isp,
                        &info.province,
                        &info.country,
                    ])?,
                    GeoEntry::Invalid => writer.write_record([
                        ip.to_string().as_str(),
                        INVALID_SENTINEL,
                        INVALID_SENTINEL,
                        INVALID_SENTINEL,
                    ])?,
                }
            }
            writer.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GeoCache, CacheFileError> {
        let file = std::fs::File::open(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(io::BufReader::new(file));
        let cache = GeoCache::new();
        {
            let mut map = cache.map.write().expect("cache lock");
            for result in reader.records() {
                let record = result?;
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                if record.len() != 4 {
                    return Err(CacheFileError::Row {
                        line,
                        message: format!("expected 4 columns, found {}", record.len()),
                    });
                }
                let ip: IpAddr = record[0].parse().map_err(|_| CacheFileError::Row {
                    line,
                    message: format!("bad IP: {}", &record[0]),
                })?;
                let entry = if &record[1] == INVALID_SENTINEL
                    && &record[2] == INVALID_SENTINEL
                    && &record[3] == INVALID_SENTINEL
                {
                    GeoEntry::Invalid
                } else {
                    GeoEntry::Valid(GeoInfo {
                        isp: record[1].to_owned(),
                        province: record[2].to_owned(),
                        country: record[3].to_owned(),
                    })
                };
                map.insert(ip, entry);
            }
        }
        Ok(cache)
    }

    pub fn entries(&self) -> Vec<(IpAddr, GeoEntry)> {
        let map = self.map.read().expect("cache lock");
        let mut rows: Vec<(IpAddr, GeoEntry)> =
            map.iter().map(|(ip, e)| (*ip, e.clone())).collect();
        rows.sort_by_key(|(ip, _)| *ip);
        rows
    }
}

/// Cache-through lookup: a cached outcome (valid or invalid) is returned
/// without touching the resolver; a miss resolves, normalizes, stores the
/// outcome, and returns it. Resolver errors are transient — nothing is
/// cached and the next lookup retries.
pub fn lookup(
    ip: IpAddr,
    cache: &GeoCache,
    resolver: &dyn Resolver,
    normalizer: &Normalizer,
) -> Result<GeoEntry, ResolverError> {
    if let Some(entry) = cache.get(ip) {
        return Ok(entry);
    }
    cache.resolver_calls.fetch_add(1, Ordering::Relaxed);
    let raw = resolver.resolve(ip)?;
    Ok(cache.put(ip, normalizer.normalize(&raw)))
}

/// Convenience loader: builds a resolver table from an iterator of rows.
pub fn table_from_rows<'a, I>(rows: I) -> Result<CidrTableResolver, String>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str, &'a str)>,
{
    let mut table = CidrTableResolver::new();
    for (cidr, isp, province, country) in rows {
        table.push(
            cidr,
            GeoInfo {
                isp: isp.to_owned(),
                province: province.to_owned(),
                country: country.to_owned(),
            },
        )?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    fn sample_table() -> CidrTableResolver {
        table_from_rows([
            ("118.68.0.0/15", "FPT", "Ho Chi Minh", "Vietnam"),
            ("118.68.222.0/24", "FPT", "Hanoi", "Vietnam"),
            ("113.160.0.0/15", "VNPT", "HCMC", "Vietnam"),
            ("2001:db8::/32", "FPT", "Da Nang", "Vietnam"),
        ])
        .unwrap()
    }

    #[test]
    fn cidr_lookup_longest_prefix() {
        let table = sample_table();
        // /24 beats /15 for the overlapping address.
        let info = table.resolve(ip("118.68.222.40")).unwrap();
        assert_eq!(info.province, "Hanoi");
        let info = table.resolve(ip("118.69.10.1")).unwrap();
        assert_eq!(info.province, "Ho Chi Minh");
        let info = table.resolve(ip("2001:db8::42")).unwrap();
        assert_eq!(info.province, "Da Nang");
    }

    #[test]
    fn cidr_miss_is_not_found() {
        let err = sample_table().resolve(ip("8.8.8.8")).unwrap_err();
        assert_eq!(err.kind, ResolverErrorKind::NotFound);
        assert!(!err.retryable);
    }

    #[test]
    fn raw_answer_passes_through_unnormalized() {
        let info = sample_table().resolve(ip("113.160.0.9")).unwrap();
        assert_eq!(info.province, "HCMC");
    }

    #[test]
    fn cidr_parse_errors() {
        assert!("118.68.0.0".parse::<Cidr>().is_err());
        assert!("118.68.0.0/33".parse::<Cidr>().is_err());
        assert!("bogus/8".parse::<Cidr>().is_err());
    }

    fn normalizer() -> Normalizer {
        let mut syn = SynonymTable::new();
        syn.add("HCMC", "Ho Chi Minh").unwrap();
        syn.add("Hà Nội", "Hanoi").unwrap();
        syn.add("Viet Nam", "Vietnam").unwrap();
        Normalizer::new(syn, Normalizer::default().deny)
    }

    #[test]
    fn normalize_folds_synonyms() {
        let n = normalizer();
        let entry = n.normalize(&GeoInfo {
            isp: "FPT".into(),
            province: "HCMC".into(),
            country: "Viet Nam".into(),
        });
        assert_eq!(
            entry,
            GeoEntry::Valid(GeoInfo {
                isp: "FPT".into(),
                province: "Ho Chi Minh".into(),
                country: "Vietnam".into(),
            })
        );
    }

    #[test]
    fn normalize_discards_bad_fields() {
        let n = normalizer();
        let missing = GeoInfo {
            isp: "X".into(),
            province: "".into(),
            country: "Vietnam".into(),
        };
        assert_eq!(n.normalize(&missing), GeoEntry::Invalid);
        let denied = GeoInfo {
            isp: "unknown".into(),
            province: "Hanoi".into(),
            country: "Vietnam".into(),
        };
        assert_eq!(n.normalize(&denied), GeoEntry::Invalid);
    }

    #[test]
    fn normalize_is_idempotent() {
        let n = normalizer();
        let raw = GeoInfo {
            isp: " FPT ".into(),
            province: "HCMC".into(),
            country: "Viet Nam".into(),
        };
        let GeoEntry::Valid(once) = n.normalize(&raw) else {
            panic!("expected valid");
        };
        assert_eq!(n.normalize(&once), GeoEntry::Valid(once.clone()));
    }

    #[test]
    fn synonym_table_rejects_broken_fixed_points() {
        let mut syn = SynonymTable::new();
        syn.add("A", "B").unwrap();
        // B is canonical; making it a variant of something else would break
        // idempotence.
        assert!(syn.add("B", "C").is_err());
        // Self-mapping a canonical name is allowed.
        syn.add("B", "B").unwrap();
    }

    struct CountingResolver<'a> {
        inner: &'a CidrTableResolver,
        calls: Cell<u64>,
    }

    impl Resolver for CountingResolver<'_> {
        fn resolve(&self, ip: IpAddr) -> Result<GeoInfo, ResolverError> {
            self.calls.set(self.calls.get() + 1);
            self.inner.resolve(ip)
        }
    }

    #[test]
    fn lookup_caches_valid_and_invalid() {
        let table = sample_table();
        let counting = CountingResolver {
            inner: &table,
            calls: Cell::new(0),
        };
        let cache = GeoCache::new();
        let n = normalizer();

        let first = lookup(ip("118.68.222.40"), &cache, &counting, &n).unwrap();
        let second = lookup(ip("118.68.222.40"), &cache, &counting, &n).unwrap();
        assert_eq!(first, second);
        assert_eq!(counting.calls.get(), 1);

        // An answer that normalizes to Invalid is cached as Invalid.
        let mut deny = Normalizer::default().deny;
        deny.insert("VNPT".into());
        let strict = Normalizer::new(SynonymTable::new(), deny);
        let entry = lookup(ip("113.160.0.9"), &cache, &counting, &strict).unwrap();
        assert_eq!(entry, GeoEntry::Invalid);
        let again = lookup(ip("113.160.0.9"), &cache, &counting, &strict).unwrap();
        assert_eq!(again, GeoEntry::Invalid);
        assert_eq!(counting.calls.get(), 2);
    }

    #[test]
    fn lookup_does_not_cache_errors() {
        let table = sample_table();
        let counting = CountingResolver {
            inner: &table,
            calls: Cell::new(0),
        };
        let cache = GeoCache::new();
        let n = normalizer();
        assert!(lookup(ip("8.8.8.8"), &cache, &counting, &n).is_err());
        assert!(lookup(ip("8.8.8.8"), &cache, &counting, &n).is_err());
        assert_eq!(counting.calls.get(), 2);
        assert!(cache.is_empty());
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geocache.csv");
        let cache = GeoCache::new();
        for i in 0..100u32 {
            let addr = ip(&format!("10.0.{}.{}", i / 256, i % 256));
            if i % 7 == 0 {
                cache.put(addr, GeoEntry::Invalid);
            } else {
                cache.put(
                    addr,
                    GeoEntry::Valid(GeoInfo {
                        isp: format!("ISP {}", i % 3),
                        province: "Hanoi, North".into(), // comma survives CSV
                        country: "Vietnam".into(),
                    }),
                );
            }
        }
        cache.save(&path).unwrap();
        let loaded = GeoCache::load(&path).unwrap();
        assert_eq!(loaded.entries(), cache.entries());
    }

    #[test]
    fn cache_load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geocache.csv");
        std::fs::write(&path, "1.2.3.4,FPT,Hanoi,Vietnam\nnot-an-ip,a,b,c\n").unwrap();
        match GeoCache::load(&path) {
            Err(CacheFileError::Row { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn save_leaves_no_temp_and_survives_stale_partial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geocache.csv");
        let cache = GeoCache::new();
        cache.put(ip("1.2.3.4"), GeoEntry::Invalid);
        cache.save(&path).unwrap();
        // A stale partial temp file from a crashed writer must not affect
        // loads of the real file.
        std::fs::write(dir.path().join(".geocache.csv.tmp.999"), "1.2.3.4,FP").unwrap();
        let loaded = GeoCache::load(&path).unwrap();
        assert_eq!(loaded.entries(), cache.entries());
        cache.put(ip("5.6.7.8"), GeoEntry::Invalid);
        cache.save(&path).unwrap();
        let reloaded = GeoCache::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        // No temp residue from successful saves.
        let residue: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| {
                e.file_name()
                    .to_string_lossy()
                    .contains(&format!("tmp.{}", std::process::id()))
            })
            .collect();
        assert!(residue.is_empty());
    }

    #[test]
    fn http_field_extraction() {
        let config = HttpResolverConfig {
            base_url: "http://geo.example/json".into(),
            isp_field: default_isp_field(),
            province_field: default_province_field(),
            country_field: default_country_field(),
            rate_per_minute: 0,
            timeout_ms: 100,
        };
        let body = r#"{"status":"success","country":"Vietnam","regionName":"Hanoi","isp":"FPT Telecom"}"#;
        let info = extract_geo_fields(body, &config).unwrap();
        assert_eq!(info.isp, "FPT Telecom");
        assert_eq!(info.province, "Hanoi");
        // Missing fields come back empty and normalize() turns them into
        // Invalid; malformed JSON is an error.
        let partial = extract_geo_fields(r#"{"isp":"X"}"#, &config).unwrap();
        assert_eq!(partial.country, "");
        assert!(extract_geo_fields("not json", &config).is_err());
    }

    #[test]
    fn http_response_parsing() {
        let ok = b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n\r\n{\"isp\":\"X\"}";
        assert_eq!(parse_http_response(ok).unwrap(), "{\"isp\":\"X\"}");

        let chunked =
            b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n5\r\n{\"a\":\r\n2\r\n1}\r\n0\r\n\r\n";
        assert_eq!(parse_http_response(chunked).unwrap(), "{\"a\":1}");

        let whoops = b"HTTP/1.1 429 Too Many Requests\r\n\r\n";
        let err = parse_http_response(whoops).unwrap_err();
        assert_eq!(err.kind, ResolverErrorKind::Status(429));
        assert!(err.retryable);
        let gone = b"HTTP/1.1 404 Not Found\r\n\r\n";
        assert!(!parse_http_response(gone).unwrap_err().retryable);
    }

    #[test]
    fn http_resolver_against_local_listener() {
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut conn, _) = listener.accept().unwrap();
            let mut buf = [0u8; 1024];
            let n = conn.read(&mut buf).unwrap();
            let request = String::from_utf8_lossy(&buf[..n]).into_owned();
            let body = r#"{"isp":"FPT","regionName":"Hanoi","country":"Vietnam"}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            conn.write_all(response.as_bytes()).unwrap();
            request
        });
        let resolver = HttpResolver::new(HttpResolverConfig {
            base_url: format!("http://{addr}/json"),
            isp_field: default_isp_field(),
            province_field: default_province_field(),
            country_field: default_country_field(),
            rate_per_minute: 0,
            timeout_ms: 2_000,
        })
        .unwrap();
        let info = resolver.resolve(ip("118.68.222.40")).unwrap();
        assert_eq!(info.isp, "FPT");
        let request = server.join().unwrap();
        assert!(request.starts_with("GET /json/118.68.222.40 HTTP/1.1\r\n"));
    }
}
