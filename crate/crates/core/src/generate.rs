//! Synthetic request-trace generation.
//!
//! A workload is described by a class mix (service × packaging), per-class
//! content catalogs with Zipf popularity and log-normal sizes, a 24-hour
//! arrival profile driving an inhomogeneous Poisson process, and an IP pool
//! with an ISP/province mix. Generation is single-threaded and fully
//! deterministic for a given seed and build: the same config produces
//! byte-identical event files.
//!
//! Besides the event stream, [`gen_trace`] emits a ground-truth ledger
//! (per-content classes and packaging flags, realized per-class counts)
//! so downstream classification and simulation results can be checked
//! against what the generator actually did.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ServiceClass;
use crate::simulate::RequestEvent;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("quartiles must satisfy 0 < q1 < median < q3, got ({0}, {1}, {2})")]
    BadQuartiles(f64, f64, f64),
    #[error("config error: {0}")]
    Config(String),
}

/// Fits a log-normal to quartile targets: `mu = ln(median)` and
/// `sigma = (ln q3 - ln q1) / (2 × 0.674489750196082)`, the symmetric
/// quartile estimator (0.6744... is the standard normal third quartile).
pub fn fit_lognormal(q1: f64, median: f64, q3: f64) -> Result<(f64, f64), WorkloadError> {
    const Z_Q3: f64 = 0.674489750196082;
    if !(q1 > 0.0 && q1 < median && median < q3) {
        return Err(WorkloadError::BadQuartiles(q1, median, q3));
    }
    let mu = median.ln();
    let sigma = (q3.ln() - q1.ln()) / (2.0 * Z_Q3);
    Ok((mu, sigma))
}

/// One standard normal draw via Box-Muller (two uniforms per draw, no
/// rejection loop, deterministic draw count).
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Log-normal size model in decimal megabytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalSize {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalSize {
    pub fn from_quartiles(q1_mb: f64, median_mb: f64, q3_mb: f64) -> Result<Self, WorkloadError> {
        let (mu, sigma) = fit_lognormal(q1_mb, median_mb, q3_mb)?;
        Ok(LogNormalSize { mu, sigma })
    }

    pub fn sample_mb<R: Rng>(&self, rng: &mut R) -> f64 {
        (self.mu + self.sigma * standard_normal(rng)).exp()
    }

    pub fn sample_bytes<R: Rng>(&self, rng: &mut R) -> u64 {
        let bytes = (self.sample_mb(rng) * 1e6).round();
        bytes.max(1.0) as u64
    }
}

/// Zipf sampler over ranks `1..=n`: `P(k) = k^(-s) / H(n, s)` with
/// `H(n, s) = Σ_{i=1..n} i^(-s)`. Sampling inverts the precomputed CDF, so
/// draws are exact and deterministic given the RNG state. `s = 0` is the
/// uniform distribution.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, s: f64) -> ZipfSampler {
        assert!(n >= 1, "catalog must have at least one entry");
        assert!(s >= 0.0, "zipf exponent must be non-negative");
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        for k in 1..=n {
            acc += (k as f64).powf(-s);
            cdf.push(acc);
        }
        ZipfSampler { cdf }
    }

    pub fn n(&self) -> usize {
        self.cdf.len()
    }

    /// One rank in `[1, n]`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("non-empty cdf");
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u) + 1
    }
}

/// Exact Poisson sampling: the rate is split into chunks small enough for
/// Knuth's product method to stay in f64 range, and the chunk draws sum.
pub fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let chunks = (lambda / 30.0).ceil().max(1.0) as u64;
    let sub = lambda / chunks as f64;
    let limit = (-sub).exp();
    let mut total = 0u64;
    for _ in 0..chunks {
        let mut product: f64 = rng.random();
        while product > limit {
            total += 1;
            product *= rng.random::<f64>();
        }
    }
    total
}

/// One (service, packaging) slice of the workload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub service: ServiceClass,
    pub packaged: bool,
    /// Relative request weight; request fractions are `weight / Σ weight`.
    pub weight: f64,
    pub catalog_size: usize,
    #[serde(default = "default_zipf_exponent")]
    pub zipf_exponent: f64,
    /// Size model quartile targets (q1, median, q3) in decimal megabytes.
    pub size_quartiles_mb: (f64, f64, f64),
}

fn default_zipf_exponent() -> f64 {
    0.8
}

/// One ISP/province slice of the client population. Client addresses are
/// drawn uniformly from the CIDR block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpPoolEntry {
    pub isp: String,
    pub province: String,
    #[serde(default = "default_country")]
    pub country: String,
    pub weight: f64,
    pub cidr: String,
}

fn default_country() -> String {
    "Vietnam".to_owned()
}

/// Full workload description. The defaults model an OTT platform:
/// live-streaming dominated (roughly 94.5% of requests, about half of it
/// dynamically packaged), an evening prime-time peak with a secondary
/// early-morning bump, and an FPT-heavy ISP mix with Hanoi as the top
/// province at 23.52%.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub days: u32,
    pub requests_per_day: u64,
    pub classes: Vec<ClassSpec>,
    /// Relative arrival intensity per hour of day.
    pub hourly_weights: [f64; 24],
    pub ip_pool: Vec<IpPoolEntry>,
    /// Trace start, unix milliseconds.
    pub start_unix_ms: i64,
    /// UTC offset used when rendering generated events as log lines.
    pub utc_offset_minutes: i32,
}

// Default request weights per class, expressed as observed request counts
// so the derived fractions are exact.
const LIVE_NONPKG_WEIGHT: f64 = 152_697_608.0;
const LIVE_PKG_WEIGHT: f64 = 129_278_868.0;
const VOD_WEIGHT: f64 = 2_069_393.0;
const WEB_WEIGHT: f64 = 14_301_252.0;

const LIVE_QUARTILES_MB: (f64, f64, f64) = (0.03936665, 0.075, 0.12234965);
const VOD_QUARTILES_MB: (f64, f64, f64) = (0.0866492, 0.2026076, 0.3279754);
const WEB_QUARTILES_MB: (f64, f64, f64) = (0.00713175, 0.0578163, 0.49207115);

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 1,
            days: 1,
            requests_per_day: 100_000,
            classes: vec![
                ClassSpec {
                    service: ServiceClass::LiveStreaming,
                    packaged: false,
                    weight: LIVE_NONPKG_WEIGHT,
                    catalog_size: 20_000,
                    zipf_exponent: 0.8,
                    size_quartiles_mb: LIVE_QUARTILES_MB,
                },
                ClassSpec {
                    service: ServiceClass::LiveStreaming,
                    packaged: true,
                    weight: LIVE_PKG_WEIGHT,
                    catalog_size: 20_000,
                    zipf_exponent: 0.8,
                    size_quartiles_mb: LIVE_QUARTILES_MB,
                },
                ClassSpec {
                    service: ServiceClass::VideoOnDemand,
                    packaged: false,
                    weight: VOD_WEIGHT,
                    catalog_size: 5_000,
                    zipf_exponent: 0.8,
                    size_quartiles_mb: VOD_QUARTILES_MB,
                },
                ClassSpec {
                    service: ServiceClass::Website,
                    packaged: false,
                    weight: WEB_WEIGHT,
                    catalog_size: 10_000,
                    zipf_exponent: 0.8,
                    size_quartiles_mb: WEB_QUARTILES_MB,
                },
            ],
            hourly_weights: [
                0.50, 0.35, 0.40, 0.75, 0.80, 0.70, 0.45, 0.40, 0.45, 0.50, 0.55, 0.60, //
                0.60, 0.60, 0.62, 0.65, 0.70, 0.78, 0.85, 1.00, 1.00, 0.92, 0.75, 0.60,
            ],
            ip_pool: default_ip_pool(),
            // 2018-12-03 00:00:00 +07:00
            start_unix_ms: 1_543_770_000_000,
            utc_offset_minutes: 7 * 60,
        }
    }
}

/// Illustrative client mix: FPT largest, then VNPT and Viettel; Hanoi the
/// top province at exactly 0.2352, Ho Chi Minh second.
fn default_ip_pool() -> Vec<IpPoolEntry> {
    let entry = |isp: &str, province: &str, weight: f64, cidr: &str| IpPoolEntry {
        isp: isp.to_owned(),
        province: province.to_owned(),
        country: default_country(),
        weight,
        cidr: cidr.to_owned(),
    };
    vec![
        entry("FPT", "Hanoi", 0.1352, "118.68.0.0/16"),
        entry("FPT", "Ho Chi Minh", 0.17, "118.69.0.0/16"),
        entry("FPT", "Hai Phong", 0.07, "42.112.0.0/16"),
        entry("FPT", "Bac Ninh", 0.06, "42.113.0.0/16"),
        entry("VNPT", "Hanoi", 0.10, "113.160.0.0/16"),
        entry("VNPT", "Da Nang", 0.08, "113.161.0.0/16"),
        entry("VNPT", "Quang Ninh", 0.05, "14.160.0.0/16"),
        entry("Viettel", "Ho Chi Minh", 0.05, "171.224.0.0/16"),
        entry("Viettel", "Thanh Hoa", 0.09, "171.225.0.0/16"),
        entry("Mobifone", "Can Tho", 0.08, "103.35.0.0/16"),
        entry("SCTV", "Ho Chi Minh", 0.0148, "115.78.0.0/16"),
        entry("Other", "Nghe An", 0.10, "27.64.0.0/16"),
    ]
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.classes.is_empty() {
            return Err(WorkloadError::Config("no classes configured".into()));
        }
        let weight_sum: f64 = self.classes.iter().map(|c| c.weight).sum();
        if !weight_sum.is_finite() || weight_sum <= 0.0 || self.classes.iter().any(|c| c.weight < 0.0)
        {
            return Err(WorkloadError::Config(
                "class weights must be non-negative with a positive sum".into(),
            ));
        }
        for class in &self.classes {
            if class.catalog_size < 1 {
                return Err(WorkloadError::Config(format!(
                    "catalog for {} must have at least one entry",
                    class.service
                )));
            }
            if class.zipf_exponent < 0.0 {
                return Err(WorkloadError::Config("zipf exponent must be >= 0".into()));
            }
            let (q1, med, q3) = class.size_quartiles_mb;
            fit_lognormal(q1, med, q3)?;
        }
        if self.hourly_weights.iter().any(|w| *w < 0.0)
            || self.hourly_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(WorkloadError::Config(
                "hourly weights must be non-negative and not all zero".into(),
            ));
        }
        if self.ip_pool.is_empty() {
            return Err(WorkloadError::Config("ip_pool must not be empty".into()));
        }
        let ip_weight: f64 = self.ip_pool.iter().map(|p| p.weight).sum();
        if !ip_weight.is_finite() || ip_weight <= 0.0 || self.ip_pool.iter().any(|p| p.weight < 0.0) {
            return Err(WorkloadError::Config(
                "ip pool weights must be non-negative with a positive sum".into(),
            ));
        }
        for pool in &self.ip_pool {
            parse_cidr(&pool.cidr).map_err(WorkloadError::Config)?;
        }
        Ok(())
    }

    /// Derived request fraction per class (weights normalized).
    pub fn class_fractions(&self) -> Vec<f64> {
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        self.classes.iter().map(|c| c.weight / total).collect()
    }

    /// Resolver-table rows covering the configured IP pool, for offline
    /// enrichment of generated traces.
    pub fn geo_table_rows(&self) -> Vec<(String, String, String, String)> {
        self.ip_pool
            .iter()
            .map(|p| {
                (
                    p.cidr.clone(),
                    p.isp.clone(),
                    p.province.clone(),
                    p.country.clone(),
                )
            })
            .collect()
    }
}

fn parse_cidr(cidr: &str) -> Result<(u128, u8, bool), String> {
    let (addr_txt, len_txt) = cidr
        .split_once('/')
        .ok_or_else(|| format!("not a CIDR: {cidr}"))?;
    let addr: IpAddr = addr_txt
        .parse()
        .map_err(|_| format!("bad address in CIDR: {cidr}"))?;
    let prefix: u8 = len_txt.parse().map_err(|_| format!("bad prefix: {cidr}"))?;
    let (bits, width, v6) = match addr {
        IpAddr::V4(v4) => (u32::from(v4) as u128, 32u8, false),
        IpAddr::V6(v6) => (u128::from(v6), 128u8, true),
    };
    if prefix > width {
        return Err(format!("prefix too long: {cidr}"));
    }
    Ok((bits, prefix, v6))
}

fn sample_ip<R: Rng>(rng: &mut R, cidr: (u128, u8, bool)) -> IpAddr {
    let (bits, prefix, v6) = cidr;
    let width: u8 = if v6 { 128 } else { 32 };
    let host_bits = (width - prefix) as u32;
    let host: u128 = if host_bits == 0 {
        0
    } else if host_bits >= 64 {
        ((rng.random::<u64>() as u128) << 64 | rng.random::<u64>() as u128)
            & ((1u128 << host_bits) - 1)
    } else {
        (rng.random::<u64>() & ((1u64 << host_bits) - 1)) as u128
    };
    let mask = if prefix == 0 {
        0
    } else {
        (!0u128) << (width - prefix) as u32
    };
    let addr = (bits & mask) | host;
    if v6 {
        IpAddr::V6(Ipv6Addr::from(addr))
    } else {
        IpAddr::V4(Ipv4Addr::from(addr as u32))
    }
}

/// One synthesized content. The path is constructed so the classifier maps
/// it back to the intended service class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub path: String,
    pub size_bytes: u64,
    pub service: ServiceClass,
    pub packaged: bool,
}

fn synth_path<R: Rng>(
    service: ServiceClass,
    packaged: bool,
    class_idx: usize,
    entry_idx: usize,
    rng: &mut R,
) -> String {
    fn pick<R: Rng>(rng: &mut R, choices: &[(&'static str, f64)]) -> &'static str {
        let total: f64 = choices.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for (ext, w) in choices {
            u -= w;
            if u <= 0.0 {
                return ext;
            }
        }
        choices[choices.len() - 1].0
    }
    match service {
        ServiceClass::LiveStreaming => {
            let ext = pick(rng, &[("ts", 0.55), ("m3u8", 0.45)]);
            let channel = entry_idx % 97;
            if packaged {
                format!("/live/pkg/ch{channel:02}/seg{class_idx}-{entry_idx:06}.{ext}")
            } else {
                format!("/live/ch{channel:02}/seg{class_idx}-{entry_idx:06}.{ext}")
            }
        }
        ServiceClass::VideoOnDemand => {
            let ext = pick(rng, &[("dash", 0.69), ("mpd", 0.31)]);
            let title = entry_idx % 503;
            format!("/movies/m{title:03}/part{class_idx}-{entry_idx:06}.{ext}")
        }
        ServiceClass::Website => {
            let ext = pick(
                rng,
                &[
                    ("png", 0.30),
                    ("jpg", 0.25),
                    ("js", 0.15),
                    ("css", 0.10),
                    ("html", 0.10),
                    ("mp4", 0.05),
                    ("mp3", 0.02),
                    ("zip", 0.03),
                ],
            );
            format!("/assets/item{class_idx}-{entry_idx:06}.{ext}")
        }
    }
}

/// Sorted arrival timestamps (unix ms): an inhomogeneous Poisson process
/// whose hourly rate follows `hourly_weights`, normalized so the expected
/// total is `requests_per_day × days`.
pub fn gen_arrivals<R: Rng>(cfg: &WorkloadConfig, rng: &mut R) -> Vec<i64> {
    let weight_sum: f64 = cfg.hourly_weights.iter().sum();
    let mut times = Vec::new();
    for day in 0..cfg.days {
        for hour in 0..24usize {
            let lambda =
                cfg.requests_per_day as f64 * cfg.hourly_weights[hour] / weight_sum;
            let count = poisson(rng, lambda);
            let hour_start =
                cfg.start_unix_ms + ((day as i64 * 24 + hour as i64) * 3_600_000);
            for _ in 0..count {
                times.push(hour_start + rng.random_range(0..3_600_000i64));
            }
        }
    }
    times.sort_unstable();
    times
}

/// Realized per-class totals plus the full catalog: everything an oracle
/// needs to check classification and simulation results on the trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceLedger {
    pub seed: u64,
    pub days: u32,
    pub requests_per_day: u64,
    pub total_events: u64,
    pub classes: Vec<LedgerClass>,
    pub catalog: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerClass {
    pub service: ServiceClass,
    pub packaged: bool,
    pub configured_fraction: f64,
    pub catalog_size: usize,
    pub zipf_exponent: f64,
    pub request_count: u64,
}

/// Generates the event stream and its ground-truth ledger.
///
/// Draw order is fixed (catalogs per class in declaration order, then
/// arrivals, then per-event class/content/client draws), so a seed pins the
/// whole trace.
pub fn gen_trace(cfg: &WorkloadConfig) -> Result<(Vec<RequestEvent>, TraceLedger), WorkloadError> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Catalogs.
    let mut catalogs: Vec<Vec<CatalogEntry>> = Vec::with_capacity(cfg.classes.len());
    for (class_idx, class) in cfg.classes.iter().enumerate() {
        let (q1, med, q3) = class.size_quartiles_mb;
        let size_model = LogNormalSize::from_quartiles(q1, med, q3)?;
        let mut entries = Vec::with_capacity(class.catalog_size);
        for entry_idx in 0..class.catalog_size {
            let path = synth_path(class.service, class.packaged, class_idx, entry_idx, &mut rng);
            entries.push(CatalogEntry {
                path,
                size_bytes: size_model.sample_bytes(&mut rng),
                service: class.service,
                packaged: class.packaged,
            });
        }
        catalogs.push(entries);
    }

    let zipf: Vec<ZipfSampler> = cfg
        .classes
        .iter()
        .map(|c| ZipfSampler::new(c.catalog_size, c.zipf_exponent))
        .collect();

    // Class CDF over configured weights.
    let fractions = cfg.class_fractions();
    let class_cdf: Vec<f64> = fractions
        .iter()
        .scan(0.0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .collect();

    let pool_cidrs: Vec<(u128, u8, bool)> = cfg
        .ip_pool
        .iter()
        .map(|p| parse_cidr(&p.cidr).expect("validated"))
        .collect();
    let pool_cdf: Vec<f64> = {
        let total: f64 = cfg.ip_pool.iter().map(|p| p.weight).sum();
        cfg.ip_pool
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.weight / total;
                Some(*acc)
            })
            .collect()
    };

    let arrivals = gen_arrivals(cfg, &mut rng);

    let mut class_counts = vec![0u64; cfg.classes.len()];
    let mut events = Vec::with_capacity(arrivals.len());
    for time_ms in arrivals {
        let u: f64 = rng.random();
        let class_idx = class_cdf.partition_point(|&c| c <= u).min(cfg.classes.len() - 1);
        let rank = zipf[class_idx].sample(&mut rng);
        let entry = &catalogs[class_idx][rank - 1];
        let u: f64 = rng.random();
        let pool_idx = pool_cdf.partition_point(|&c| c <= u).min(cfg.ip_pool.len() - 1);
        let client_ip = sample_ip(&mut rng, pool_cidrs[pool_idx]);
        class_counts[class_idx] += 1;
        events.push(RequestEvent {
            time_ms,
            client_ip,
            path: entry.path.clone(),
            size_bytes: entry.size_bytes,
            service: entry.service,
            packaged: entry.packaged,
        });
    }

    let ledger = TraceLedger {
        seed: cfg.seed,
        days: cfg.days,
        requests_per_day: cfg.requests_per_day,
        total_events: events.len() as u64,
        classes: cfg
            .classes
            .iter()
            .zip(&class_counts)
            .zip(&fractions)
            .map(|((class, count), fraction)| LedgerClass {
                service: class.service,
                packaged: class.packaged,
                configured_fraction: *fraction,
                catalog_size: class.catalog_size,
                zipf_exponent: class.zipf_exponent,
                request_count: *count,
            })
            .collect(),
        catalog: catalogs.into_iter().flatten().collect(),
    };

    Ok((events, ledger))
}
