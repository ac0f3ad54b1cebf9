//! Analytics toolkit for CDN access logs.
//!
//! The crate covers the full path from raw log text to capacity studies:
//!
//! - [`logline`]: parsing, validation, and canonical serialization of the
//!   six-field access-log format, with cleaning statistics.
//! - [`classify`]: service classification by content-name patterns and
//!   packaging classification by miss history.
//! - [`geoip`]: IP-to-ISP/location enrichment with a persistent on-disk
//!   mapping cache and pluggable resolvers.
//! - [`metrics`]: hit rates, latency and size summaries, hourly time
//!   series, and MIME breakdowns, all with a shard/merge contract.
//! - [`simulate`]: trace-driven replay through a two-layer edge/regional
//!   LRU+TTL cache hierarchy.
//! - [`generate`]: synthetic request traces with configurable class mix,
//!   Zipf popularity, diurnal arrivals, and log-normal size models.

pub mod classify;
pub mod generate;
pub mod geoip;
pub mod logline;
pub mod metrics;
pub mod simulate;
