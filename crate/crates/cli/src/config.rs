//! The JSON run configuration. Every section is optional and falls back to
//! the library defaults, so `--config` is only needed to override
//! something.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use cdntrace_core::classify::PatternConfig;
use cdntrace_core::generate::WorkloadConfig;
use cdntrace_core::geoip::HttpResolverConfig;
use cdntrace_core::simulate::TopologyConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub patterns: PatternConfig,
    pub geo: GeoSection,
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    pub reports: ReportSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoSection {
    /// HTTP resolver settings, used by `enrich` when no offline table is
    /// given.
    pub http: Option<HttpResolverConfig>,
    /// Replaces the default deny-list of known-bad location values.
    pub deny: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub include_local_in_system: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let config: RunConfig = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        config
            .patterns
            .validate()
            .map_err(anyhow::Error::msg)
            .context("patterns section")?;
        config.topology.validate().context("topology section")?;
        config.workload.validate().context("workload section")?;
        Ok(config)
    }
}
