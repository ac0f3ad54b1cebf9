//! The six subcommands. Each is a pure function of (inputs, config): it
//! validates everything up front, streams the inputs, and writes
//! deterministic outputs under `--out`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{FixedOffset, TimeZone};

use cdntrace_core::classify::{
    build_miss_set, classify_packaging, classify_service, ClassCounts, ClassifiedRecord,
    ContentMissSet, PackagingClass, PatternConfig,
};
use cdntrace_core::generate::gen_trace;
use cdntrace_core::geoip::{
    CidrTableResolver, GeoCache, GeoEntry, Normalizer, Resolver, SynonymTable,
};
use cdntrace_core::logline::{
    format_record, parse_line, HitStatus, LogRecord, RejectionStats,
};
use cdntrace_core::metrics::{
    hour_label, GroupBy, HitRateCollector, HitRateOptions, LatencyCollector, MimeCollector,
    RecordCtx, SizeDistCollector, TimeSeriesCollector,
};
use cdntrace_core::simulate::{
    compare, read_events_path, replay_with_options, write_events_csv, ReplayOptions, RequestEvent,
};

use crate::config::RunConfig;
use crate::lineio::{check_inputs_exist, for_each_line, open_lines, par_map_files};
use crate::recordio::{
    read_classified, write_classified, write_enriched, CLASSIFIED_HEADER, ENRICHED_HEADER,
};
use crate::{CliError, CmdResult, CommonArgs, ErrorClass};

fn prepare_out(common: &CommonArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))
        .or_input()
}

fn emit_stdout(value: &serde_json::Value) {
    println!("{value}");
}

/// Concatenates per-input part files, in input order, into `target`.
fn concat_parts(parts: &[PathBuf], header: Option<&[&str]>, target: &Path) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(target)?);
    if let Some(header) = header {
        out.write_all(header.join(",").as_bytes())?;
        out.write_all(b"\n")?;
    }
    for part in parts {
        let mut reader = File::open(part)?;
        std::io::copy(&mut reader, &mut out)?;
    }
    out.flush()?;
    for part in parts {
        std::fs::remove_file(part)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- clean

pub fn clean(common: &CommonArgs, inputs: &[PathBuf]) -> CmdResult {
    let _config = RunConfig::load(common.config.as_deref()).or_config()?;
    check_inputs_exist(inputs).or_input()?;
    prepare_out(common)?;

    let results = par_map_files(inputs, common.threads, |index, path| {
        let part_path = common.out.join(format!(".cleaned.part{index}"));
        let mut writer = BufWriter::new(File::create(&part_path)?);
        let mut stats = RejectionStats::default();
        let mut reader =
            open_lines(path).with_context(|| format!("opening {}", path.display()))?;
        for_each_line(reader.as_mut(), |line| {
            if line.is_empty() {
                return;
            }
            match parse_line(line) {
                Ok(record) => {
                    stats.record_accepted();
                    let _ = writeln!(writer, "{}", format_record(&record));
                }
                Err(err) => stats.record_rejected(err.reason),
            }
        })
        .with_context(|| format!("reading {}", path.display()))?;
        writer.flush()?;
        Ok((part_path, stats))
    })
    .or_input()?;

    let mut total = RejectionStats::default();
    let mut per_file = Vec::new();
    let mut parts = Vec::new();
    for (path, (part, stats)) in inputs.iter().zip(&results) {
        total.merge(stats);
        per_file.push(serde_json::json!({
            "input": path.display().to_string(),
            "stats": stats,
        }));
        parts.push(part.clone());
    }
    concat_parts(&parts, None, &common.out.join("cleaned.log")).or_input()?;

    let stats_json = serde_json::json!({ "total": total, "files": per_file });
    std::fs::write(
        common.out.join("clean_stats.json"),
        serde_json::to_string_pretty(&stats_json).expect("stats serialize"),
    )
    .or_input()?;
    emit_stdout(&serde_json::json!({ "command": "clean", "stats": total }));
    Ok(())
}

// ------------------------------------------------------------- classify

/// Streams every accepted record of one file into `f`.
fn scan_records(path: &Path, mut f: impl FnMut(LogRecord)) -> anyhow::Result<RejectionStats> {
    let mut stats = RejectionStats::default();
    let mut reader = open_lines(path).with_context(|| format!("opening {}", path.display()))?;
    for_each_line(reader.as_mut(), |line| {
        if line.is_empty() {
            return;
        }
        match parse_line(line) {
            Ok(record) => {
                stats.record_accepted();
                f(record);
            }
            Err(err) => stats.record_rejected(err.reason),
        }
    })
    .with_context(|| format!("reading {}", path.display()))?;
    Ok(stats)
}

fn build_miss_set_for_files(
    inputs: &[PathBuf],
    threads: usize,
    patterns: &PatternConfig,
) -> anyhow::Result<ContentMissSet> {
    let shards = par_map_files(inputs, threads, |_, path| {
        let mut shard = ContentMissSet::new();
        scan_records(path, |record| {
            if record.status == HitStatus::Miss {
                shard.insert(
                    patterns.identity_of(&record.content_path),
                    patterns.hash_threshold,
                );
            }
        })?;
        Ok(shard)
    })?;
    let mut miss_set = ContentMissSet::new();
    for shard in shards {
        miss_set.merge(shard);
    }
    Ok(miss_set)
}

pub fn classify(common: &CommonArgs, inputs: &[PathBuf]) -> CmdResult {
    let config = RunConfig::load(common.config.as_deref()).or_config()?;
    check_inputs_exist(inputs).or_input()?;
    prepare_out(common)?;
    let patterns = &config.patterns;

    // Pass 1: which contents ever missed.
    let miss_set = build_miss_set_for_files(inputs, common.threads, patterns).or_input()?;

    // Pass 2: label records and tally class counts.
    let results = par_map_files(inputs, common.threads, |index, path| {
        let part_path = common.out.join(format!(".classified.part{index}"));
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(File::create(&part_path)?));
        let mut counts = ClassCounts::new();
        let mut row_error = None;
        let stats = scan_records(path, |record| {
            let service = classify_service(&record.content_path, patterns);
            let packaging = classify_packaging(&record.content_path, &miss_set, patterns);
            *counts.entry((service, packaging)).or_insert(0) += 1;
            let classified = ClassifiedRecord {
                record,
                service,
                packaging,
            };
            if let Err(err) = write_classified(&mut writer, &classified) {
                row_error.get_or_insert(err);
            }
        })?;
        if let Some(err) = row_error {
            return Err(err.into());
        }
        writer.flush()?;
        Ok((part_path, counts, stats))
    })
    .or_input()?;

    let mut counts = ClassCounts::new();
    let mut stats = RejectionStats::default();
    let mut parts = Vec::new();
    for (part, file_counts, file_stats) in results {
        for (key, n) in file_counts {
            *counts.entry(key).or_insert(0) += n;
        }
        stats.merge(&file_stats);
        parts.push(part);
    }
    concat_parts(
        &parts,
        Some(&CLASSIFIED_HEADER),
        &common.out.join("classified.csv"),
    )
    .or_input()?;

    let mut counts_csv = String::from("service,packaging,count\n");
    let mut counts_json = Vec::new();
    for ((service, packaging), n) in &counts {
        counts_csv.push_str(&format!("{service},{packaging},{n}\n"));
        counts_json.push(serde_json::json!({
            "service": service,
            "packaging": packaging,
            "count": n,
        }));
    }
    std::fs::write(common.out.join("class_counts.csv"), counts_csv).or_input()?;
    emit_stdout(&serde_json::json!({
        "command": "classify",
        "stats": stats,
        "class_counts": counts_json,
    }));
    Ok(())
}

// --------------------------------------------------------------- enrich

pub fn enrich(
    common: &CommonArgs,
    inputs: &[PathBuf],
    cache_path: &Path,
    geo_table: Option<&Path>,
    synonyms: Option<&Path>,
) -> CmdResult {
    let config = RunConfig::load(common.config.as_deref()).or_config()?;
    check_inputs_exist(inputs).or_input()?;
    prepare_out(common)?;

    // Resolver configuration problems are config errors: nothing has been
    // processed yet and the fix is in flags or the config file.
    let resolver: Box<dyn Resolver + Sync> = match geo_table {
        Some(path) => Box::new(
            CidrTableResolver::from_csv_path(path)
                .with_context(|| format!("loading geo table {}", path.display()))
                .or_config()?,
        ),
        None => match &config.geo.http {
            Some(http) => Box::new(
                cdntrace_core::geoip::HttpResolver::new(http.clone())
                    .map_err(anyhow::Error::msg)
                    .or_config()?,
            ),
            None => {
                return Err(CliError::Config(anyhow::anyhow!(
                    "enrich needs --geo-table or a geo.http config section"
                )))
            }
        },
    };
    let synonym_table = match synonyms {
        Some(path) => SynonymTable::from_csv_path(path)
            .with_context(|| format!("loading synonyms {}", path.display()))
            .or_config()?,
        None => SynonymTable::new(),
    };
    let normalizer = match &config.geo.deny {
        Some(deny) => Normalizer::new(synonym_table, deny.iter().cloned().collect()),
        None => Normalizer::new(synonym_table, Normalizer::default().deny),
    };

    let cache = if cache_path.is_file() {
        GeoCache::load(cache_path)
            .with_context(|| format!("loading geo cache {}", cache_path.display()))
            .or_input()?
    } else {
        GeoCache::new()
    };

    #[derive(Default, Clone, Copy)]
    struct EnrichTally {
        records: u64,
        valid: u64,
        invalid: u64,
        errors: u64,
    }

    let results = par_map_files(inputs, common.threads, |index, path| {
        let part_path = common.out.join(format!(".enriched.part{index}"));
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(File::create(&part_path)?));
        let mut tally = EnrichTally::default();
        let mut row_error = None;
        scan_records(path, |record| {
            let entry = match cdntrace_core::geoip::lookup(
                record.client_ip,
                &cache,
                resolver.as_ref(),
                &normalizer,
            ) {
                Ok(entry) => {
                    match entry {
                        GeoEntry::Valid(_) => tally.valid += 1,
                        GeoEntry::Invalid => tally.invalid += 1,
                    }
                    Some(entry)
                }
                Err(_) => {
                    tally.errors += 1;
                    None
                }
            };
            tally.records += 1;
            if let Err(err) = write_enriched(&mut writer, &record, entry.as_ref()) {
                row_error.get_or_insert(err);
            }
        })?;
        if let Some(err) = row_error {
            return Err(err.into());
        }
        writer.flush()?;
        Ok((part_path, tally))
    })
    .or_input()?;

    let mut tally = EnrichTally::default();
    let mut parts = Vec::new();
    for (part, t) in results {
        tally.records += t.records;
        tally.valid += t.valid;
        tally.invalid += t.invalid;
        tally.errors += t.errors;
        parts.push(part);
    }
    concat_parts(
        &parts,
        Some(&ENRICHED_HEADER),
        &common.out.join("enriched.csv"),
    )
    .or_input()?;
    cache
        .save(cache_path)
        .with_context(|| format!("saving geo cache {}", cache_path.display()))
        .or_input()?;

    emit_stdout(&serde_json::json!({
        "command": "enrich",
        "records": tally.records,
        "resolved_valid": tally.valid,
        "resolved_invalid": tally.invalid,
        "transient_errors": tally.errors,
        "resolver_calls": cache.resolver_calls(),
        "cache_entries": cache.len(),
    }));
    Ok(())
}

// --------------------------------------------------------------- report

#[derive(Default)]
struct ReportCollectors {
    hit_rates: BTreeMap<&'static str, HitRateCollector>,
    latency: BTreeMap<&'static str, LatencyCollector>,
    time_series: TimeSeriesCollector,
    mime: MimeCollector,
    sizes: SizeDistCollector,
}

impl ReportCollectors {
    fn new(bys: &[GroupBy]) -> ReportCollectors {
        let mut collectors = ReportCollectors::default();
        for by in bys {
            collectors.hit_rates.insert(by.as_str(), HitRateCollector::default());
            collectors.latency.insert(by.as_str(), LatencyCollector::default());
        }
        collectors
    }

    fn add(&mut self, ctx: &RecordCtx<'_>, bys: &[GroupBy]) {
        for by in bys {
            self.hit_rates
                .get_mut(by.as_str())
                .expect("collector per key")
                .add(ctx, *by);
            self.latency
                .get_mut(by.as_str())
                .expect("collector per key")
                .add(ctx, *by);
        }
        self.time_series.add(ctx.record);
        self.mime.add(ctx.record);
        if let Some(service) = ctx.service {
            self.sizes.add(service, ctx.record.size_bytes);
        }
    }

    fn merge(&mut self, other: ReportCollectors) {
        for (key, collector) in other.hit_rates {
            self.hit_rates.entry(key).or_default().merge(collector);
        }
        for (key, collector) in other.latency {
            self.latency.entry(key).or_default().merge(collector);
        }
        self.time_series.merge(other.time_series);
        self.mime.merge(other.mime);
        self.sizes.merge(other.sizes);
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

#[allow(clippy::too_many_arguments)]
pub fn report(
    common: &CommonArgs,
    inputs: &[PathBuf],
    input_format: &str,
    by: &str,
    reports: &str,
    geo_cache: Option<&Path>,
    plot_data: bool,
    include_local: bool,
) -> CmdResult {
    let config = RunConfig::load(common.config.as_deref()).or_config()?;
    let patterns = &config.patterns;

    let bys: Vec<GroupBy> = by
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|token| {
            GroupBy::parse(token.trim())
                .ok_or_else(|| anyhow::anyhow!("unknown grouping key: {token}"))
        })
        .collect::<anyhow::Result<_>>()
        .or_config()?;
    let selected: Vec<&str> = reports
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    for token in &selected {
        if !["hit-rates", "latency", "time-series", "mime", "sizes"].contains(token) {
            return Err(CliError::Config(anyhow::anyhow!("unknown report: {token}")));
        }
    }
    if !["log", "classified"].contains(&input_format) {
        return Err(CliError::Config(anyhow::anyhow!(
            "unknown input format: {input_format}"
        )));
    }
    check_inputs_exist(inputs).or_input()?;
    prepare_out(common)?;

    let geo = match geo_cache {
        Some(path) => Some(
            GeoCache::load(path)
                .with_context(|| format!("loading geo cache {}", path.display()))
                .or_input()?,
        ),
        None => None,
    };
    let geo_of = |record: &LogRecord| {
        geo.as_ref().and_then(|cache| match cache.get(record.client_ip) {
            Some(GeoEntry::Valid(info)) => Some(info),
            _ => None,
        })
    };

    let shards = par_map_files(inputs, common.threads, |_, path| {
        let mut collectors = ReportCollectors::new(&bys);
        if input_format == "classified" {
            let file = File::open(path)?;
            let rows = read_classified(std::io::BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?;
            for row in rows {
                let info = geo_of(&row.record);
                let ctx = RecordCtx {
                    record: &row.record,
                    service: Some(row.service),
                    geo: info.as_ref(),
                };
                collectors.add(&ctx, &bys);
            }
        } else {
            scan_records(path, |record| {
                let info = geo_of(&record);
                let ctx = RecordCtx {
                    record: &record,
                    service: Some(classify_service(&record.content_path, patterns)),
                    geo: info.as_ref(),
                };
                collectors.add(&ctx, &bys);
            })?;
        }
        Ok(collectors)
    })
    .or_input()?;

    let mut collectors = ReportCollectors::new(&bys);
    for shard in shards {
        collectors.merge(shard);
    }

    let rate_opts = HitRateOptions {
        include_local_in_system: include_local || config.reports.include_local_in_system,
    };

    let mut written: Vec<String> = Vec::new();
    let mut write_file = |name: &str, contents: String| -> anyhow::Result<()> {
        let path = common.out.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        written.push(name.to_owned());
        Ok(())
    };

    let hit_rate_tables: BTreeMap<&str, _> = collectors
        .hit_rates
        .into_iter()
        .map(|(key, c)| (key, c.finish(rate_opts)))
        .collect();
    let latency_tables: BTreeMap<&str, _> = collectors
        .latency
        .into_iter()
        .map(|(key, c)| (key, c.finish()))
        .collect();
    let time_series = collectors.time_series.finish();
    let mime = collectors.mime.finish();
    let sizes = collectors.sizes.finish();

    (|| -> anyhow::Result<()> {
        if selected.contains(&"hit-rates") {
            for (key, table) in &hit_rate_tables {
                let mut csv_text =
                    String::from("group,edge_rate,regional_rate,system_rate,n_miss,n_hit,n_hit1,n_local\n");
                for (group, r) in table {
                    csv_text.push_str(&format!(
                        "{group},{},{},{},{},{},{},{}\n",
                        fmt_opt(r.edge_rate),
                        fmt_opt(r.regional_rate),
                        fmt_opt(r.system_rate),
                        r.counts.n_miss,
                        r.counts.n_hit,
                        r.counts.n_hit1,
                        r.counts.n_local,
                    ));
                }
                write_file(&format!("hit_rates_{key}.csv"), csv_text)?;
                write_file(
                    &format!("hit_rates_{key}.json"),
                    serde_json::to_string_pretty(table)?,
                )?;
            }
        }
        if selected.contains(&"latency") {
            for (key, table) in &latency_tables {
                let mut csv_text = String::from(
                    "group,count,mean_s,lower_whisker_s,q1_s,median_s,q3_s,upper_whisker_s,approximate\n",
                );
                for (group, s) in table {
                    csv_text.push_str(&format!(
                        "{group},{},{},{},{},{},{},{},{}\n",
                        s.count,
                        s.mean,
                        s.lower_whisker,
                        s.q1,
                        s.median,
                        s.q3,
                        s.upper_whisker,
                        s.approximate
                    ));
                }
                write_file(&format!("latency_{key}.csv"), csv_text)?;
                write_file(
                    &format!("latency_{key}.json"),
                    serde_json::to_string_pretty(table)?,
                )?;
            }
        }
        if selected.contains(&"time-series") {
            let mut csv_text =
                String::from("bucket_start,requests,bytes,latency_sum_s,latency_mean_s\n");
            for bucket in &time_series {
                csv_text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    hour_label(&bucket.bucket_start),
                    bucket.request_count,
                    bucket.total_bytes,
                    bucket.latency_sum_seconds,
                    bucket.latency_mean_seconds
                ));
            }
            write_file("time_series.csv", csv_text)?;
            write_file("time_series.json", serde_json::to_string_pretty(&time_series)?)?;
        }
        if selected.contains(&"mime") {
            let mut csv_text = String::from("class,requests,bytes,request_fraction,byte_fraction\n");
            for class in &mime.classes {
                csv_text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    class.class.as_str(),
                    class.requests,
                    class.bytes,
                    class.request_fraction,
                    class.byte_fraction
                ));
            }
            write_file("mime.csv", csv_text)?;
            write_file("mime.json", serde_json::to_string_pretty(&mime)?)?;
        }
        if selected.contains(&"sizes") {
            let mut csv_text = String::from(
                "service,count,mean_mb,lower_whisker_mb,q1_mb,median_mb,q3_mb,upper_whisker_mb,approximate\n",
            );
            for (service, s) in &sizes.by_service {
                csv_text.push_str(&format!(
                    "{service},{},{},{},{},{},{},{},{}\n",
                    s.count,
                    s.mean,
                    s.lower_whisker,
                    s.q1,
                    s.median,
                    s.q3,
                    s.upper_whisker,
                    s.approximate
                ));
            }
            write_file("sizes.csv", csv_text)?;
            write_file("sizes.json", serde_json::to_string_pretty(&sizes)?)?;
        }

        if plot_data {
            // Per-figure shapes: an hourly dual series, hourly hit-rate
            // lines, boxplot rows, and bar fractions.
            let mut csv_text = String::from("hour,requests,bytes\n");
            for bucket in &time_series {
                csv_text.push_str(&format!(
                    "{},{},{}\n",
                    hour_label(&bucket.bucket_start),
                    bucket.request_count,
                    bucket.total_bytes
                ));
            }
            write_file("plots/requests_bytes_hourly.csv", csv_text)?;

            if let Some(table) = hit_rate_tables.get("hour") {
                let mut csv_text = String::from("hour,edge_rate,regional_rate,system_rate\n");
                for (group, r) in table {
                    csv_text.push_str(&format!(
                        "{group},{},{},{}\n",
                        fmt_opt(r.edge_rate),
                        fmt_opt(r.regional_rate),
                        fmt_opt(r.system_rate)
                    ));
                }
                write_file("plots/hit_rate_hourly.csv", csv_text)?;
            }
            for (key, table) in &latency_tables {
                let mut csv_text =
                    String::from("group,lower_whisker,q1,median,q3,upper_whisker,mean\n");
                for (group, s) in table {
                    csv_text.push_str(&format!(
                        "{group},{},{},{},{},{},{}\n",
                        s.lower_whisker, s.q1, s.median, s.q3, s.upper_whisker, s.mean
                    ));
                }
                write_file(&format!("plots/latency_boxplot_{key}.csv"), csv_text)?;
            }
            let mut csv_text = String::from("service,lower_whisker,q1,median,q3,upper_whisker,mean\n");
            for (service, s) in &sizes.by_service {
                csv_text.push_str(&format!(
                    "{service},{},{},{},{},{},{}\n",
                    s.lower_whisker, s.q1, s.median, s.q3, s.upper_whisker, s.mean
                ));
            }
            write_file("plots/size_boxplot_service.csv", csv_text)?;
            let mut csv_text = String::from("class,request_fraction,byte_fraction\n");
            for class in &mime.classes {
                csv_text.push_str(&format!(
                    "{},{},{}\n",
                    class.class.as_str(),
                    class.request_fraction,
                    class.byte_fraction
                ));
            }
            write_file("plots/mime_fractions.csv", csv_text)?;
        }
        Ok(())
    })()
    .or_input()?;

    emit_stdout(&serde_json::json!({ "command": "report", "written": written }));
    Ok(())
}

// ------------------------------------------------------------- simulate

fn events_from_log(
    inputs: &[&Path],
    patterns: &PatternConfig,
) -> anyhow::Result<(Vec<RequestEvent>, Vec<HitStatus>, Vec<LogRecord>)> {
    let mut records = Vec::new();
    for path in inputs {
        scan_records(path, |record| records.push(record))?;
    }
    let miss_set = build_miss_set(records.iter(), patterns);
    let mut events = Vec::with_capacity(records.len());
    let mut logged = Vec::with_capacity(records.len());
    for record in &records {
        let service = classify_service(&record.content_path, patterns);
        let packaged = classify_packaging(&record.content_path, &miss_set, patterns)
            == PackagingClass::Packaged;
        events.push(RequestEvent {
            time_ms: record.timestamp.timestamp_millis(),
            client_ip: record.client_ip,
            path: record.content_path.clone(),
            size_bytes: record.size_bytes,
            service,
            packaged,
        });
        logged.push(record.status);
    }
    Ok((events, logged, records))
}

pub fn simulate(
    common: &CommonArgs,
    input: &Path,
    input_format: &str,
    sort: bool,
    verify: bool,
    log_offset_min: i32,
) -> CmdResult {
    let config = RunConfig::load(common.config.as_deref()).or_config()?;
    let format = match input_format {
        "auto" => {
            if input.extension().is_some_and(|e| e == "csv") {
                "events"
            } else {
                "log"
            }
        }
        "events" | "log" => input_format,
        other => {
            return Err(CliError::Config(anyhow::anyhow!(
                "unknown input format: {other}"
            )))
        }
    };
    if !input.is_file() {
        return Err(CliError::Input(anyhow::anyhow!(
            "input not found: {}",
            input.display()
        )));
    }
    prepare_out(common)?;

    let (mut events, logged, original): (Vec<RequestEvent>, Option<Vec<HitStatus>>, Option<Vec<LogRecord>>) =
        if format == "events" {
            let events = read_events_path(input)
                .with_context(|| format!("reading events {}", input.display()))
                .or_input()?;
            (events, None, None)
        } else {
            let (events, logged, records) =
                events_from_log(&[input], &config.patterns).or_input()?;
            (events, Some(logged), Some(records))
        };
    if sort {
        events.sort_by_key(|e| e.time_ms);
    }

    let output = replay_with_options(
        &events,
        &config.topology,
        ReplayOptions {
            verify_invariants: verify,
        },
    )
    .or_input()?;

    // Simulated log: the input requests re-written with simulated status and
    // latency.
    let offset = FixedOffset::east_opt(log_offset_min * 60)
        .ok_or_else(|| CliError::Config(anyhow::anyhow!("offset out of range")))?;
    let mut log_out = BufWriter::new(File::create(common.out.join("simulated.log")).or_input()?);
    (|| -> anyhow::Result<()> {
        for (index, (event, outcome)) in events.iter().zip(&output.outcomes).enumerate() {
            let timestamp = match &original {
                Some(records) if !sort => records[index].timestamp,
                _ => offset
                    .timestamp_millis_opt(event.time_ms)
                    .single()
                    .ok_or_else(|| anyhow::anyhow!("event {index}: time out of range"))?,
            };
            let record = LogRecord {
                latency_ms: (outcome.latency_seconds * 1000.0).round() as u64,
                client_ip: event.client_ip,
                status: outcome.status,
                timestamp,
                content_path: event.path.clone(),
                size_bytes: event.size_bytes,
            };
            writeln!(log_out, "{}", format_record(&record))?;
        }
        log_out.flush()?;
        Ok(())
    })()
    .or_input()?;

    std::fs::write(
        common.out.join("sim_summary.json"),
        serde_json::to_string_pretty(&output.summary).expect("summary serialize"),
    )
    .or_input()?;

    let mut stdout_json = serde_json::json!({
        "command": "simulate",
        "events": output.summary.events,
        "hit_counts": output.summary.hit_counts,
        "byte_hit_ratio": output.summary.byte_hit_ratio,
    });
    if let Some(logged) = logged {
        if !sort {
            let sim: Vec<HitStatus> = output.outcomes.iter().map(|o| o.status).collect();
            let agreement = compare(&sim, &logged).map_err(anyhow::Error::msg).or_input()?;
            std::fs::write(
                common.out.join("agreement.json"),
                serde_json::to_string_pretty(&agreement).expect("agreement serialize"),
            )
            .or_input()?;
            stdout_json["agreement"] = serde_json::json!(agreement.agreement);
        }
    }
    emit_stdout(&stdout_json);
    Ok(())
}

// ------------------------------------------------------------- generate

pub fn generate(common: &CommonArgs) -> CmdResult {
    let mut config = RunConfig::load(common.config.as_deref()).or_config()?;
    if let Some(seed) = common.seed {
        config.workload.seed = seed;
    }
    prepare_out(common)?;

    let (events, ledger) = gen_trace(&config.workload).or_config()?;

    let events_file = File::create(common.out.join("events.csv")).or_input()?;
    write_events_csv(BufWriter::new(events_file), &events).or_input()?;

    std::fs::write(
        common.out.join("ledger.json"),
        serde_json::to_string_pretty(&ledger).expect("ledger serialize"),
    )
    .or_input()?;

    let mut geo_rows = String::new();
    for (cidr, isp, province, country) in config.workload.geo_table_rows() {
        geo_rows.push_str(&format!("{cidr},{isp},{province},{country}\n"));
    }
    std::fs::write(common.out.join("geo_table.csv"), geo_rows).or_input()?;

    emit_stdout(&serde_json::json!({
        "command": "generate",
        "events": ledger.total_events,
        "classes": ledger
            .classes
            .iter()
            .map(|c| {
                serde_json::json!({
                    "service": c.service,
                    "packaged": c.packaged,
                    "requests": c.request_count,
                })
            })
            .collect::<Vec<_>>(),
    }));
    Ok(())
}
