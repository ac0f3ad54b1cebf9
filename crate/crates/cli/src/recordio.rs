//! CSV codecs for the pipeline's intermediate files.
//!
//! The classified file carries the six record fields (timestamp in the
//! canonical unbracketed form) plus the two labels. Reading rebuilds the
//! canonical log line and reuses the log parser, so the CSV accepts exactly
//! the records the wire format can represent.

use std::io::{Read, Write};

use anyhow::Context;

use cdntrace_core::classify::{ClassifiedRecord, PackagingClass, ServiceClass};
use cdntrace_core::geoip::GeoEntry;
use cdntrace_core::logline::{parse_line, LogRecord};

pub const CLASSIFIED_HEADER: [&str; 8] = [
    "latency_s",
    "ip",
    "status",
    "timestamp",
    "path",
    "size_bytes",
    "service",
    "packaging",
];

fn record_fields(record: &LogRecord) -> [String; 6] {
    [
        format!("{}.{:03}", record.latency_ms / 1000, record.latency_ms % 1000),
        record.client_ip.to_string(),
        record.status.wire().to_owned(),
        record
            .timestamp
            .format("%d/%b/%Y:%H:%M:%S %z")
            .to_string(),
        record.content_path.clone(),
        record.size_bytes.to_string(),
    ]
}

fn record_from_fields(fields: &[&str]) -> anyhow::Result<LogRecord> {
    let line = format!(
        "{}, {}, {}, [{}], {}, {}",
        fields[0], fields[1], fields[2], fields[3], fields[4], fields[5]
    );
    parse_line(&line).with_context(|| format!("row does not form a valid record: {line}"))
}

pub fn write_classified<W: Write>(
    writer: &mut csv::Writer<W>,
    classified: &ClassifiedRecord,
) -> csv::Result<()> {
    let base = record_fields(&classified.record);
    let mut row: Vec<&str> = base.iter().map(String::as_str).collect();
    row.push(classified.service.as_str());
    row.push(classified.packaging.as_str());
    writer.write_record(row)
}

pub fn read_classified<R: Read>(reader: R) -> anyhow::Result<Vec<ClassifiedRecord>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut rows = Vec::new();
    for result in csv_reader.records() {
        let raw = result?;
        let line = raw.position().map(|p| p.line()).unwrap_or(0);
        if raw.len() != 8 {
            anyhow::bail!("line {line}: expected 8 columns, found {}", raw.len());
        }
        let fields: Vec<&str> = raw.iter().collect();
        let record = record_from_fields(&fields[..6]).with_context(|| format!("line {line}"))?;
        let service: ServiceClass = fields[6]
            .parse()
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("line {line}"))?;
        let packaging: PackagingClass = fields[7]
            .parse()
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("line {line}"))?;
        rows.push(ClassifiedRecord {
            record,
            service,
            packaging,
        });
    }
    Ok(rows)
}

pub const ENRICHED_HEADER: [&str; 9] = [
    "latency_s",
    "ip",
    "status",
    "timestamp",
    "path",
    "size_bytes",
    "isp",
    "province",
    "country",
];

/// Geo columns: the resolved values, `!` for cached-invalid IPs, empty for
/// IPs that could not be resolved in this run.
pub fn write_enriched<W: Write>(
    writer: &mut csv::Writer<W>,
    record: &LogRecord,
    geo: Option<&GeoEntry>,
) -> csv::Result<()> {
    let base = record_fields(record);
    let (isp, province, country) = match geo {
        Some(GeoEntry::Valid(info)) => {
            (info.isp.as_str(), info.province.as_str(), info.country.as_str())
        }
        Some(GeoEntry::Invalid) => ("!", "!", "!"),
        None => ("", "", ""),
    };
    let mut row: Vec<&str> = base.iter().map(String::as_str).collect();
    row.extend([isp, province, country]);
    writer.write_record(row)
}
