//! On-disk formats. Record files are JSON Lines: a header object naming the
//! format, schema version and column order, then one record per line. Single
//! documents (statistics, vocabularies, checkpoints, reports) are pretty
//! printed JSON. Floats are written in shortest round-trip form and parsed
//! exactly, so every file round-trips bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shortfall_core::data::{
    LaneKey, LaneSeries, NormalizationStats, WindowSample, FEATURE_NAMES, FLAT_LEN, NUM_FEATURES, WINDOW_LEN,
};
use shortfall_core::model::GroupIds;
use shortfall_core::survival::ObservedOutcome;
use shortfall_core::synth::ManifestEntry;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const LANES_FORMAT: &str = "shortfall-lanes";
pub const WINDOWS_FORMAT: &str = "shortfall-windows";
pub const MANIFEST_FORMAT: &str = "shortfall-manifest";
pub const STATS_FORMAT: &str = "shortfall-normalization";
pub const EPOCHS_FORMAT: &str = "shortfall-epochs";
pub const PREDICTIONS_FORMAT: &str = "shortfall-predictions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_len: Option<usize>,
}

impl Header {
    fn new(format: &str, columns: bool, window_len: Option<usize>) -> Self {
        Self {
            format: format.into(),
            schema_version: SCHEMA_VERSION,
            columns: if columns { FEATURE_NAMES.iter().map(|s| s.to_string()).collect() } else { Vec::new() },
            window_len,
        }
    }

    fn check(&self, path: &Path, format: &str, columns: bool, window_len: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(Error::format(path, 1, m));
        if self.format != format {
            return bad(format!("expected a `{format}` file, found `{}`", self.format));
        }
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if columns {
            if self.columns.len() != NUM_FEATURES {
                return bad(format!("expected {NUM_FEATURES} columns, header lists {}", self.columns.len()));
            }
            for (i, (got, want)) in self.columns.iter().zip(FEATURE_NAMES).enumerate() {
                if got != want {
                    return bad(format!("column {} must be `{want}`, found `{got}`", i + 1));
                }
            }
        }
        if self.window_len != window_len {
            return bad(format!("window length {:?} does not match the expected {:?}", self.window_len, window_len));
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    write_line(&mut out, path, header)?;
    for r in records {
        write_line(&mut out, path, &r)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses the header and every record, reporting 1-based line numbers.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Header, Vec<(usize, T)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            return Err(Error::format(path, n, "blank line"));
        }
        if header.is_none() {
            header = Some(
                serde_json::from_str::<Header>(&line)
                    .map_err(|e| Error::format(path, n, format!("bad header: {e}")))?,
            );
        } else {
            records.push((n, serde_json::from_str(&line).map_err(|e| Error::format(path, n, e.to_string()))?));
        }
    }
    let header = header.ok_or_else(|| Error::format(path, 1, "missing header line"))?;
    Ok((header, records))
}

/// Writes a JSON Lines file of arbitrary records under a `format` header.
pub fn write_records<T: Serialize>(path: &Path, format: &str, records: impl IntoIterator<Item = T>) -> Result<()> {
    write_jsonl(path, &Header::new(format, false, None), records)
}

/// Reads a file written by [`write_records`].
pub fn read_records<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>> {
    let (header, records) = read_jsonl::<T>(path)?;
    header.check(path, format, false, None)?;
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneRecord {
    site: String,
    plant: String,
    part: String,
    start_day: String,
    event_day: Option<u32>,
    last_observed_day: u32,
    features: Vec<Vec<f64>>,
}

pub fn write_lanes(path: &Path, lanes: &[LaneSeries]) -> Result<()> {
    write_jsonl(
        path,
        &Header::new(LANES_FORMAT, true, None),
        lanes.iter().map(|l| LaneRecord {
            site: l.key.site.clone(),
            plant: l.key.plant.clone(),
            part: l.key.part.clone(),
            start_day: l.start_day.clone(),
            event_day: l.event_day,
            last_observed_day: l.last_observed_day,
            features: l.features.iter().map(|r| r.to_vec()).collect(),
        }),
    )
}

pub fn read_lanes(path: &Path) -> Result<Vec<LaneSeries>> {
    let (header, records) = read_jsonl::<LaneRecord>(path)?;
    header.check(path, LANES_FORMAT, true, None)?;
    records
        .into_iter()
        .map(|(n, r)| {
            let mut features = Vec::with_capacity(r.features.len());
            for (d, row) in r.features.iter().enumerate() {
                let row: [f64; NUM_FEATURES] = row.as_slice().try_into().map_err(|_| {
                    Error::format(
                        path,
                        n,
                        format!("day {}: expected {NUM_FEATURES} columns, found {}", d + 1, row.len()),
                    )
                })?;
                features.push(row);
            }
            let lane = LaneSeries {
                key: LaneKey::new(r.site, r.plant, r.part),
                start_day: r.start_day,
                features,
                event_day: r.event_day,
                last_observed_day: r.last_observed_day,
            };
            lane.validate().map_err(|e| Error::format(path, n, e.to_string()))?;
            Ok(lane)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    site: String,
    plant: String,
    part: String,
    ids: [usize; 3],
    end_day: u32,
    t: u32,
    event: bool,
    flat: Vec<f64>,
}

pub fn write_samples(path: &Path, samples: &[WindowSample]) -> Result<()> {
    write_jsonl(
        path,
        &Header::new(WINDOWS_FORMAT, true, Some(WINDOW_LEN)),
        samples.iter().map(|s| SampleRecord {
            site: s.key.site.clone(),
            plant: s.key.plant.clone(),
            part: s.key.part.clone(),
            ids: s.ids.as_array(),
            end_day: s.end_day,
            t: s.outcome.t,
            event: s.outcome.event,
            flat: s.flat.clone(),
        }),
    )
}

pub fn read_samples(path: &Path) -> Result<Vec<WindowSample>> {
    let (header, records) = read_jsonl::<SampleRecord>(path)?;
    header.check(path, WINDOWS_FORMAT, true, Some(WINDOW_LEN))?;
    records
        .into_iter()
        .map(|(n, r)| {
            if r.flat.len() != FLAT_LEN {
                return Err(Error::format(
                    path,
                    n,
                    format!("expected {FLAT_LEN} window values, found {}", r.flat.len()),
                ));
            }
            if let Some(v) = r.flat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::format(path, n, format!("normalized value {v} outside [0, 1]")));
            }
            let outcome = ObservedOutcome::new(r.t, r.event).map_err(|e| Error::format(path, n, e.to_string()))?;
            Ok(WindowSample {
                key: LaneKey::new(r.site, r.plant, r.part),
                ids: GroupIds { site: r.ids[0], plant: r.ids[1], part: r.ids[2] },
                end_day: r.end_day,
                flat: r.flat,
                outcome,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_jsonl(path, &Header::new(MANIFEST_FORMAT, false, None), entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let (header, records) = read_jsonl::<ManifestEntry>(path)?;
    header.check(path, MANIFEST_FORMAT, false, None)?;
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub format: String,
    pub schema_version: u32,
    pub columns: Vec<String>,
    pub stats: NormalizationStats,
}

pub fn write_stats(path: &Path, stats: &NormalizationStats) -> Result<()> {
    write_json(
        path,
        &StatsFile {
            format: STATS_FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            stats: stats.clone(),
        },
    )
}

pub fn read_stats(path: &Path) -> Result<NormalizationStats> {
    let file: StatsFile = read_json(path)?;
    let header =
        Header { format: file.format, schema_version: file.schema_version, columns: file.columns, window_len: None };
    header.check(path, STATS_FORMAT, true, None)?;
    file.stats.validate()?;
    Ok(file.stats)
}
