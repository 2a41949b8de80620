//! CSV ingestion and emission of skeleton / feature streams.
//!
//! Stream file (skeleton): header `seq_id,frame_idx,joint_idx,x,y,z`.
//! Stream file (generic features): header `seq_id,frame_idx,f0,...,f{D-1}`.
//! Manifest file: header `seq_id,identity,split`, split in {train,probe,gallery}.
//! Rows may appear in any order; key triples must be unique. Floats are written
//! with Rust's shortest round-trip formatting, so write-then-load is exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;

use super::{window_starts, Dataset, SkeletonSequence, Split};

/// Stream file layout used by [`write_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamSchema {
    /// `seq_id,frame_idx,joint_idx,x,y,z` (requires K = 3J).
    Skeleton,
    /// `seq_id,frame_idx,f0,...,f{D-1}`.
    Features,
}

/// Non-fatal bookkeeping from [`load_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Streams present in both files.
    pub streams: usize,
    /// Windows (sequences) produced.
    pub windows: usize,
    /// Streams shorter than `seq_len`, skipped with a warning.
    pub skipped_short: usize,
    /// Manifest rows whose stream never appeared in the stream file.
    pub manifest_unused: usize,
}

fn parse_err(file: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field<T: std::str::FromStr>(
    file: &Path,
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(file, record_line(record), format!("missing {what} column")))?;
    raw.trim().parse::<T>().map_err(|_| {
        parse_err(
            file,
            record_line(record),
            format!("invalid {what} '{raw}'"),
        )
    })
}

struct ManifestEntry {
    identity: Option<u32>,
    split: Split,
    used: bool,
}

fn load_manifest(path: &Path) -> Result<BTreeMap<String, ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("cannot open manifest {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let expect = ["seq_id", "identity", "split"];
    if headers.iter().map(str::trim).ne(expect) {
        return Err(Error::Format(format!(
            "manifest {} must have header seq_id,identity,split",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record_line(&record);
        let seq_id: String = parse_field(path, &record, 0, "seq_id")?;
        let raw_identity = record.get(1).unwrap_or("").trim();
        let identity = if raw_identity.is_empty() {
            None
        } else {
            Some(raw_identity.parse::<u32>().map_err(|_| {
                parse_err(path, line, format!("invalid identity '{raw_identity}'"))
            })?)
        };
        let split = Split::parse(record.get(2).unwrap_or("").trim())
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        if out
            .insert(
                seq_id.clone(),
                ManifestEntry {
                    identity,
                    split,
                    used: false,
                },
            )
            .is_some()
        {
            return Err(parse_err(
                path,
                line,
                format!("duplicate manifest entry for '{seq_id}'"),
            ));
        }
    }
    Ok(out)
}

// Raw frames per stream, keyed by frame index (rows may arrive in any order).
type StreamFrames = BTreeMap<String, BTreeMap<u64, Vec<Option<f64>>>>;

fn load_skeleton_stream(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<StreamFrames> {
    let mut streams: StreamFrames = BTreeMap::new();
    let mut joint_count: BTreeMap<String, usize> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record_line(&record);
        if record.len() != 6 {
            return Err(parse_err(
                path,
                line,
                format!("expected 6 columns, found {}", record.len()),
            ));
        }
        let seq_id: String = parse_field(path, &record, 0, "seq_id")?;
        let frame_idx: u64 = parse_field(path, &record, 1, "frame_idx")?;
        let joint_idx: usize = parse_field(path, &record, 2, "joint_idx")?;
        let coords = [
            parse_field::<f64>(path, &record, 3, "x")?,
            parse_field::<f64>(path, &record, 4, "y")?,
            parse_field::<f64>(path, &record, 5, "z")?,
        ];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
        let j = joint_count.entry(seq_id.clone()).or_insert(0);
        *j = (*j).max(joint_idx + 1);
        let frame = streams
            .entry(seq_id.clone())
            .or_default()
            .entry(frame_idx)
            .or_default();
        let need = 3 * (joint_idx + 1);
        if frame.len() < need {
            frame.resize(need, None);
        }
        for (off, &v) in coords.iter().enumerate() {
            let slot = &mut frame[3 * joint_idx + off];
            if slot.is_some() {
                return Err(parse_err(
                    path,
                    line,
                    format!("duplicate row for ({seq_id}, frame {frame_idx}, joint {joint_idx})"),
                ));
            }
            *slot = Some(v);
        }
    }
    // Pad every frame of a stream to its full joint count.
    for (seq_id, frames) in streams.iter_mut() {
        let width = 3 * joint_count[seq_id];
        for frame in frames.values_mut() {
            if frame.len() < width {
                frame.resize(width, None);
            }
        }
    }
    Ok(streams)
}

fn load_feature_stream(
    path: &Path,
    rdr: &mut csv::Reader<std::fs::File>,
    dim: usize,
) -> Result<StreamFrames> {
    let mut streams: StreamFrames = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record_line(&record);
        if record.len() != dim + 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", dim + 2, record.len()),
            ));
        }
        let seq_id: String = parse_field(path, &record, 0, "seq_id")?;
        let frame_idx: u64 = parse_field(path, &record, 1, "frame_idx")?;
        let mut values = Vec::with_capacity(dim);
        for c in 0..dim {
            let v: f64 = parse_field(path, &record, c + 2, &format!("f{c}"))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite feature value"));
            }
            values.push(Some(v));
        }
        if streams
            .entry(seq_id.clone())
            .or_default()
            .insert(frame_idx, values)
            .is_some()
        {
            return Err(parse_err(
                path,
                line,
                format!("duplicate row for ({seq_id}, frame {frame_idx})"),
            ));
        }
    }
    Ok(streams)
}

/// Loads a stream + manifest pair and windows every stream into sequences of
/// `seq_len` frames taken every `stride` frames. The stream schema (skeleton
/// or generic features) is detected from the header.
pub fn load_dataset(
    stream_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    seq_len: usize,
    stride: usize,
) -> Result<(Dataset, LoadStats)> {
    let stream_path = stream_path.as_ref();
    let manifest_path = manifest_path.as_ref();
    if seq_len < 1 || stride < 1 {
        return Err(Error::InvalidArgument(
            "seq_len and stride must be >= 1".into(),
        ));
    }
    let mut manifest = load_manifest(manifest_path)?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(stream_path)
        .map_err(|e| Error::Format(format!("cannot open stream {}: {e}", stream_path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(stream_path, 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let streams = if headers == ["seq_id", "frame_idx", "joint_idx", "x", "y", "z"] {
        load_skeleton_stream(stream_path, &mut rdr)?
    } else if headers.len() > 2
        && headers[0] == "seq_id"
        && headers[1] == "frame_idx"
        && headers[2..]
            .iter()
            .enumerate()
            .all(|(i, h)| *h == format!("f{i}"))
    {
        load_feature_stream(stream_path, &mut rdr, headers.len() - 2)?
    } else {
        return Err(Error::Format(format!(
            "unrecognized stream header in {}: {:?}",
            stream_path.display(),
            headers
        )));
    };

    let mut stats = LoadStats::default();
    let mut feature_dim: Option<usize> = None;
    let mut train = Vec::new();
    let mut probe = Vec::new();
    let mut gallery = Vec::new();

    for (seq_id, frames_by_idx) in &streams {
        let entry = manifest.get_mut(seq_id).ok_or_else(|| {
            Error::Format(format!(
                "stream '{seq_id}' has no manifest entry in {}",
                manifest_path.display()
            ))
        })?;
        entry.used = true;
        let (identity, split) = (entry.identity, entry.split);

        // Materialize frames in frame-index order; every cell must be present.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(frames_by_idx.len());
        for (frame_idx, cells) in frames_by_idx {
            let mut row = Vec::with_capacity(cells.len());
            for (c, cell) in cells.iter().enumerate() {
                row.push(cell.ok_or_else(|| {
                    Error::Format(format!(
                        "stream '{seq_id}' frame {frame_idx} is missing value {c}"
                    ))
                })?);
            }
            rows.push(row);
        }
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Format(format!(
                "stream '{seq_id}' has frames of differing widths"
            )));
        }
        match feature_dim {
            None => feature_dim = Some(k),
            Some(expect) if expect != k => {
                return Err(Error::Format(format!(
                    "stream '{seq_id}' has K={k}, but earlier streams have K={expect}"
                )));
            }
            _ => {}
        }

        stats.streams += 1;
        let starts = window_starts(rows.len(), seq_len, stride);
        if starts.is_empty() {
            stats.skipped_short += 1;
            continue;
        }
        let single = starts.len() == 1 && starts[0] == 0;
        for &start in &starts {
            let window: Vec<Vec<f64>> = rows[start..start + seq_len].to_vec();
            let id = if single {
                seq_id.clone()
            } else {
                format!("{seq_id}#w{start}")
            };
            let seq = SkeletonSequence::new(id, Mat::from_rows(&window), identity, split)?;
            stats.windows += 1;
            match split {
                Split::Train => train.push(seq),
                Split::Probe => probe.push(seq),
                Split::Gallery => gallery.push(seq),
            }
        }
    }
    stats.manifest_unused = manifest.values().filter(|e| !e.used).count();

    let dataset = Dataset::new(train, probe, gallery)?;
    Ok((dataset, stats))
}

/// Writes a dataset back to the stream/manifest CSV pair. Every sequence is
/// emitted as its own stream, so reloading with the same `seq_len` and any
/// stride reproduces the dataset exactly.
pub fn write_dataset(
    dataset: &Dataset,
    stream_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    schema: StreamSchema,
) -> Result<()> {
    let stream_path = stream_path.as_ref();
    let manifest_path = manifest_path.as_ref();
    let k = dataset.feature_dim();
    if schema == StreamSchema::Skeleton && k % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "skeleton schema requires K divisible by 3, got K={k}"
        )));
    }

    let mut stream = std::io::BufWriter::new(std::fs::File::create(stream_path)?);
    match schema {
        StreamSchema::Skeleton => writeln!(stream, "seq_id,frame_idx,joint_idx,x,y,z")?,
        StreamSchema::Features => {
            let cols: Vec<String> = (0..k).map(|c| format!("f{c}")).collect();
            writeln!(stream, "seq_id,frame_idx,{}", cols.join(","))?;
        }
    }
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(manifest_path)?);
    writeln!(manifest, "seq_id,identity,split")?;

    let all = dataset
        .train
        .iter()
        .chain(&dataset.probe)
        .chain(&dataset.gallery);
    for seq in all {
        let identity = seq
            .stored_identity()
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            manifest,
            "{},{},{}",
            seq.seq_id(),
            identity,
            seq.split().as_str()
        )?;
        for t in 0..seq.len() {
            let row = seq.frames().row(t);
            match schema {
                StreamSchema::Skeleton => {
                    for j in 0..k / 3 {
                        writeln!(
                            stream,
                            "{},{},{},{},{},{}",
                            seq.seq_id(),
                            t,
                            j,
                            row[3 * j],
                            row[3 * j + 1],
                            row[3 * j + 2]
                        )?;
                    }
                }
                StreamSchema::Features => {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(stream, "{},{},{}", seq.seq_id(), t, cells.join(","))?;
                }
            }
        }
    }
    stream.flush()?;
    manifest.flush()?;
    Ok(())
}
