//! IP-pair traces: reading, writing, and cutting into time slices.
//!
//! Two on-disk formats:
//!
//! * text: CSV lines `timestamp_us,aip,bip` with dotted-quad addresses;
//!   lines starting with `#` are ignored.
//! * binary: 16-byte little-endian records: `u64` timestamp, `u32` aip,
//!   `u32` bip.
//!
//! Timestamps must be non-decreasing; readers reject regressions.

use std::fmt;
use std::io::{self, BufRead, ErrorKind, Read, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

pub const BINARY_RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("byte {offset}: truncated binary record")]
    Truncated { offset: u64 },
    #[error("record {index}: timestamp {found} precedes {previous}")]
    OutOfOrder {
        index: u64,
        previous: u64,
        found: u64,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpPairRecord {
    pub timestamp_us: u64,
    pub aip: Ipv4Addr,
    pub bip: Ipv4Addr,
}

impl IpPairRecord {
    pub fn new(timestamp_us: u64, aip: Ipv4Addr, bip: Ipv4Addr) -> Self {
        Self {
            timestamp_us,
            aip,
            bip,
        }
    }

    pub fn to_bytes(&self) -> [u8; BINARY_RECORD_LEN] {
        let mut out = [0u8; BINARY_RECORD_LEN];
        out[..8].copy_from_slice(&self.timestamp_us.to_le_bytes());
        out[8..12].copy_from_slice(&u32::from(self.aip).to_le_bytes());
        out[12..].copy_from_slice(&u32::from(self.bip).to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; BINARY_RECORD_LEN]) -> Self {
        Self {
            timestamp_us: u64::from_le_bytes(b[..8].try_into().unwrap()),
            aip: u32::from_le_bytes(b[8..12].try_into().unwrap()).into(),
            bip: u32::from_le_bytes(b[12..].try_into().unwrap()).into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    Text,
    Binary,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(TraceFormat::Text),
            "binary" => Ok(TraceFormat::Binary),
            other => Err(format!("unknown trace format {other:?}")),
        }
    }
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFormat::Text => "text",
            TraceFormat::Binary => "binary",
        })
    }
}

enum Source<R> {
    Text(csv::Reader<R>, csv::StringRecord),
    Binary(R, u64),
}

/// Streaming trace reader enforcing timestamp order.
pub struct TraceReader<R> {
    source: Source<R>,
    last_ts: Option<u64>,
    index: u64,
    failed: bool,
}

/// Opens a record stream over `input`.
pub fn read_trace<R: BufRead>(input: R, format: TraceFormat) -> TraceReader<R> {
    let source = match format {
        TraceFormat::Text => Source::Text(
            csv::ReaderBuilder::new()
                .has_headers(false)
                .comment(Some(b'#'))
                .trim(csv::Trim::All)
                .flexible(true)
                .from_reader(input),
            csv::StringRecord::new(),
        ),
        TraceFormat::Binary => Source::Binary(input, 0),
    };
    TraceReader {
        source,
        last_ts: None,
        index: 0,
        failed: false,
    }
}

fn parse_text(row: &csv::StringRecord) -> Result<IpPairRecord, String> {
    if row.len() != 3 {
        return Err(format!("expected 3 fields, found {}", row.len()));
    }
    let ts = row[0]
        .parse::<u64>()
        .map_err(|e| format!("timestamp {:?}: {e}", &row[0]))?;
    let aip = row[1]
        .parse::<Ipv4Addr>()
        .map_err(|e| format!("aip {:?}: {e}", &row[1]))?;
    let bip = row[2]
        .parse::<Ipv4Addr>()
        .map_err(|e| format!("bip {:?}: {e}", &row[2]))?;
    Ok(IpPairRecord::new(ts, aip, bip))
}

impl<R: Read> TraceReader<R> {
    fn next_raw(&mut self) -> Option<Result<IpPairRecord, TraceError>> {
        match &mut self.source {
            Source::Text(reader, row) => match reader.read_record(row) {
                Ok(false) => None,
                Ok(true) => {
                    let line = row.position().map_or(0, |p| p.line());
                    Some(parse_text(row).map_err(|message| TraceError::Parse { line, message }))
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    Some(Err(match e.into_kind() {
                        csv::ErrorKind::Io(io) => TraceError::Io(io),
                        other => TraceError::Parse {
                            line,
                            message: format!("{other:?}"),
                        },
                    }))
                }
            },
            Source::Binary(reader, offset) => {
                let mut buf = [0u8; BINARY_RECORD_LEN];
                let mut filled = 0;
                while filled < BINARY_RECORD_LEN {
                    match reader.read(&mut buf[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == ErrorKind::Interrupted => {}
                        Err(e) => return Some(Err(e.into())),
                    }
                }
                match filled {
                    0 => None,
                    BINARY_RECORD_LEN => {
                        *offset += BINARY_RECORD_LEN as u64;
                        Some(Ok(IpPairRecord::from_bytes(&buf)))
                    }
                    _ => Some(Err(TraceError::Truncated { offset: *offset })),
                }
            }
        }
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<IpPairRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_raw()?.and_then(|rec| {
            if let Some(previous) = self.last_ts {
                if rec.timestamp_us < previous {
                    return Err(TraceError::OutOfOrder {
                        index: self.index,
                        previous,
                        found: rec.timestamp_us,
                    });
                }
            }
            self.last_ts = Some(rec.timestamp_us);
            Ok(rec)
        });
        self.index += 1;
        self.failed = item.is_err();
        Some(item)
    }
}

pub fn write_trace<'a, W, I>(out: W, format: TraceFormat, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a IpPairRecord>,
{
    let mut out = io::BufWriter::new(out);
    for rec in records {
        match format {
            TraceFormat::Text => {
                writeln!(out, "{},{},{}", rec.timestamp_us, rec.aip, rec.bip)?;
            }
            TraceFormat::Binary => out.write_all(&rec.to_bytes())?,
        }
    }
    out.flush()
}

/// Slice index of `timestamp_us` for a trace whose slice 0 starts at `t0_us`.
pub fn slice_of(timestamp_us: u64, t0_us: u64, slice_duration_us: u64) -> u64 {
    (timestamp_us - t0_us) / slice_duration_us
}

/// Origin of slice 0: the first timestamp truncated to the slice grid.
pub fn slice_origin(first_timestamp_us: u64, slice_duration_us: u64) -> u64 {
    first_timestamp_us - first_timestamp_us % slice_duration_us
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceBatch {
    pub slice: u64,
    pub records: Vec<IpPairRecord>,
}

impl SliceBatch {
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.records
            .iter()
            .map(|r| (u32::from(r.aip), u32::from(r.bip)))
            .collect()
    }
}

/// Groups an ordered record stream into consecutive slices, emitting empty
/// batches for slices with no traffic.
pub struct SliceStream<I> {
    records: I,
    slice_duration_us: u64,
    t0_us: Option<u64>,
    next_slice: u64,
    pending: Option<(u64, IpPairRecord)>,
    done: bool,
}

pub fn slice_stream<I>(records: I, slice_duration_us: u64) -> SliceStream<I::IntoIter>
where
    I: IntoIterator<Item = Result<IpPairRecord, TraceError>>,
{
    assert!(slice_duration_us > 0, "slice duration must be positive");
    SliceStream {
        records: records.into_iter(),
        slice_duration_us,
        t0_us: None,
        next_slice: 0,
        pending: None,
        done: false,
    }
}

impl<I> SliceStream<I> {
    pub fn t0_us(&self) -> Option<u64> {
        self.t0_us
    }
}

impl<I> Iterator for SliceStream<I>
where
    I: Iterator<Item = Result<IpPairRecord, TraceError>>,
{
    type Item = Result<SliceBatch, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let slice = self.next_slice;
        let mut records = Vec::new();
        loop {
            let (s, rec) = match self.pending.take() {
                Some(p) => p,
                None if self.done => break,
                None => match self.records.next() {
                    None => {
                        self.done = true;
                        break;
                    }
                    Some(Err(e)) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                    Some(Ok(rec)) => {
                        let dur = self.slice_duration_us;
                        let t0 = *self
                            .t0_us
                            .get_or_insert_with(|| slice_origin(rec.timestamp_us, dur));
                        (slice_of(rec.timestamp_us, t0, dur), rec)
                    }
                },
            };
            if s == slice {
                records.push(rec);
            } else {
                self.pending = Some((s, rec));
                break;
            }
        }
        if records.is_empty() && self.pending.is_none() {
            return None;
        }
        self.next_slice += 1;
        Some(Ok(SliceBatch { slice, records }))
    }
}
