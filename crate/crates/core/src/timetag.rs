//! Time-tag records and their on-disk formats.
//!
//! # Binary layout (version 1, little endian)
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"FFSIMTT\0"
//! 8       4     version (u32) = 1
//! 12      4     reserved, zero
//! 16      12*n  records: channel (u8), 3 reserved zero bytes, timestamp_ps (u64)
//! ```
//!
//! The CSV form is a `channel,timestamp_ps` header followed by one record per
//! line; the channel column holds the numeric id.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"FFSIMTT\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 12;

/// Picoseconds since the start of a run.
pub type Picos = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    HeraldTrigger = 0,
    HbtA = 1,
    HbtB = 2,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::HeraldTrigger, Channel::HbtA, Channel::HbtB];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Channel::HeraldTrigger),
            1 => Ok(Channel::HbtA),
            2 => Ok(Channel::HbtB),
            other => Err(Error::format(format!("unknown channel id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::HeraldTrigger => "herald",
            Channel::HbtA => "hbt_a",
            Channel::HbtB => "hbt_b",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u8>() {
            return Channel::from_id(id);
        }
        match s.to_ascii_lowercase().as_str() {
            "herald" | "herald_trigger" => Ok(Channel::HeraldTrigger),
            "hbt_a" | "a" => Ok(Channel::HbtA),
            "hbt_b" | "b" => Ok(Channel::HbtB),
            other => Err(Error::format(format!("unknown channel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTagRecord {
    pub timestamp: Picos,
    pub channel: Channel,
}

impl TimeTagRecord {
    pub fn new(channel: Channel, timestamp: Picos) -> Self {
        Self { timestamp, channel }
    }
}

/// A finalized stream: records ordered by `(timestamp, channel)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStream {
    records: Vec<TimeTagRecord>,
}

impl TagStream {
    /// Sorts `records` into stream order.
    pub fn new(mut records: Vec<TimeTagRecord>) -> Self {
        records.sort_unstable();
        Self { records }
    }

    pub(crate) fn from_sorted(records: Vec<TimeTagRecord>) -> Self {
        debug_assert!(records.windows(2).all(|w| w[0] <= w[1]));
        Self { records }
    }

    pub fn records(&self) -> &[TimeTagRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted timestamps of one channel.
    pub fn times(&self, channel: Channel) -> Vec<Picos> {
        self.records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| r.timestamp)
            .collect()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    pub fn last_timestamp(&self) -> Option<Picos> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn encode_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&[0u8; 4])?;
        let mut buf = [0u8; RECORD_LEN];
        for r in &self.records {
            buf[0] = r.channel.id();
            buf[4..].copy_from_slice(&r.timestamp.to_le_bytes());
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.records.len());
        self.encode_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn encode_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["channel", "timestamp_ps"])?;
        for r in &self.records {
            writer.write_record([r.channel.id().to_string(), r.timestamp.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Decodes the binary format. Records need not be sorted.
pub fn decode_binary(bytes: &[u8]) -> Result<TagStream> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            "tag file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::format("bad magic: not a time-tag file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("slice of 4"));
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported tag format version {version}")));
    }
    if bytes[12..16] != [0; 4] {
        return Err(Error::format("reserved header bytes must be zero"));
    }
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(format!(
            "record section of {} bytes is not a multiple of {RECORD_LEN}",
            body.len()
        )));
    }
    let records = body
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            if chunk[1..4] != [0; 3] {
                return Err(Error::format(format!("record {i}: reserved bytes must be zero")));
            }
            let channel = Channel::from_id(chunk[0])
                .map_err(|e| Error::format(format!("record {i}: {e}")))?;
            let timestamp = u64::from_le_bytes(chunk[4..12].try_into().expect("slice of 8"));
            Ok(TimeTagRecord { timestamp, channel })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TagStream::new(records))
}

pub fn decode_csv<R: Read>(input: R) -> Result<TagStream> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "channel" || &headers[1] != "timestamp_ps" {
        return Err(Error::format("CSV header must be 'channel,timestamp_ps'"));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::format(format!("CSV row {}: expected 2 fields", line + 1)));
        }
        let channel: Channel = row[0].parse()?;
        let timestamp: Picos = row[1]
            .parse()
            .map_err(|_| Error::format(format!("CSV row {}: bad timestamp '{}'", line + 1, &row[1])))?;
        records.push(TimeTagRecord { timestamp, channel });
    }
    Ok(TagStream::new(records))
}

/// Decodes either format, recognising the binary one by its magic.
pub fn decode_any(bytes: &[u8]) -> Result<TagStream> {
    if bytes.starts_with(&MAGIC) {
        decode_binary(bytes)
    } else {
        decode_csv(bytes)
    }
}
