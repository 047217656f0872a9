//! Time tags and their on-disk formats.
//!
//! Binary records are 16 bytes, little-endian: u64 time in ps, u8 channel,
//! u8 setting bit, 6 reserved zero bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quantum::Outcome;

pub const RECORD_BYTES: usize = 16;
/// Largest representable time, ps.
pub const MAX_TIME_PS: u64 = u64::MAX >> 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Outcome +1.
    Transmitted,
    /// Outcome −1.
    Reflected,
}

impl Channel {
    pub fn index(self) -> u8 {
        match self {
            Channel::Transmitted => 0,
            Channel::Reflected => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Channel::Transmitted),
            1 => Some(Channel::Reflected),
            _ => None,
        }
    }

    pub fn outcome(self) -> Outcome {
        match self {
            Channel::Transmitted => Outcome::Plus,
            Channel::Reflected => Outcome::Minus,
        }
    }

    pub fn from_outcome(o: Outcome) -> Self {
        match o {
            Outcome::Plus => Channel::Transmitted,
            Outcome::Minus => Channel::Reflected,
        }
    }
}

/// Packed `time_ps << 2 | channel << 1 | setting`; ordering follows time.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag(u64);

impl TimeTag {
    pub fn new(time_ps: u64, channel: Channel, setting: u8) -> Self {
        debug_assert!(time_ps <= MAX_TIME_PS);
        TimeTag(time_ps << 2 | (channel.index() as u64) << 1 | (setting as u64 & 1))
    }

    pub fn time_ps(self) -> u64 {
        self.0 >> 2
    }

    pub fn channel(self) -> Channel {
        if self.0 & 2 == 0 {
            Channel::Transmitted
        } else {
            Channel::Reflected
        }
    }

    pub fn setting(self) -> u8 {
        (self.0 & 1) as u8
    }

    pub fn outcome(self) -> Outcome {
        self.channel().outcome()
    }

    pub fn with_time(self, time_ps: u64) -> Self {
        TimeTag(time_ps << 2 | (self.0 & 3))
    }
}

impl fmt::Debug for TimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TimeTag({} ps, {:?}, setting {})",
            self.time_ps(),
            self.channel(),
            self.setting()
        )
    }
}

pub fn is_sorted(tags: &[TimeTag]) -> bool {
    tags.windows(2).all(|w| w[0] <= w[1])
}

pub fn write_tags(path: &Path, tags: &[TimeTag]) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_tags_to(&mut w, tags)?;
    w.flush()?;
    Ok(())
}

pub fn write_tags_to<W: Write + ?Sized>(w: &mut W, tags: &[TimeTag]) -> Result<()> {
    let mut record = [0u8; RECORD_BYTES];
    for tag in tags {
        record[..8].copy_from_slice(&tag.time_ps().to_le_bytes());
        record[8] = tag.channel().index();
        record[9] = tag.setting();
        w.write_all(&record)?;
    }
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<Vec<TimeTag>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len() as usize;
    if !len.is_multiple_of(RECORD_BYTES) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: len / RECORD_BYTES + 1,
            message: format!("file size {len} is not a multiple of {RECORD_BYTES} bytes"),
        });
    }
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut tags = Vec::with_capacity(len / RECORD_BYTES);
    let mut record = [0u8; RECORD_BYTES];
    for index in 0..len / RECORD_BYTES {
        r.read_exact(&mut record)?;
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: index + 1,
            message,
        };
        let time_ps = u64::from_le_bytes(record[..8].try_into().expect("8-byte slice"));
        if time_ps > MAX_TIME_PS {
            return Err(fail(format!("time {time_ps} ps out of range")));
        }
        let channel = Channel::from_index(record[8])
            .ok_or_else(|| fail(format!("invalid channel byte {}", record[8])))?;
        if record[9] > 1 {
            return Err(fail(format!("invalid setting byte {}", record[9])));
        }
        tags.push(TimeTag::new(time_ps, channel, record[9]));
    }
    Ok(tags)
}

pub fn write_csv(path: &Path, tags: &[TimeTag]) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_csv_to(&mut w, tags)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write + ?Sized>(w: &mut W, tags: &[TimeTag]) -> Result<()> {
    writeln!(w, "time_ps,channel,setting")?;
    for t in tags {
        writeln!(w, "{},{},{}", t.time_ps(), t.channel().index(), t.setting())?;
    }
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TimeTag>> {
    let r = BufReader::new(File::open(path)?);
    let mut tags = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (i == 0 && trimmed.starts_with("time_ps")) {
            continue;
        }
        let fail = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: message.to_string(),
        };
        let mut fields = trimmed.split(',').map(str::trim);
        let (Some(t), Some(c), Some(s), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(fail("expected three fields: time_ps,channel,setting"));
        };
        let time_ps: u64 = t
            .parse()
            .map_err(|_| fail("time_ps is not an unsigned integer"))?;
        let channel = c
            .parse::<u8>()
            .ok()
            .and_then(Channel::from_index)
            .ok_or_else(|| fail("channel must be 0 or 1"))?;
        let setting = s
            .parse::<u8>()
            .ok()
            .filter(|&b| b <= 1)
            .ok_or_else(|| fail("setting must be 0 or 1"))?;
        if time_ps > MAX_TIME_PS {
            return Err(fail("time_ps out of range"));
        }
        tags.push(TimeTag::new(time_ps, channel, setting));
    }
    Ok(tags)
}

/// `key = value` lines, sorted by key.
pub fn write_meta(path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in meta {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected 'key = value'".into(),
        })?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}
