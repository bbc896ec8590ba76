//! Recorded-stream and annotation files.
//!
//! * `.csv`: first line `channels,rate_hz`, then one row per sample tick with
//!   one column per channel.
//! * `.bin`: 16-byte header (`u64` channels, `u64` rate in Hz, little-endian),
//!   then `f32` little-endian samples, tick by tick.
//! * annotations: TSV, one `start_s<TAB>end_s` line per event, sorted.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_sorted_disjoint, EventInterval, SampleBlock};
use crate::error::{Error, Result};

fn is_bin(path: &Path) -> Result<bool> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(false),
        Some("bin") => Ok(true),
        _ => Err(Error::config(format!("{}: stream files must end in .csv or .bin", path.display()))),
    }
}

pub fn read_stream(path: &Path) -> Result<SampleBlock> {
    let file = BufReader::new(File::open(path)?);
    if is_bin(path)? {
        read_bin(file)
    } else {
        read_csv(file)
    }
}

pub fn write_stream(path: &Path, block: &SampleBlock) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if is_bin(path)? {
        write_bin(&mut out, block)?;
    } else {
        write_csv(&mut out, block)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(reader: impl BufRead) -> Result<SampleBlock> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty stream file".into()))??;
    let mut parts = header.split(',').map(str::trim);
    let channels: usize = parse(parts.next(), "channel count")?;
    let rate_hz: f64 = parse(parts.next(), "sample rate")?;
    let mut per_channel = vec![Vec::new(); channels];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut n = 0;
        for (c, v) in line.split(',').enumerate() {
            if c >= channels {
                return Err(Error::Format(format!("row {} has more than {channels} columns", row + 2)));
            }
            per_channel[c].push(parse::<f32>(Some(v.trim()), "sample")?);
            n += 1;
        }
        if n != channels {
            return Err(Error::Format(format!("row {} has {n} columns, expected {channels}", row + 2)));
        }
    }
    SampleBlock::from_channels(rate_hz, 0.0, &per_channel)
}

pub fn write_csv(out: &mut impl Write, block: &SampleBlock) -> Result<()> {
    writeln!(out, "{},{}", block.channels, block.rate_hz)?;
    let n = block.len();
    let mut row = String::new();
    for i in 0..n {
        row.clear();
        for c in 0..block.channels {
            if c > 0 {
                row.push(',');
            }
            row.push_str(&block.data[c * n + i].to_string());
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn read_bin(mut reader: impl Read) -> Result<SampleBlock> {
    let mut header = [0u8; 16];
    reader.read_exact(&mut header).map_err(|_| Error::Format("binary stream shorter than its header".into()))?;
    let channels = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let rate = u64::from_le_bytes(header[8..].try_into().unwrap()) as f64;
    if channels == 0 {
        return Err(Error::Format("binary stream declares zero channels".into()));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % (4 * channels) != 0 {
        return Err(Error::Format("binary payload is not a whole number of sample ticks".into()));
    }
    let ticks = bytes.len() / (4 * channels);
    let mut data = vec![0f32; ticks * channels];
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let (i, c) = (k / channels, k % channels);
        data[c * ticks + i] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    SampleBlock::new(channels, rate, 0.0, data)
}

pub fn write_bin(out: &mut impl Write, block: &SampleBlock) -> Result<()> {
    if block.rate_hz.fract() != 0.0 {
        return Err(Error::config("binary stream files store an integer sample rate"));
    }
    out.write_all(&(block.channels as u64).to_le_bytes())?;
    out.write_all(&(block.rate_hz as u64).to_le_bytes())?;
    let n = block.len();
    for i in 0..n {
        for c in 0..block.channels {
            out.write_all(&block.data[c * n + i].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<EventInterval>> {
    parse_annotations(BufReader::new(File::open(path)?))
}

pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<EventInterval>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let start: f64 = parse(cols.next(), "start_s")?;
        let end: f64 = parse(cols.next(), "end_s")?;
        out.push(EventInterval::new(start, end).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    check_sorted_disjoint(&out)?;
    Ok(out)
}

pub fn write_annotations(path: &Path, events: &[EventInterval]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in events {
        writeln!(out, "{}\t{}", e.start_s, e.end_s)?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    let s = field.ok_or_else(|| Error::Format(format!("missing {what}")))?;
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}
