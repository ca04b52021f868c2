//! Little-endian binary trace files.
//!
//! Header: magic `SNT1`, version u32, config hash u64, record count u64.
//! Each record is [`RECORD_BYTES`] long; see [`encode_record`] for the field
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::types::*;
use crate::error::{Error, Result};

pub const TRACE_MAGIC: [u8; 4] = *b"SNT1";
pub const TRACE_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 24;
pub const RECORD_BYTES: usize = 8 + 13 + 16 + 12 + 1 + 8 + 2 + 28 + 12 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub config_hash: u64,
    pub count: u64,
}

pub fn encode_header(config_hash: u64, count: u64) -> [u8; HEADER_BYTES] {
    let mut buf = [0u8; HEADER_BYTES];
    buf[0..4].copy_from_slice(&TRACE_MAGIC);
    buf[4..8].copy_from_slice(&TRACE_VERSION.to_le_bytes());
    buf[8..16].copy_from_slice(&config_hash.to_le_bytes());
    buf[16..24].copy_from_slice(&count.to_le_bytes());
    buf
}

pub fn decode_header(buf: &[u8; HEADER_BYTES]) -> Result<TraceHeader> {
    let magic: [u8; 4] = buf[0..4].try_into().unwrap();
    if magic != TRACE_MAGIC {
        return Err(Error::BadMagic {
            expected: TRACE_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(Error::VersionMismatch {
            expected: TRACE_VERSION,
            found: version,
        });
    }
    Ok(TraceHeader {
        version,
        config_hash: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
        count: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
    })
}

struct Cursor<'a> {
    buf: &'a mut [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn put(&mut self, bytes: &[u8]) {
        self.buf[self.pos..self.pos + bytes.len()].copy_from_slice(bytes);
        self.pos += bytes.len();
    }
}

pub const STATIC_BYTES: usize = 8 + 13 + 16 + 12 + 1 + 8 + 2;

/// Encodes the static part of a record (pc through data size).
pub fn encode_static(inst: &StaticInstruction, out: &mut [u8; STATIC_BYTES]) {
    let mut c = Cursor { buf: out, pos: 0 };
    c.put(&inst.pc.to_le_bytes());
    c.put(&inst.op.to_array());
    for r in inst.src_regs {
        c.put(&r.to_le_bytes());
    }
    for r in inst.dst_regs {
        c.put(&r.to_le_bytes());
    }
    match inst.data {
        Some(d) => {
            c.put(&[1]);
            c.put(&d.addr.to_le_bytes());
            c.put(&d.size.to_le_bytes());
        }
        None => {
            c.put(&[0]);
            c.put(&0u64.to_le_bytes());
            c.put(&0u16.to_le_bytes());
        }
    }
    debug_assert_eq!(c.pos, STATIC_BYTES);
}

pub fn encode_record(rec: &AnnotatedInstruction, out: &mut [u8; RECORD_BYTES]) {
    let (head, _) = out.split_at_mut(STATIC_BYTES);
    encode_static(&rec.inst, head.try_into().unwrap());
    let mut c = Cursor {
        buf: out,
        pos: STATIC_BYTES,
    };
    for h in rec.history.to_array() {
        c.put(&h.to_le_bytes());
    }
    c.put(&rec.truth.fetch.to_le_bytes());
    c.put(&rec.truth.execution.to_le_bytes());
    c.put(&rec.truth.store.to_le_bytes());
    c.put(&rec.fetch_tick.to_le_bytes());
    debug_assert_eq!(c.pos, RECORD_BYTES);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

fn decode_static_from(r: &mut Reader<'_>, index: usize) -> Result<StaticInstruction> {
    let pc = r.u64();
    let op = OpFeatures::from_array(r.take())
        .map_err(|reason| Error::Invariant { index, reason })?;
    let mut src_regs = [0u16; SRC_REGS];
    for s in &mut src_regs {
        *s = r.u16();
    }
    let mut dst_regs = [0u16; DST_REGS];
    for d in &mut dst_regs {
        *d = r.u16();
    }
    let has_data = r.take::<1>()[0];
    let addr = r.u64();
    let size = r.u16();
    let data = match has_data {
        0 => None,
        1 => Some(DataAccess { addr, size }),
        v => {
            return Err(Error::Invariant {
                index,
                reason: format!("has_data byte must be 0/1, found {v}"),
            })
        }
    };
    Ok(StaticInstruction {
        pc,
        op,
        src_regs,
        dst_regs,
        data,
    })
}

/// Decodes the static part of a record; `index` is only used for error
/// reporting.
pub fn decode_static(buf: &[u8; STATIC_BYTES], index: usize) -> Result<StaticInstruction> {
    decode_static_from(&mut Reader { buf, pos: 0 }, index)
}

/// Decodes one record; `index` is only used for error reporting.
pub fn decode_record(buf: &[u8; RECORD_BYTES], index: usize) -> Result<AnnotatedInstruction> {
    let mut r = Reader { buf, pos: 0 };
    let inst = decode_static_from(&mut r, index)?;
    let mut hist = [0u16; HISTORY_FEATURES];
    for h in &mut hist {
        *h = r.u16();
    }
    let truth = LatencyTriple {
        fetch: r.u32(),
        execution: r.u32(),
        store: r.u32(),
    };
    let fetch_tick = r.u64();
    Ok(AnnotatedInstruction {
        inst,
        history: HistoryFeatures::from_array(hist),
        truth,
        fetch_tick,
    })
}

pub fn write_trace_to<W: Write>(
    mut w: W,
    instructions: &[AnnotatedInstruction],
    config_hash: u64,
) -> Result<()> {
    validate_trace(instructions)?;
    w.write_all(&encode_header(config_hash, instructions.len() as u64))?;
    let mut buf = [0u8; RECORD_BYTES];
    for rec in instructions {
        encode_record(rec, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(
    path: impl AsRef<Path>,
    instructions: &[AnnotatedInstruction],
    config_hash: u64,
) -> Result<()> {
    // Validate before creating the file so a bad trace leaves nothing behind.
    validate_trace(instructions)?;
    let file = BufWriter::new(File::create(path)?);
    write_trace_to(file, instructions, config_hash)
}

/// Reads exactly `len` bytes, or reports how many were available.
pub(crate) fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<TraceHeader> {
    let mut hbuf = [0u8; HEADER_BYTES];
    let got = read_full(r, &mut hbuf)?;
    if got < 4 {
        return Err(Error::Format(format!("file too short for a header ({got} bytes)")));
    }
    let magic: [u8; 4] = hbuf[0..4].try_into().unwrap();
    if magic != TRACE_MAGIC {
        return Err(Error::BadMagic {
            expected: TRACE_MAGIC,
            found: magic,
        });
    }
    if got < HEADER_BYTES {
        return Err(Error::Format("truncated header".into()));
    }
    decode_header(&hbuf)
}

/// Reads `count` records that follow the current position of `r`, then
/// checks that nothing trails them.
fn read_records<R: Read>(
    r: &mut R,
    count: u64,
    first_index: u64,
    expect_eof: bool,
) -> Result<Vec<AnnotatedInstruction>> {
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; RECORD_BYTES];
    for i in 0..count {
        let index = first_index + i;
        match read_full(r, &mut buf)? {
            RECORD_BYTES => out.push(decode_record(&buf, index as usize)?),
            0 => {
                return Err(Error::CountMismatch {
                    expected: first_index + count,
                    found: index,
                })
            }
            _ => return Err(Error::Truncated { index }),
        }
    }
    if expect_eof {
        let mut extra = [0u8; RECORD_BYTES];
        let trailing = read_full(r, &mut extra)?;
        if trailing == RECORD_BYTES {
            let mut found = first_index + count + 1;
            loop {
                match read_full(r, &mut extra)? {
                    RECORD_BYTES => found += 1,
                    0 => break,
                    _ => return Err(Error::Truncated { index: found }),
                }
            }
            return Err(Error::CountMismatch {
                expected: first_index + count,
                found,
            });
        } else if trailing > 0 {
            return Err(Error::Truncated {
                index: first_index + count,
            });
        }
    }
    Ok(out)
}

pub fn read_trace_from<R: Read>(mut r: R) -> Result<(TraceHeader, Vec<AnnotatedInstruction>)> {
    let header = read_header(&mut r)?;
    let records = read_records(&mut r, header.count, 0, true)?;
    Ok((header, records))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<AnnotatedInstruction>> {
    let file = BufReader::new(File::open(path)?);
    Ok(read_trace_from(file)?.1)
}

/// Reads records `[start, start + len)` without touching the rest of the file,
/// so independent readers can load disjoint sub-traces.
pub fn read_trace_range(
    path: impl AsRef<Path>,
    start: u64,
    len: u64,
) -> Result<Vec<AnnotatedInstruction>> {
    let mut file = File::open(path)?;
    let header = read_header(&mut file)?;
    if start.checked_add(len).is_none_or(|end| end > header.count) {
        return Err(Error::InvalidArgument(format!(
            "range {start}+{len} exceeds trace of {} records",
            header.count
        )));
    }
    file.seek(SeekFrom::Start(
        HEADER_BYTES as u64 + start * RECORD_BYTES as u64,
    ))?;
    read_records(&mut BufReader::new(file), len, start, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AnnotatedInstruction {
        let inst = StaticInstruction::new(0x40_0000, OpFeatures::of_class(OpClass::Store))
            .with_sources(&[3, 4])
            .with_data(0x1000_0040, 8);
        AnnotatedInstruction {
            inst,
            history: HistoryFeatures {
                fetch_level: 1,
                data_level: 2,
                data_writebacks: [1, 0, 0],
                ..Default::default()
            },
            truth: LatencyTriple::new(7, 3, 12),
            fetch_tick: 7,
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[], 42).unwrap();
        assert_eq!(buf.len(), HEADER_BYTES);
        let (h, recs) = read_trace_from(&buf[..]).unwrap();
        assert_eq!(h.count, 0);
        assert_eq!(h.config_hash, 42);
        assert!(recs.is_empty());
    }

    #[test]
    fn single_record_round_trip() {
        let rec = sample();
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[rec], 1).unwrap();
        assert_eq!(buf.len(), HEADER_BYTES + RECORD_BYTES);
        let (_, recs) = read_trace_from(&buf[..]).unwrap();
        assert_eq!(recs, vec![rec]);
    }

    #[test]
    fn wrong_magic() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[sample()], 1).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_trace_from(&buf[..]),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn wrong_version() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[sample()], 1).unwrap();
        buf[4] = 9;
        assert!(matches!(
            read_trace_from(&buf[..]),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_mid_record_names_index() {
        let mut second = sample();
        second.truth.fetch = 0;
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[sample(), second], 1).unwrap();
        buf.truncate(HEADER_BYTES + RECORD_BYTES + 10);
        assert!(matches!(
            read_trace_from(&buf[..]),
            Err(Error::Truncated { index: 1 })
        ));
    }

    #[test]
    fn count_mismatch_detected() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[sample()], 1).unwrap();
        // Claim two records while holding one.
        buf[16] = 2;
        assert!(matches!(
            read_trace_from(&buf[..]),
            Err(Error::CountMismatch {
                expected: 2,
                found: 1
            })
        ));
        // Claim zero while holding one.
        buf[16] = 0;
        assert!(matches!(
            read_trace_from(&buf[..]),
            Err(Error::CountMismatch {
                expected: 0,
                found: 1
            })
        ));
    }

    #[test]
    fn invalid_record_reports_index() {
        let mut bad = sample();
        bad.fetch_tick += 1;
        let err = write_trace_to(Vec::new(), &[sample(), bad], 0).unwrap_err();
        assert!(matches!(err, Error::Invariant { index: 1, .. }));

        let mut no_addr = sample();
        no_addr.inst.data = None;
        let err = write_trace_to(Vec::new(), &[no_addr], 0).unwrap_err();
        assert!(matches!(err, Error::Invariant { index: 0, .. }));
    }
}
