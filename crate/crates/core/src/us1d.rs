//! The US1D dataset container: a 20-byte little-endian header followed by
//! fixed-size records of (optional u16 label + raw 8-bit samples).

use crate::signal::{SignalRecord, TOF_CLASSES};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"US1D";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum Us1dError {
    #[error("not a US1D file (bad magic)")]
    BadMagic,
    #[error("unsupported US1D version {0}")]
    BadVersion(u16),
    #[error("file truncated or trailing bytes: expected {expected} bytes of records, found {found}")]
    BadSize { expected: u64, found: u64 },
    #[error("record {index} has label {label}, outside the class range")]
    BadLabel { index: usize, label: u16 },
    #[error("header declares zero records")]
    Empty,
    #[error("record {index} has {got} samples, header says {want}")]
    BadRecord { index: usize, got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Us1dHeader {
    pub count: u32,
    pub signal_length: u16,
    pub sample_rate_hz: u32,
    pub labeled: bool,
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(records: &[SignalRecord], sample_rate_hz: u32, labeled: bool) -> Result<Vec<u8>, Us1dError> {
    let first = records.first().ok_or(Us1dError::Empty)?;
    let len = first.samples.len();
    let mut buf = Vec::with_capacity(20 + records.len() * (len + 2));
    buf.extend_from_slice(MAGIC);
    put_u16(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, records.len() as u32);
    put_u16(&mut buf, len as u16);
    put_u32(&mut buf, sample_rate_hz);
    buf.push(labeled as u8);
    buf.extend_from_slice(&[0u8; 3]);
    for (index, r) in records.iter().enumerate() {
        if r.samples.len() != len {
            return Err(Us1dError::BadRecord { index, got: r.samples.len(), want: len });
        }
        if labeled {
            if r.label as usize >= TOF_CLASSES {
                return Err(Us1dError::BadLabel { index, label: r.label });
            }
            put_u16(&mut buf, r.label);
        }
        buf.extend_from_slice(&r.samples);
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<(Us1dHeader, Vec<SignalRecord>), Us1dError> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Us1dError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Us1dError::BadVersion(version));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let signal_length = u16::from_le_bytes([bytes[10], bytes[11]]);
    let sample_rate_hz = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let labeled = bytes[16] != 0;
    if count == 0 {
        return Err(Us1dError::Empty);
    }
    let record_size = signal_length as u64 + if labeled { 2 } else { 0 };
    let expected = count as u64 * record_size;
    let found = (bytes.len() - 20) as u64;
    if found != expected {
        return Err(Us1dError::BadSize { expected, found });
    }
    let mut records = Vec::with_capacity(count as usize);
    let mut off = 20usize;
    for index in 0..count as usize {
        let label = if labeled {
            let l = u16::from_le_bytes([bytes[off], bytes[off + 1]]);
            off += 2;
            if l as usize >= TOF_CLASSES {
                return Err(Us1dError::BadLabel { index, label: l });
            }
            l
        } else {
            0
        };
        let samples = bytes[off..off + signal_length as usize].to_vec();
        off += signal_length as usize;
        records.push(SignalRecord { samples, label, params: None });
    }
    let header = Us1dHeader { count, signal_length, sample_rate_hz, labeled };
    Ok((header, records))
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_file(
    path: &Path,
    records: &[SignalRecord],
    sample_rate_hz: u32,
    labeled: bool,
) -> Result<(), Us1dError> {
    let bytes = encode(records, sample_rate_hz, labeled)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<(Us1dHeader, Vec<SignalRecord>), Us1dError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        ))
        .to_path_buf(),
    };
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_dataset, DatasetSpec};
    use tempfile::tempdir;

    fn data(n: usize) -> Vec<SignalRecord> {
        generate_dataset(&DatasetSpec { count: n, seed: 9, ..DatasetSpec::default() }).unwrap()
    }

    #[test]
    fn header_is_exactly_twenty_bytes() {
        let bytes = encode(&data(1), 60_000_000, true).unwrap();
        assert_eq!(bytes.len(), 20 + 2 + 512);
        assert_eq!(&bytes[..4], b"US1D");
    }

    #[test]
    fn round_trip_labeled_and_unlabeled() {
        let records = data(7);
        for labeled in [true, false] {
            let bytes = encode(&records, 60_000_000, labeled).unwrap();
            let (h, back) = decode(&bytes).unwrap();
            assert_eq!(h.count, 7);
            assert_eq!(h.signal_length, 512);
            assert_eq!(h.sample_rate_hz, 60_000_000);
            assert_eq!(h.labeled, labeled);
            for (a, b) in records.iter().zip(&back) {
                assert_eq!(a.samples, b.samples);
                if labeled {
                    assert_eq!(a.label, b.label);
                }
            }
            // write→read→write is byte identical
            let again = encode(&back, h.sample_rate_hz, labeled).unwrap();
            assert_eq!(bytes, again);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        let good = encode(&data(2), 60_000_000, true).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Us1dError::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        assert!(matches!(decode(&bad_version), Err(Us1dError::BadVersion(_))));

        let truncated = &good[..good.len() - 5];
        assert!(matches!(decode(truncated), Err(Us1dError::BadSize { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(decode(&trailing), Err(Us1dError::BadSize { .. })));

        let mut bad_label = good.clone();
        // first record label at offset 20
        bad_label[20] = 0xFF;
        bad_label[21] = 0xFF;
        assert!(matches!(decode(&bad_label), Err(Us1dError::BadLabel { .. })));

        assert!(decode(&good[..10]).is_err());
    }

    #[test]
    fn file_round_trip_via_temp_rename() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.us1d");
        let records = data(5);
        write_file(&path, &records, 60_000_000, true).unwrap();
        let (h, back) = read_file(&path).unwrap();
        assert_eq!(h.count, 5);
        assert_eq!(back[3].samples, records[3].samples);
        // no temp litter left behind
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() != "set.us1d")
            .collect();
        assert!(leftovers.is_empty());
    }
}
