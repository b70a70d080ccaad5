use std::fs;
use std::path::Path;

use crate::decoder::LogitRecord;
use crate::store::write_atomic;
use crate::{Error, Result, StoredTensor};

pub const MAGIC: [u8; 4] = *b"LUQ1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordHeader {
    pub format_version: u16,
    pub flags: u16,
    pub vocab_size: u32,
    pub num_steps: u32,
    pub temperature: f32,
    pub run_index: u32,
}

impl RecordHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.format_version.to_le_bytes());
        b[6..8].copy_from_slice(&self.flags.to_le_bytes());
        b[8..12].copy_from_slice(&self.vocab_size.to_le_bytes());
        b[12..16].copy_from_slice(&self.num_steps.to_le_bytes());
        b[16..20].copy_from_slice(&self.temperature.to_le_bytes());
        b[20..24].copy_from_slice(&self.run_index.to_le_bytes());
        b
    }

    /// Total file length implied by this header.
    pub fn file_len(&self) -> u64 {
        record_file_size(self.num_steps as u64, self.vocab_size as u64)
    }
}

/// `24 + 4·steps + 4·steps·vocab`.
pub fn record_file_size(steps: u64, vocab: u64) -> u64 {
    HEADER_LEN as u64 + 4 * steps + 4 * steps * vocab
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub header: RecordHeader,
    pub tensor: StoredTensor,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn encode(record: &LogitRecord) -> Result<Vec<u8>> {
    let t = &record.tensor;
    if t.steps() == 0 {
        return Err(Error::EmptyGeneration);
    }
    let narrow = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u32")))
    };
    let header = RecordHeader {
        format_version: FORMAT_VERSION,
        flags: 0,
        vocab_size: narrow(t.vocab_size(), "vocab size")?,
        num_steps: narrow(t.steps(), "step count")?,
        temperature: record.context.temperature as f32,
        run_index: record.context.run_index,
    };
    let mut out = Vec::with_capacity(header.file_len() as usize);
    out.extend_from_slice(&header.encode());
    for tok in t.tokens() {
        out.extend_from_slice(&tok.to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Serializes a record atomically (temp file, then rename).
pub fn write_record(record: &LogitRecord, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(record)?)
}

pub fn read_record(path: impl AsRef<Path>) -> Result<RecordFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let corrupt = |expected: u64| Error::Corruption {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(HEADER_LEN as u64));
    }
    let header = RecordHeader {
        format_version: u16_at(&bytes, 4),
        flags: u16_at(&bytes, 6),
        vocab_size: u32_at(&bytes, 8),
        num_steps: u32_at(&bytes, 12),
        temperature: f32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        run_index: u32_at(&bytes, 20),
    };
    if header.format_version != FORMAT_VERSION {
        return Err(format(format!("unsupported format version {}", header.format_version)));
    }
    if header.flags != 0 {
        return Err(format(format!("unknown flags {:#06x}", header.flags)));
    }
    if header.num_steps == 0 {
        return Err(format("record has zero steps".into()));
    }
    if bytes.len() as u64 != header.file_len() {
        return Err(corrupt(header.file_len()));
    }
    let steps = header.num_steps as usize;
    let body = &bytes[HEADER_LEN..];
    let tokens: Vec<u32> = body[..4 * steps]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values: Vec<f32> = body[4 * steps..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = StoredTensor::new(header.vocab_size as usize, values, tokens)
        .map_err(|e| format(e.to_string()))?;
    Ok(RecordFile { header, tensor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{GenerationContext, Question};

    fn record(vocab: usize, steps: usize) -> LogitRecord {
        let values: Vec<f32> = (0..vocab * steps).map(|i| (i as f32 * 0.37).sin()).collect();
        let tokens = (0..steps).map(|i| (i % vocab) as u32).collect();
        LogitRecord {
            context: GenerationContext {
                model: "m".into(),
                image: "i".into(),
                question: Question::Q1,
                temperature: 0.3,
                run_index: 4,
                master_seed: 0,
            },
            tensor: StoredTensor::new(vocab, values, tokens).unwrap(),
        }
    }

    #[test]
    fn file_sizes_follow_layout() {
        assert_eq!(record_file_size(3, 512), 6_180);
        assert_eq!(record_file_size(1, 2), 36);
        let dir = tempfile::tempdir().unwrap();
        for (vocab, steps) in [(512, 3), (2, 1), (7, 5)] {
            let p = dir.path().join(format!("{vocab}_{steps}.luq"));
            write_record(&record(vocab, steps), &p).unwrap();
            let len = fs::metadata(&p).unwrap().len();
            assert_eq!(len, 24 + 4 * steps as u64 + 4 * (steps * vocab) as u64);
        }
    }

    #[test]
    fn header_fields_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.luq");
        write_record(&record(2, 1), &p).unwrap();
        let b = fs::read(&p).unwrap();
        assert_eq!(&b[0..4], b"LUQ1");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..16], &[1, 0, 0, 0]);
        assert_eq!(&b[16..20], &0.3f32.to_le_bytes());
        assert_eq!(&b[20..24], &[4, 0, 0, 0]);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/dir/r.luq");
        let r = record(33, 6);
        write_record(&r, &p).unwrap();
        let back = read_record(&p).unwrap();
        assert_eq!(back.tensor.tokens(), r.tensor.tokens());
        let bits = |t: &StoredTensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensor), bits(&r.tensor));
        assert_eq!(back.header.run_index, 4);
        assert!(!dir.path().join("nested/dir/r.luq.tmp").exists());
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.luq");
        write_record(&record(4, 2), &p).unwrap();
        let mut b = fs::read(&p).unwrap();
        b[3] = b'2';
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_record(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_reports_expected_and_actual() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.luq");
        write_record(&record(4, 2), &p).unwrap();
        let b = fs::read(&p).unwrap();
        fs::write(&p, &b[..b.len() - 4]).unwrap();
        match read_record(&p) {
            Err(Error::Corruption { expected, actual, .. }) => {
                assert_eq!(expected, 24 + 8 + 32);
                assert_eq!(actual, 24 + 8 + 28);
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, &b[..10]).unwrap();
        assert!(matches!(read_record(&p), Err(Error::Corruption { .. })));
    }

    #[test]
    fn wrong_version_and_empty_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.luq");
        write_record(&record(4, 2), &p).unwrap();
        let mut b = fs::read(&p).unwrap();
        b[4] = 2;
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_record(&p), Err(Error::Format { .. })));

        let mut empty = record(4, 1);
        empty.tensor = StoredTensor::new(4, vec![], vec![]).unwrap();
        assert!(write_record(&empty, dir.path().join("e.luq")).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_record("/nonexistent/x.luq"), Err(Error::Io { .. })));
    }
}
