//! `SITC` binary corpus files.
//!
//! ```text
//! "SITC"  version:u8
//! N:u32  d:u32  |Q|:u32  |A|:u32            (little endian)
//! frames: N·d × f64, row-major
//! senone labels: N × u32
//! speaker labels: N × u32
//! crc32:u32 over everything between the version byte and the checksum
//! ```

use std::fs;
use std::path::Path;

use crate::data::FrameBatch;
use crate::error::{FormatError, Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const SITC_MAGIC: &[u8; 4] = b"SITC";
pub const SITC_VERSION: u8 = 1;

const PREFIX: usize = 5;
const HEADER: usize = 16;

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| SitError::arg(format!("{what} = {n} does not fit the corpus header")))
}

pub fn encode_sitc<T: Scalar>(batch: &FrameBatch<T>) -> Result<Vec<u8>> {
    batch.validate()?;
    let n = batch.len();
    let d = batch.dim();
    let mut buf = Vec::with_capacity(PREFIX + HEADER + n * d * 8 + n * 8 + 4);
    buf.extend_from_slice(SITC_MAGIC);
    buf.push(SITC_VERSION);
    for (v, what) in [(n, "N"), (d, "d"), (batch.n_senones, "|Q|"), (batch.n_speakers, "|A|")] {
        buf.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    for v in batch.frames.as_slice() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    for labels in [&batch.senone_labels, &batch.speaker_labels] {
        for &l in labels {
            buf.extend_from_slice(&u32_of(l, "label")?.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[PREFIX..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_sitc<T: Scalar>(bytes: &[u8]) -> Result<FrameBatch<T>> {
    if bytes.len() < PREFIX {
        return Err(FormatError::Truncated {
            expected: PREFIX,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..4] != SITC_MAGIC {
        return Err(FormatError::BadMagic {
            found: bytes[..4].to_vec(),
        }
        .into());
    }
    if bytes[4] != SITC_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]).into());
    }
    if bytes.len() < PREFIX + HEADER {
        return Err(FormatError::Truncated {
            expected: PREFIX + HEADER,
            found: bytes.len(),
        }
        .into());
    }
    let n = read_u32(bytes, 5) as usize;
    let d = read_u32(bytes, 9) as usize;
    let n_senones = read_u32(bytes, 13) as usize;
    let n_speakers = read_u32(bytes, 17) as usize;
    if n == 0 {
        return Err(FormatError::EmptyCorpus.into());
    }
    let sizes = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|fb| fb.checked_add(PREFIX + HEADER))
        .and_then(|fe| Some((fe, fe.checked_add(n.checked_mul(8)?)?)));
    let Some((frames_end, labels_end)) = sizes else {
        return Err(FormatError::Malformed(format!("header sizes N={n}, d={d} overflow")).into());
    };
    let expected = labels_end + 4;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            }
            .into());
        }
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - expected)).into());
    }
    let stored = read_u32(bytes, labels_end);
    let computed = crc32fast::hash(&bytes[PREFIX..labels_end]);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed }.into());
    }
    let values: Vec<T> = bytes[PREFIX + HEADER..frames_end]
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let labels: Vec<usize> = bytes[frames_end..labels_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let (senone_labels, speaker_labels) = labels.split_at(n);
    let batch = FrameBatch {
        frames: Matrix::from_vec(n, d, values)?,
        senone_labels: senone_labels.to_vec(),
        speaker_labels: speaker_labels.to_vec(),
        n_senones,
        n_speakers,
        norm: None,
    };
    batch
        .validate()
        .map_err(|e| SitError::Format(FormatError::Malformed(e.to_string())))?;
    Ok(batch)
}

pub fn save_corpus<T: Scalar>(batch: &FrameBatch<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_sitc(batch)?)?;
    Ok(())
}

pub fn load_corpus<T: Scalar>(path: &Path) -> Result<FrameBatch<T>> {
    decode_sitc(&fs::read(path)?)
}
