//! IDX container format: a 4-byte big-endian magic (`0x0000_08NN`, where
//! `NN` is the number of dimensions), one big-endian `u32` per dimension,
//! then the raw unsigned-byte payload. Files may be gzip-compressed.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_PREFIX: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxFile {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            IdxFile::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
                for d in [count, rows, cols] {
                    out.extend_from_slice(&(*d as u32).to_be_bytes());
                }
                out.extend_from_slice(pixels);
            }
            IdxFile::Labels(labels) => {
                out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
                out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
                out.extend_from_slice(labels);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads and decodes an IDX file, transparently gunzipping it when the
/// content starts with the gzip magic.
pub fn parse_idx(path: &Path) -> Result<IdxFile, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    if raw.starts_with(&GZIP_PREFIX) {
        let mut inflated = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut inflated)
            .map_err(io_err)?;
        parse_idx_bytes(&inflated)
    } else {
        parse_idx_bytes(&raw)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

pub fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxFile, DataError> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => return Err(DataError::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * i)? as usize);
    }
    let header = 4 + 4 * ndims;
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(header).map(|_| n))
        .ok_or(DataError::DimOverflow(dims.clone()))?;
    let payload = &bytes[header..];
    if payload.len() < payload_len {
        return Err(DataError::Truncated {
            expected: header + payload_len,
            actual: bytes.len(),
        });
    }
    if payload.len() > payload_len {
        return Err(DataError::TrailingBytes {
            expected: header + payload_len,
            actual: bytes.len(),
        });
    }
    Ok(match ndims {
        3 => IdxFile::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        },
        _ => IdxFile::Labels(payload.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;

    #[test]
    fn parses_label_file() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 4];
        assert_eq!(parse_idx_bytes(&bytes).unwrap(), IdxFile::Labels(vec![5, 0, 4]));
    }

    #[test]
    fn parses_single_image() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..784).map(|i| (i % 256) as u8));
        match parse_idx_bytes(&bytes).unwrap() {
            IdxFile::Images { count, rows, cols, pixels } => {
                assert_eq!((count, rows, cols), (1, 28, 28));
                assert_eq!(pixels.len(), 784);
                assert_eq!(pixels[300], 44);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            parse_idx_bytes(&[0, 0, 8, 2, 0, 0, 0, 0]),
            Err(DataError::BadMagic(0x0802))
        ));
        assert!(matches!(
            parse_idx_bytes(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]),
            Err(DataError::Truncated { expected: 11, actual: 10 })
        ));
        assert!(matches!(
            parse_idx_bytes(&[0, 0, 8, 1, 0, 0, 0, 1, 1, 2]),
            Err(DataError::TrailingBytes { .. })
        ));
        assert!(matches!(parse_idx_bytes(&[0, 0, 8]), Err(DataError::Truncated { .. })));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        if usize::BITS == 64 {
            assert!(matches!(parse_idx_bytes(&huge), Err(DataError::DimOverflow(_))));
        }
    }

    #[test]
    fn reads_gzip_and_raw_files() {
        let dir = tempfile::tempdir().unwrap();
        let file = IdxFile::Labels(vec![1, 2, 3, 9]);
        let raw_path = dir.path().join("labels");
        file.write(&raw_path).unwrap();
        let gz_path = dir.path().join("labels.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&file.to_bytes()).unwrap();
        std::fs::write(&gz_path, enc.finish().unwrap()).unwrap();
        assert_eq!(parse_idx(&raw_path).unwrap(), file);
        assert_eq!(parse_idx(&gz_path).unwrap(), file);
        assert!(matches!(
            parse_idx(&dir.path().join("missing")),
            Err(DataError::Io { .. })
        ));
    }
}
