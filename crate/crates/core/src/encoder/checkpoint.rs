//! Binary checkpoints of the projection and optimizer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "LMTX" | version u32 | H u64 | D u64 | checksum u64
//! projection  D×H f64, row-major
//! first moment  D×H f64, row-major
//! second moment D×H f64, row-major
//! step u64 | lr f64 | weight_decay f64 | beta1 f64 | beta2 f64 | eps f64
//! params version u32 | init seed u64
//! ```
//!
//! The checksum is FNV-1a over every byte after the header. The version
//! packs `major << 16 | minor`; readers reject other majors.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::features::Fnv1a;
use super::optim::OptState;
use super::params::EncoderParams;
use super::EncoderError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LMTX";
pub const CHECKPOINT_VERSION: u32 = 1 << 16;
const HEADER_LEN: u64 = 4 + 4 + 8 + 8 + 8;

struct HashingWriter<W> {
    inner: W,
    hash: Fnv1a,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct HashingReader<R> {
    inner: R,
    hash: Fnv1a,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }
}

/// Writes a feature-major buffer in row-major `D × H` order.
fn write_matrix(out: &mut impl Write, data: &[f64], features: usize, dim: usize) -> io::Result<()> {
    for d in 0..dim {
        for j in 0..features {
            out.write_all(&data[j * dim + d].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix(input: &mut impl Read, features: usize, dim: usize) -> io::Result<Vec<f64>> {
    let mut data = vec![0.0; features * dim];
    let mut buf = [0u8; 8];
    for d in 0..dim {
        for j in 0..features {
            input.read_exact(&mut buf)?;
            data[j * dim + d] = f64::from_le_bytes(buf);
        }
    }
    Ok(data)
}

fn read_u32(input: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(input: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(input)?))
}

pub fn save_checkpoint(params: &EncoderParams, opt: &OptState, path: &Path) -> Result<(), EncoderError> {
    if opt.m.len() != params.len() || opt.v.len() != params.len() {
        return Err(EncoderError::ShapeMismatch(
            "optimizer state does not match params".into(),
        ));
    }
    let (features, dim) = (params.feature_dim(), params.embed_dim());
    let mut file = File::create(path)?;
    {
        let mut out = BufWriter::new(&mut file);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(features as u64).to_le_bytes())?;
        out.write_all(&(dim as u64).to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        out.flush()?;
    }
    let checksum = {
        let mut out = HashingWriter {
            inner: BufWriter::new(&mut file),
            hash: Fnv1a::new(),
        };
        write_matrix(&mut out, params.raw(), features, dim)?;
        write_matrix(&mut out, &opt.m, features, dim)?;
        write_matrix(&mut out, &opt.v, features, dim)?;
        out.write_all(&opt.step.to_le_bytes())?;
        for x in [opt.lr, opt.weight_decay, opt.beta1, opt.beta2, opt.eps] {
            out.write_all(&x.to_le_bytes())?;
        }
        out.write_all(&params.version.to_le_bytes())?;
        out.write_all(&params.seed.to_le_bytes())?;
        out.flush()?;
        out.hash.finish()
    };
    file.seek(SeekFrom::Start(HEADER_LEN - 8))?;
    file.write_all(&checksum.to_le_bytes())?;
    file.sync_all()?;
    Ok(())
}

pub fn restore(path: &Path) -> Result<(EncoderParams, OptState), EncoderError> {
    let corrupt = |e: io::Error| match e.kind() {
        io::ErrorKind::UnexpectedEof => EncoderError::CorruptCheckpoint("truncated file".into()),
        _ => EncoderError::Io(e),
    };
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EncoderError::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut input).map_err(corrupt)?;
    if version >> 16 != CHECKPOINT_VERSION >> 16 {
        return Err(EncoderError::VersionMismatch {
            found: version,
            supported: CHECKPOINT_VERSION >> 16,
        });
    }
    let features = read_u64(&mut input).map_err(corrupt)? as usize;
    let dim = read_u64(&mut input).map_err(corrupt)? as usize;
    let checksum = read_u64(&mut input).map_err(corrupt)?;

    let matrix_bytes = (features as u128) * (dim as u128) * 8;
    let expected_len = HEADER_LEN as u128 + 3 * matrix_bytes + 8 + 5 * 8 + 4 + 8;
    if expected_len != file_len as u128 {
        return Err(EncoderError::CorruptCheckpoint(format!(
            "expected {expected_len} bytes for H={features} D={dim}, found {file_len}"
        )));
    }

    let mut body = HashingReader {
        inner: input,
        hash: Fnv1a::new(),
    };
    let weights = read_matrix(&mut body, features, dim).map_err(corrupt)?;
    let m = read_matrix(&mut body, features, dim).map_err(corrupt)?;
    let v = read_matrix(&mut body, features, dim).map_err(corrupt)?;
    let step = read_u64(&mut body).map_err(corrupt)?;
    let lr = read_f64(&mut body).map_err(corrupt)?;
    let weight_decay = read_f64(&mut body).map_err(corrupt)?;
    let beta1 = read_f64(&mut body).map_err(corrupt)?;
    let beta2 = read_f64(&mut body).map_err(corrupt)?;
    let eps = read_f64(&mut body).map_err(corrupt)?;
    let param_version = read_u32(&mut body).map_err(corrupt)?;
    let seed = read_u64(&mut body).map_err(corrupt)?;
    if body.hash.finish() != checksum {
        return Err(EncoderError::CorruptCheckpoint("checksum mismatch".into()));
    }

    let params = EncoderParams {
        features,
        dim,
        weights,
        version: param_version,
        seed,
    };
    let opt = OptState {
        m,
        v,
        step,
        lr,
        weight_decay,
        beta1,
        beta2,
        eps,
    };
    Ok((params, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{adamw_step, Gradient};

    fn trained_state() -> (EncoderParams, OptState) {
        let mut p = EncoderParams::init(12, 5, 77);
        let mut opt = OptState::with_defaults(&p);
        let mut g = Gradient::zeros_like(&p);
        g.row_mut(3).copy_from_slice(&[0.1, -0.2, 0.3, 1e-9, -5.0]);
        adamw_step(&mut p, &g, &mut opt).unwrap();
        (p, opt)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let (p, opt) = trained_state();
        save_checkpoint(&p, &opt, &path).unwrap();
        let (q, opt2) = restore(&path).unwrap();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p.raw()), bits(q.raw()));
        assert_eq!(bits(&opt.m), bits(&opt2.m));
        assert_eq!(bits(&opt.v), bits(&opt2.v));
        assert_eq!(p, q);
        assert_eq!(opt, opt2);
    }

    #[test]
    fn header_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let p = EncoderParams::from_rows(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        save_checkpoint(&p, &OptState::with_defaults(&p), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LMTX");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        let first: Vec<f64> = (0..6)
            .map(|i| f64::from_le_bytes(bytes[32 + 8 * i..40 + 8 * i].try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let (p, opt) = trained_state();
        save_checkpoint(&p, &opt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(matches!(restore(&path), Err(EncoderError::CorruptCheckpoint(_))));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(restore(&path), Err(EncoderError::CorruptCheckpoint(_))));
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let (p, opt) = trained_state();
        save_checkpoint(&p, &opt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[100] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(restore(&path), Err(EncoderError::CorruptCheckpoint(_))));
    }

    #[test]
    fn future_major_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let (p, opt) = trained_state();
        save_checkpoint(&p, &opt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&(2u32 << 16).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(restore(&path), Err(EncoderError::VersionMismatch { .. })));
    }
}
