//! File formats: RIFF WAV ingestion, binary feature dumps, per-frame label
//! files, and atomic writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Magic header of the binary feature dump format.
pub const FEATURE_MAGIC: &[u8; 4] = b"MCF1";

const MAX_WAV_CHANNELS: usize = 8;
const I16_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM RIFF WAV file. Returns channels x samples in
/// [-1, 1) plus the sample rate.
pub fn read_wav(path: &Path) -> Result<(Array2<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Malformed(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let m = spec.channels as usize;
    if m == 0 || m > MAX_WAV_CHANNELS {
        return Err(Error::Malformed(format!(
            "{}: {m} channels outside 1..{MAX_WAV_CHANNELS}",
            path.display()
        )));
    }
    let interleaved: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()?;
    let n = interleaved.len() / m;
    let mut wave = Array2::zeros((m, n));
    for t in 0..n {
        for ch in 0..m {
            wave[(ch, t)] = interleaved[t * m + ch] as f64 / I16_SCALE;
        }
    }
    Ok((wave, spec.sample_rate))
}

/// Writes a channels x samples waveform as 16-bit PCM, clamping to [-1, 1).
pub fn write_wav(path: &Path, wave: ArrayView2<'_, f64>, sample_rate: u32) -> Result<()> {
    let (m, n) = (wave.nrows(), wave.ncols());
    if m == 0 || m > MAX_WAV_CHANNELS {
        return Err(Error::invalid(format!(
            "{m} channels outside 1..{MAX_WAV_CHANNELS}"
        )));
    }
    let spec = hound::WavSpec {
        channels: m as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for t in 0..n {
        for ch in 0..m {
            let x = (wave[(ch, t)] * I16_SCALE).round();
            writer.write_sample(x.clamp(-32768.0, 32767.0) as i16)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a feature matrix: magic "MCF1", little-endian u32 rank and dims,
/// then a row-major float32 payload.
pub fn write_features(path: &Path, features: ArrayView2<'_, f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&2u32.to_le_bytes())?;
    w.write_all(&(features.nrows() as u32).to_le_bytes())?;
    w.write_all(&(features.ncols() as u32).to_le_bytes())?;
    for row in features.rows() {
        for &x in row.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Array2<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Malformed(format!(
            "{}: bad feature magic",
            path.display()
        )));
    }
    let rank = read_u32(&mut r)?;
    if rank != 2 {
        return Err(Error::Malformed(format!(
            "{}: unsupported feature rank {rank}",
            path.display()
        )));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut payload = vec![0u8; rows * cols * 4];
    r.read_exact(&mut payload)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
}

/// Per-frame class labels as raw little-endian u16.
pub fn write_labels(path: &Path, labels: &[u16]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &l in labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u16>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 2 != 0 {
        return Err(Error::Malformed(format!(
            "{}: odd label byte count",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes `bytes` to `path` atomically: a temp file in the same directory is
/// renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
