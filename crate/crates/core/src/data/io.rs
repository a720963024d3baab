//! Dataset persistence: the lossless `F32T` container (canonical), binary
//! netpbm P6 previews, and the TOML manifest with per-file checksums.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::Image;

use super::{DataError, Dataset, Pair, Result, Split};

const FORMAT_VERSION: u32 = 1;
const F32T_MAGIC: &[u8; 4] = b"F32T";

// ── F32T container ──────────────────────────────────────────────────

/// Writes the lossless 32-bit container: magic, u32 rank, u32 dims,
/// little-endian f32 data.
pub fn write_f32t(path: &Path, image: &Image) -> Result<()> {
    let (h, w, c) = image.dims();
    let mut bytes = Vec::with_capacity(16 + image.len() * 4);
    bytes.extend_from_slice(F32T_MAGIC);
    bytes.extend_from_slice(&3u32.to_le_bytes());
    for d in [h as u32, w as u32, c as u32] {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for v in image.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_f32t(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| DataError::ImageFormat(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != F32T_MAGIC {
        return Err(fail("bad F32T magic"));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rank != 3 {
        return Err(fail("only rank-3 tensors are stored"));
    }
    if bytes.len() < 8 + rank * 4 {
        return Err(fail("truncated dims"));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[8 + i * 4..12 + i * 4].try_into().unwrap()) as usize;
    }
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let expected = 20 + h * w * c * 4;
    if bytes.len() != expected {
        return Err(fail("payload length mismatch"));
    }
    let data: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Image::new(h, w, c, data))
}

// ── Netpbm P6 ───────────────────────────────────────────────────────

/// Writes an 8-bit binary PPM preview (round-to-nearest quantization).
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let (h, w, c) = image.dims();
    if c != 3 {
        return Err(DataError::ImageFormat(format!(
            "PPM requires 3 channels, image has {c}"
        )));
    }
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        image
            .as_slice()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    atomic_write(path, &bytes)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| DataError::ImageFormat(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, DataError> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(fail("not a binary PPM (P6)"));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| fail("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| fail("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| fail("bad maxval"))?;
    if maxval != 255 {
        return Err(fail("only maxval 255 is supported"));
    }
    let data_start = pos + 1; // exactly one whitespace byte after maxval
    let expected = h * w * 3;
    if bytes.len() < data_start + expected {
        return Err(fail("truncated pixel data"));
    }
    let data: Vec<f32> = bytes[data_start..data_start + expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok(Image::new(h, w, 3, data))
}

// ── Manifest ────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    height: usize,
    width: usize,
    noise_levels: Vec<f32>,
    pairs: Vec<ManifestPair>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPair {
    id: String,
    split: String,
    sigma: f32,
    clean: String,
    noisy: String,
    sha256_clean: String,
    sha256_noisy: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves the dataset: canonical `F32T` files, PPM previews, and the
/// manifest (`manifest.toml`) listing ids, splits, σ, and checksums.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for pair in &dataset.pairs {
        let clean_name = format!("{}_clean.f32t", pair.id);
        let noisy_name = format!("{}_noisy.f32t", pair.id);
        write_f32t(&dir.join(&clean_name), &pair.clean)?;
        write_f32t(&dir.join(&noisy_name), &pair.noisy)?;
        write_ppm(&dir.join(format!("{}_clean.ppm", pair.id)), &pair.clean)?;
        write_ppm(&dir.join(format!("{}_noisy.ppm", pair.id)), &pair.noisy)?;
        entries.push(ManifestPair {
            id: pair.id.clone(),
            split: pair.split.as_str().to_string(),
            sigma: pair.sigma,
            sha256_clean: sha256_hex(&fs::read(dir.join(&clean_name))?),
            sha256_noisy: sha256_hex(&fs::read(dir.join(&noisy_name))?),
            clean: clean_name,
            noisy: noisy_name,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: dataset.seed,
        height: dataset.height,
        width: dataset.width,
        noise_levels: dataset.noise_levels.clone(),
        pairs: entries,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| DataError::ManifestParse(e.to_string()))?;
    atomic_write(&dir.join("manifest.toml"), text.as_bytes())
}

/// Loads a dataset directory, verifying checksums and value ranges.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.toml");
    if !manifest_path.exists() {
        return Err(DataError::MissingManifest(
            manifest_path.display().to_string(),
        ));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| DataError::ManifestParse(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::UnknownFormatVersion(manifest.format_version));
    }
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for entry in &manifest.pairs {
        let split = Split::parse(&entry.split).ok_or_else(|| {
            DataError::ManifestParse(format!("pair {}: unknown split `{}`", entry.id, entry.split))
        })?;
        let load_one = |name: &str, sha: &str| -> Result<Image> {
            let path: PathBuf = dir.join(name);
            let bytes = fs::read(&path).map_err(|_| DataError::MissingImage {
                id: entry.id.clone(),
                path: path.display().to_string(),
            })?;
            if sha256_hex(&bytes) != sha {
                return Err(DataError::ChecksumMismatch {
                    id: entry.id.clone(),
                    path: path.display().to_string(),
                });
            }
            read_f32t(&path)
        };
        let clean = load_one(&entry.clean, &entry.sha256_clean)?;
        let noisy = load_one(&entry.noisy, &entry.sha256_noisy)?;
        for img in [&clean, &noisy] {
            if !img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(DataError::ValueOutOfRange {
                    id: entry.id.clone(),
                });
            }
        }
        pairs.push(Pair {
            id: entry.id.clone(),
            clean,
            noisy,
            sigma: entry.sigma,
            split,
        });
    }
    Ok(Dataset {
        pairs,
        seed: manifest.seed,
        height: manifest.height,
        width: manifest.width,
        noise_levels: manifest.noise_levels,
    })
}
