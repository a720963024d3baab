//! Model bundle files.
//!
//! Layout: magic `MDL1`, u32 header length, UTF-8 header (key=value
//! pairs describing the architecture), then every parameter tensor in
//! declaration order as little-endian f32, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;

use super::{NnError, ParamLearnerNet, Result, SurrogateNet, LEARNER_WIDTHS, SURROGATE_WIDTHS};

const MAGIC: &[u8; 4] = b"MDL1";

pub enum ModelBundle {
    Surrogate(SurrogateNet<f32>),
    Learner(ParamLearnerNet<f32>),
}

fn header_string(kind: &str, image_channels: usize, param_channels: usize, widths: &[usize], seed: u64) -> String {
    let widths = widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "kind={kind} image_channels={image_channels} param_channels={param_channels} widths={widths} seed={seed}"
    )
}

fn write_bundle(path: &Path, header: &str, params: &[&Tensor<f32>]) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for t in params {
        for v in t.to_vec() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_surrogate(path: &Path, net: &SurrogateNet<f32>) -> Result<()> {
    let header = header_string(
        "surrogate",
        net.image_channels,
        net.param_channels,
        &SURROGATE_WIDTHS,
        net.seed,
    );
    write_bundle(path, &header, &net.params())
}

pub fn save_learner(path: &Path, net: &ParamLearnerNet<f32>) -> Result<()> {
    let header = header_string(
        "param_learner",
        net.image_channels,
        net.param_channels,
        &LEARNER_WIDTHS,
        net.seed,
    );
    write_bundle(path, &header, &net.params())
}

struct Header {
    kind: String,
    image_channels: usize,
    param_channels: usize,
    widths: Vec<usize>,
    seed: u64,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut kind = None;
    let mut image_channels = None;
    let mut param_channels = None;
    let mut widths = None;
    let mut seed = None;
    for field in text.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| NnError::Header(format!("malformed field `{field}`")))?;
        match key {
            "kind" => kind = Some(value.to_string()),
            "image_channels" => {
                image_channels =
                    Some(value.parse().map_err(|_| {
                        NnError::Header(format!("bad image_channels `{value}`"))
                    })?)
            }
            "param_channels" => {
                param_channels =
                    Some(value.parse().map_err(|_| {
                        NnError::Header(format!("bad param_channels `{value}`"))
                    })?)
            }
            "widths" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|v| v.parse()).collect();
                widths =
                    Some(parsed.map_err(|_| NnError::Header(format!("bad widths `{value}`")))?)
            }
            "seed" => {
                seed = Some(
                    value
                        .parse()
                        .map_err(|_| NnError::Header(format!("bad seed `{value}`")))?,
                )
            }
            other => return Err(NnError::Header(format!("unknown field `{other}`"))),
        }
    }
    Ok(Header {
        kind: kind.ok_or_else(|| NnError::Header("missing kind".into()))?,
        image_channels: image_channels.ok_or_else(|| NnError::Header("missing image_channels".into()))?,
        param_channels: param_channels.ok_or_else(|| NnError::Header("missing param_channels".into()))?,
        widths: widths.ok_or_else(|| NnError::Header("missing widths".into()))?,
        seed: seed.ok_or_else(|| NnError::Header("missing seed".into()))?,
    })
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(NnError::Truncated);
    }
    let header_text = std::str::from_utf8(&bytes[8..8 + header_len])
        .map_err(|_| NnError::Header("header is not UTF-8".into()))?;
    let header = parse_header(header_text)?;
    let blob = &bytes[8 + header_len..];

    let bundle = match header.kind.as_str() {
        "surrogate" => {
            if header.widths != SURROGATE_WIDTHS {
                return Err(NnError::ArchMismatch(format!(
                    "surrogate widths {:?} unsupported (expected {:?})",
                    header.widths, SURROGATE_WIDTHS
                )));
            }
            let net: SurrogateNet<f32> =
                SurrogateNet::init(header.seed, header.image_channels, header.param_channels);
            fill_params(&net.params(), blob)?;
            ModelBundle::Surrogate(net)
        }
        "param_learner" => {
            if header.widths != LEARNER_WIDTHS {
                return Err(NnError::ArchMismatch(format!(
                    "learner widths {:?} unsupported (expected {:?})",
                    header.widths, LEARNER_WIDTHS
                )));
            }
            let net: ParamLearnerNet<f32> =
                ParamLearnerNet::init(header.seed, header.image_channels, header.param_channels);
            fill_params(&net.params(), blob)?;
            ModelBundle::Learner(net)
        }
        other => {
            return Err(NnError::ArchMismatch(format!(
                "unknown model kind `{other}`"
            )))
        }
    };
    Ok(bundle)
}

fn fill_params(params: &[&Tensor<f32>], blob: &[u8]) -> Result<()> {
    let expected: usize = params.iter().map(|t| t.len() * 4).sum();
    if blob.len() != expected {
        return Err(NnError::Truncated);
    }
    let mut offset = 0;
    for t in params {
        let n = t.len() * 4;
        let data: Vec<f32> = blob[offset..offset + n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        t.set_data(data).expect("length checked");
        offset += n;
    }
    Ok(())
}
