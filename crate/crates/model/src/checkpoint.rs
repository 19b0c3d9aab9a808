//! Versioned binary checkpoint format.
//!
//! Layout: magic `LQPT`, format version (u32 LE), CRC-64 of the payload
//! (u64 LE), then the payload: header length (u32 LE), JSON header, and the
//! parameter tensors as little-endian f64 in the bundle's fixed tensor
//! order (encoders in index order, each tensor per [`EncoderParams::tensors`],
//! then heads in index order as weight, bias).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, TrainMeta, VariantKind};
use crate::encoder::EncoderConfig;
use crate::error::ModelError;
use crate::tokenizer::TokenizerConfig;
use localeq_core::{LocaleRegistry, PtRegistry};

pub const MAGIC: &[u8; 4] = b"LQPT";
pub const FORMAT_VERSION: u32 = 1;

/// CRC-64/ECMA-182: polynomial 0x42F0E1EBA9EA3693, MSB-first, zero init.
fn crc64(bytes: &[u8]) -> u64 {
    const POLY: u64 = 0x42F0_E1EB_A9EA_3693;
    let mut crc: u64 = 0;
    for &b in bytes {
        crc ^= (b as u64) << 56;
        for _ in 0..8 {
            crc = if crc & (1 << 63) != 0 {
                (crc << 1) ^ POLY
            } else {
                crc << 1
            };
        }
    }
    crc
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    variant: VariantKind,
    encoder_config: EncoderConfig,
    tokenizer: TokenizerConfig,
    locales: Vec<String>,
    pts: Vec<String>,
    meta: TrainMeta,
    model_version: String,
    tensors: Vec<TensorInfo>,
}

/// Serializes a bundle to bytes.
pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let header = Header {
        format: FORMAT_VERSION,
        variant: bundle.variant,
        encoder_config: bundle.encoder_config,
        tokenizer: bundle.tokenizer,
        locales: bundle.locales.codes().to_vec(),
        pts: bundle.pts.names().to_vec(),
        meta: bundle.meta.clone(),
        model_version: bundle.model_version(),
        tensors: bundle
            .tensors()
            .iter()
            .map(|t| TensorInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization");

    let mut payload =
        Vec::with_capacity(4 + header_json.len() + bundle.n_parameters() * 8);
    payload.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header_json);
    for tensor in bundle.tensors() {
        for &v in &tensor.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(16 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc64(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_bytes(bundle)).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Deserializes a bundle from bytes, verifying magic, version and checksum.
pub fn from_bytes(raw: &[u8]) -> Result<ModelBundle, ModelError> {
    if raw.len() < 16 {
        return Err(ModelError::Truncated("shorter than the fixed prefix".into()));
    }
    if &raw[0..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let stored_crc = u64::from_le_bytes(raw[8..16].try_into().unwrap());
    let payload = &raw[16..];
    if crc64(payload) != stored_crc {
        return Err(ModelError::ChecksumMismatch);
    }
    if payload.len() < 4 {
        return Err(ModelError::Truncated("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(payload[0..4].try_into().unwrap()) as usize;
    if payload.len() < 4 + header_len {
        return Err(ModelError::Truncated("header shorter than declared".into()));
    }
    let header: Header = serde_json::from_slice(&payload[4..4 + header_len])
        .map_err(|e| ModelError::BadHeader(e.to_string()))?;
    if header.format != FORMAT_VERSION {
        return Err(ModelError::BadVersion(header.format));
    }

    let mut locales = LocaleRegistry::from_codes(&header.locales)
        .map_err(|e| ModelError::BadHeader(e.to_string()))?;
    let mut pts = PtRegistry::from_names(&header.pts)
        .map_err(|e| ModelError::BadHeader(e.to_string()))?;
    locales.freeze();
    pts.freeze();

    // Rebuild the bundle structure, then overwrite every value from the
    // payload in the fixed order.
    let mut bundle = ModelBundle::init(
        header.variant,
        header.encoder_config,
        header.tokenizer,
        locales,
        pts,
        0,
    )?;
    bundle.meta = header.meta;

    let expected = bundle.tensors();
    if expected.len() != header.tensors.len() {
        return Err(ModelError::BadHeader(format!(
            "expected {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for (t, info) in expected.iter().zip(&header.tensors) {
        if t.name != info.name || t.shape != info.shape {
            return Err(ModelError::BadHeader(format!(
                "tensor mismatch: expected {} {:?}, found {} {:?}",
                t.name, t.shape, info.name, info.shape
            )));
        }
    }
    let n_values: usize = expected.iter().map(|t| t.len()).sum();
    drop(expected);
    let data = &payload[4 + header_len..];
    if data.len() != n_values * 8 {
        return Err(ModelError::Truncated(format!(
            "expected {} tensor bytes, found {}",
            n_values * 8,
            data.len()
        )));
    }
    let mut offset = 0;
    for tensor in bundle.tensors_mut() {
        for v in &mut tensor.values {
            *v = f64::from_le_bytes(data[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
        tensor.grad.fill(0.0);
    }
    Ok(bundle)
}

pub fn load(path: &Path) -> Result<ModelBundle, ModelError> {
    let raw = fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_bytes(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use localeq_core::LocaleId;

    fn bundle(variant: VariantKind, seed: u64) -> ModelBundle {
        let locales = LocaleRegistry::from_codes(["US", "PL", "DE"]).unwrap();
        let pts = PtRegistry::from_names(["A", "B", "C", "D", "E"]).unwrap();
        let encoder_config = EncoderConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
            dropout_rate: 0.001,
        };
        let tokenizer = TokenizerConfig {
            n_buckets: 32,
            max_len: 12,
            n_locales: 3,
        };
        ModelBundle::init(variant, encoder_config, tokenizer, locales, pts, seed).unwrap()
    }

    #[test]
    fn roundtrip_reproduces_scores_bit_exactly() {
        let original = bundle(VariantKind::UnifiedAware, 42);
        let bytes = to_bytes(&original);
        let loaded = from_bytes(&bytes).unwrap();
        for (query, code) in [("harry potter mug", "US"), ("kubek", "PL"), ("mug", "XX")] {
            let (a, ka) = original.score_by_code(query, code).unwrap();
            let (b, kb) = loaded.score_by_code(query, code).unwrap();
            assert_eq!(a, b, "scores differ for {query:?} in {code}");
            assert_eq!(ka, kb);
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.lqpt");
        let p2 = dir.path().join("b.lqpt");
        let original = bundle(VariantKind::NonUnified, 7);
        save(&original, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        save(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn corrupting_any_payload_byte_fails_the_checksum() {
        let original = bundle(VariantKind::UnifiedAgnostic, 3);
        let bytes = to_bytes(&original);
        for probe in [16, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut corrupted = bytes.clone();
            corrupted[probe] ^= 0x40;
            assert!(
                matches!(from_bytes(&corrupted), Err(ModelError::ChecksumMismatch)),
                "byte {probe} corruption not caught"
            );
        }
    }

    #[test]
    fn bad_magic_version_and_truncation_are_detected() {
        let original = bundle(VariantKind::UnifiedAgnostic, 3);
        let bytes = to_bytes(&original);

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(from_bytes(&wrong_magic), Err(ModelError::BadMagic)));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 99;
        assert!(matches!(
            from_bytes(&wrong_version),
            Err(ModelError::BadVersion(99))
        ));

        assert!(matches!(
            from_bytes(&bytes[..10]),
            Err(ModelError::Truncated(_))
        ));
        // Cutting tensor data changes payload length: checksum catches it.
        assert!(from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn checkpoint_size_tracks_parameter_count() {
        let noncons = bundle(VariantKind::NonUnified, 5);
        let aware = bundle(VariantKind::UnifiedAware, 5);
        let size_n = to_bytes(&noncons).len();
        let size_a = to_bytes(&aware).len();
        let l = noncons.n_locales();
        let d = noncons.encoder_config.d_model;
        let p = noncons.n_pts();
        let param_diff = (l - 1) * (d + 1) * p;
        assert_eq!(
            noncons.n_parameters() - aware.n_parameters(),
            param_diff
        );
        // File sizes differ by the extra parameters' bytes plus a little
        // header manifest growth.
        let byte_diff = size_n - size_a;
        assert!(
            byte_diff >= param_diff * 8 && byte_diff < param_diff * 8 + 512,
            "byte diff {byte_diff} vs parameter bytes {}",
            param_diff * 8
        );
    }

    #[test]
    fn loaded_predictions_match_for_trained_like_values() {
        // Perturb some tensor values to non-initial data and round-trip.
        let mut original = bundle(VariantKind::DisjointPerLocale, 9);
        for (i, t) in original.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.values.iter_mut().enumerate() {
                *v += ((i * 31 + j) % 17) as f64 * 1e-3;
            }
        }
        let loaded = from_bytes(&to_bytes(&original)).unwrap();
        let a = original.score_known("alpha beta", LocaleId(2)).unwrap();
        let b = loaded.score_known("alpha beta", LocaleId(2)).unwrap();
        assert_eq!(a, b);
    }
}
