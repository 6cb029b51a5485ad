//! File formats: binary PGM images, the parameter blob, and CSV series.

use std::io::{self, Write};
use std::path::Path;

use fracdet_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

// ── PGM (P5, maxval 255) ───────────────────────────────────────────────

/// Encodes a `[H, W]` or `[1, H, W]` tensor of values in `[0, 1]` as
/// binary PGM; values are scaled by 255 and rounded to nearest.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>, String> {
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        other => return Err(format!("expected [H, W] or [1, H, W], got {other:?}")),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Decodes a binary PGM produced by [`encode_pgm`] into a `[1, H, W]`
/// tensor with values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor, String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    // Header: magic, width, height, maxval as whitespace-separated tokens
    // (comments are not produced by the encoder and are rejected here).
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(String::from("truncated PGM header"));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos]).map_err(|_| String::from("non-ascii header"))?,
        );
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, got {:?}", fields[0]));
    }
    let w: usize = fields[1].parse().map_err(|_| String::from("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| String::from("bad height"))?;
    if fields[3] != "255" {
        return Err(format!("expected maxval 255, got {:?}", fields[3]));
    }
    pos += 1; // single whitespace after maxval
    let expected = h * w;
    let pixels = &bytes[pos..];
    if pixels.len() != expected {
        return Err(format!("expected {expected} pixels, got {}", pixels.len()));
    }
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(&[1, h, w], data).map_err(|e| e.to_string())
}

pub fn write_pgm(path: &Path, image: &Tensor) -> io::Result<()> {
    let bytes = encode_pgm(image).map_err(io::Error::other)?;
    std::fs::write(path, bytes)
}

// ── Parameter blob ─────────────────────────────────────────────────────
//
// Layout: an 8-byte little-endian header length, the JSON header listing
// tensor names and shapes in order, then the tensor values as
// little-endian doubles in the same order.

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    version: u32,
    tensors: Vec<BlobTensor>,
}

#[derive(Serialize, Deserialize)]
struct BlobTensor {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_params(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let header = BlobHeader {
        version: 1,
        tensors: tensors
            .iter()
            .map(|(name, t)| BlobTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend((header_json.len() as u64).to_le_bytes());
    out.extend(&header_json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, String> {
    if bytes.len() < 8 {
        return Err(String::from("blob too short for header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header_end = 8 + header_len;
    if bytes.len() < header_end {
        return Err(String::from("blob truncated inside header"));
    }
    let header: BlobHeader = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| format!("bad header JSON: {e}"))?;
    if header.version != 1 {
        return Err(format!("unsupported blob version {}", header.version));
    }
    let mut offset = header_end;
    let mut out = Vec::with_capacity(header.tensors.len());
    for spec in header.tensors {
        let numel: usize = spec.shape.iter().product();
        let end = offset + numel * 8;
        if bytes.len() < end {
            return Err(format!("blob truncated inside tensor {:?}", spec.name));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        let tensor = Tensor::new(&spec.shape, data).map_err(|e| e.to_string())?;
        out.push((spec.name, tensor));
    }
    if offset != bytes.len() {
        return Err(format!("{} trailing bytes after tensors", bytes.len() - offset));
    }
    Ok(out)
}

pub fn save_params(path: &Path, tensors: &[(String, &Tensor)]) -> io::Result<()> {
    std::fs::write(path, encode_params(tensors))
}

pub fn load_params(path: &Path) -> io::Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path)?;
    decode_params(&bytes).map_err(io::Error::other)
}

/// Copies loaded tensors into a model by name; names and shapes must match
/// the model exactly.
pub fn apply_params(
    loaded: Vec<(String, Tensor)>,
    targets: Vec<(String, &mut Tensor)>,
) -> Result<(), String> {
    if loaded.len() != targets.len() {
        return Err(format!(
            "blob has {} tensors, model expects {}",
            loaded.len(),
            targets.len()
        ));
    }
    for ((got_name, got), (want_name, slot)) in loaded.into_iter().zip(targets) {
        if got_name != want_name {
            return Err(format!("tensor order mismatch: {got_name:?} vs {want_name:?}"));
        }
        if got.shape() != slot.shape() {
            return Err(format!(
                "shape mismatch for {got_name:?}: {:?} vs {:?}",
                got.shape(),
                slot.shape()
            ));
        }
        slot.data_mut().copy_from_slice(got.data());
    }
    Ok(())
}

// ── CSV ────────────────────────────────────────────────────────────────

/// Writes `epoch,loss` rows (floats in shortest round-trip form).
pub fn write_loss_csv(path: &Path, history: &[f64]) -> io::Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(path, out)
}

/// Writes cost rows as `module,operator,params,macs`.
pub fn write_cost_csv(path: &Path, report: &fracdet_core::complexity::CostReport) -> io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "module,operator,params,macs")?;
    for row in &report.rows {
        writeln!(file, "{},{},{},{}", row.module, row.operator, row.params, row.macs)?;
    }
    writeln!(file, "total,,{},{}", report.total_params, report.total_macs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_is_exact_on_quantized_values() {
        // 8-bit-representable values survive the round trip exactly.
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = Tensor::new(&[1, 3, 4], data).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back.shape(), &[1, 3, 4]);
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_rejects_malformed_input() {
        assert!(decode_pgm(b"P6\n2 2\n255\nxxxx").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\nxx").is_err());
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn params_blob_roundtrip() {
        let a = Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.0]).unwrap();
        let b = Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let blob = encode_params(&[(String::from("layer.w"), &a), (String::from("layer.b"), &b)]);
        let decoded = decode_params(&blob).unwrap();
        assert_eq!(decoded.len(), 2);
        assert_eq!(decoded[0].0, "layer.w");
        assert_eq!(decoded[0].1, a);
        assert_eq!(decoded[1].1, b);
    }

    #[test]
    fn params_blob_detects_truncation_and_trailing() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let blob = encode_params(&[(String::from("t"), &a)]);
        assert!(decode_params(&blob[..blob.len() - 1]).is_err());
        let mut extended = blob.clone();
        extended.push(0);
        assert!(decode_params(&extended).is_err());
    }

    #[test]
    fn apply_params_validates_names_and_shapes() {
        let src = Tensor::new(&[2], vec![5.0, 6.0]).unwrap();
        let mut dst = Tensor::zeros(&[2]);
        apply_params(
            vec![(String::from("w"), src.clone())],
            vec![(String::from("w"), &mut dst)],
        )
        .unwrap();
        assert_eq!(dst.data(), &[5.0, 6.0]);

        let mut dst = Tensor::zeros(&[3]);
        assert!(apply_params(
            vec![(String::from("w"), src.clone())],
            vec![(String::from("w"), &mut dst)],
        )
        .is_err());
        let mut dst = Tensor::zeros(&[2]);
        assert!(apply_params(
            vec![(String::from("w"), src)],
            vec![(String::from("v"), &mut dst)],
        )
        .is_err());
    }
}
