//! The ATNB attention container and its validated in-memory form.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "ATNB" | version=1 | L | H | N | d | flags | meta_len | meta (UTF-8 JSON)
//! L*H attention matrices, N*N f32 row-major each
//! L feature matrices, N*d f32 row-major each (only when d > 0)
//! ```
//!
//! Flag bit 0 marks a CLS token at index 0 and must be set.
//!
//! The stack keeps the `f32` payload exactly as stored so that a write/read
//! cycle is bit-exact. Everything downstream reads the attention through the
//! renormalized `f64` view, where each row is divided by its own sum.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::matrix::{FeatureMatrix, TransitionMatrix};

pub const MAGIC: [u8; 4] = *b"ATNB";
pub const VERSION: u32 = 1;
pub const FLAG_HAS_CLS: u32 = 1;

/// Rows whose stored sum drifts further than this from 1 are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;
/// Entries may exceed 1 by at most this much (float32 softmax noise).
pub const ENTRY_UPPER_SLACK: f64 = 1e-6;

/// Per-layer, per-head attention maps plus optional per-layer token features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: usize,
    heads: usize,
    tokens: usize,
    attn: Vec<f32>,
    // 1 / stored row sum, one per (layer, head, row)
    row_scale: Vec<f64>,
    feature_dim: usize,
    features: Option<Vec<f32>>,
    meta: BTreeMap<String, String>,
}

impl AttentionStack {
    /// Validates and wraps a raw payload.
    ///
    /// `attn` holds `layers * heads` matrices of `tokens * tokens` entries.
    /// `features`, when given, is `(dim, data)` with `layers * tokens * dim` values.
    pub fn new(
        layers: usize,
        heads: usize,
        tokens: usize,
        attn: Vec<f32>,
        features: Option<(usize, Vec<f32>)>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if layers == 0 || heads == 0 || tokens < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need L >= 1, H >= 1, N >= 2; got L={layers}, H={heads}, N={tokens}"
            )));
        }
        let expected = checked_len(&[layers, heads, tokens, tokens])?;
        if attn.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "attention payload has {} values, expected {expected}",
                attn.len()
            )));
        }

        let mut row_scale = Vec::with_capacity(layers * heads * tokens);
        for (m, matrix) in attn.chunks_exact(tokens * tokens).enumerate() {
            let (layer, head) = (m / heads, m % heads);
            for (row, values) in matrix.chunks_exact(tokens).enumerate() {
                let mut sum = 0.0f64;
                for (col, &v) in values.iter().enumerate() {
                    let v = f64::from(v);
                    if !v.is_finite() {
                        return Err(Error::NonFinite("attention"));
                    }
                    if v < 0.0 {
                        return Err(Error::NegativeEntry {
                            layer,
                            head,
                            row,
                            col,
                            value: v,
                        });
                    }
                    if v > 1.0 + ENTRY_UPPER_SLACK {
                        return Err(Error::EntryOutOfRange {
                            layer,
                            head,
                            row,
                            col,
                            value: v,
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::NotRowStochastic {
                        layer,
                        head,
                        row,
                        sum,
                    });
                }
                row_scale.push(1.0 / sum);
            }
        }

        let (feature_dim, features) = match features {
            None => (0, None),
            Some((dim, data)) => {
                if dim == 0 {
                    return Err(Error::ShapeMismatch("feature dim must be >= 1".into()));
                }
                let expected = checked_len(&[layers, tokens, dim])?;
                if data.len() != expected {
                    return Err(Error::ShapeMismatch(format!(
                        "feature payload has {} values, expected {expected} ({layers} layers x {tokens} rows x {dim})",
                        data.len()
                    )));
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("features"));
                }
                (dim, Some(data))
            }
        };

        Ok(Self {
            layers,
            heads,
            tokens,
            attn,
            row_scale,
            feature_dim,
            features,
            meta,
        })
    }

    /// Convenience constructor from `f64` rows; values are rounded to `f32` storage.
    pub fn from_f64(
        layers: usize,
        heads: usize,
        tokens: usize,
        attn: &[f64],
        features: Option<(usize, &[f64])>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let attn = attn.iter().map(|&v| v as f32).collect();
        let features = features.map(|(d, f)| (d, f.iter().map(|&v| v as f32).collect()));
        Self::new(layers, heads, tokens, attn, features, meta)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// 0 when the stack carries no features.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Stored attention payload, untouched.
    pub fn raw_attention(&self) -> &[f32] {
        &self.attn
    }

    pub fn raw_features(&self) -> Option<&[f32]> {
        self.features.as_deref()
    }

    /// Largest `|stored row sum - 1|` across the stack.
    pub fn max_row_drift(&self) -> f64 {
        self.row_scale
            .iter()
            .map(|s| (1.0 / s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: self.layers,
            });
        }
        Ok(())
    }

    /// Renormalized `f64` copy of one head's map.
    pub fn head_matrix(&self, layer: usize, head: usize) -> Result<TransitionMatrix> {
        self.check_layer(layer)?;
        if head >= self.heads {
            return Err(Error::IndexOutOfRange {
                index: head,
                n: self.heads,
            });
        }
        let n = self.tokens;
        let mut data = vec![0.0; n * n];
        self.add_head(layer, head, 1.0, &mut data);
        Ok(TransitionMatrix::from_stochastic(n, data))
    }

    fn add_head(&self, layer: usize, head: usize, weight: f64, acc: &mut [f64]) {
        let n = self.tokens;
        let m = layer * self.heads + head;
        let matrix = &self.attn[m * n * n..(m + 1) * n * n];
        let scales = &self.row_scale[m * n..(m + 1) * n];
        for ((acc_row, row), &scale) in acc.chunks_mut(n).zip(matrix.chunks(n)).zip(scales) {
            let s = scale * weight;
            for (a, &v) in acc_row.iter_mut().zip(row) {
                *a += f64::from(v) * s;
            }
        }
    }

    /// Arithmetic mean over heads of the renormalized maps at `layer`.
    pub fn head_average(&self, layer: usize) -> Result<TransitionMatrix> {
        self.check_layer(layer)?;
        let n = self.tokens;
        let mut data = vec![0.0; n * n];
        let weight = 1.0 / self.heads as f64;
        for head in 0..self.heads {
            self.add_head(layer, head, weight, &mut data);
        }
        TransitionMatrix::from_rows(n, data)
    }

    /// Features of `layer` (0-based) widened to `f64`.
    pub fn features(&self, layer: usize) -> Result<FeatureMatrix> {
        self.check_layer(layer)?;
        let data = self
            .features
            .as_ref()
            .ok_or(Error::MissingFeatures { layer })?;
        let len = self.tokens * self.feature_dim;
        let slice = &data[layer * len..(layer + 1) * len];
        FeatureMatrix::new(
            self.tokens,
            self.feature_dim,
            slice.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Returns a copy without features.
    pub fn without_features(&self) -> Self {
        Self {
            feature_dim: 0,
            features: None,
            ..self.clone()
        }
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("dimensions {dims:?} overflow")))
}

fn header_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::ShapeMismatch(format!("{what}={value} exceeds u32")))
}

/// Reads and validates an ATNB file.
pub fn read_stack(path: impl AsRef<Path>) -> Result<AttentionStack> {
    let file = File::open(path)?;
    read_stack_from(BufReader::new(file))
}

pub fn read_stack_from<R: Read>(mut reader: R) -> Result<AttentionStack> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::MagicMismatch { found: magic });
    }
    let version = reader.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let mut header = [0u32; 6];
    reader.read_u32_into::<LittleEndian>(&mut header)?;
    let [layers, heads, tokens, dim, flags, meta_len] = header.map(|v| v as usize);
    if flags as u32 & FLAG_HAS_CLS == 0 {
        return Err(Error::MissingCls);
    }

    let mut meta_bytes = vec![0u8; meta_len];
    reader
        .read_exact(&mut meta_bytes)
        .map_err(|e| short_read(e, "meta blob"))?;
    let meta = parse_meta(&meta_bytes)?;

    let attn_len = checked_len(&[layers, heads, tokens, tokens])?;
    let feat_len = checked_len(&[layers, tokens, dim])?;
    let payload_bytes = attn_len
        .checked_add(feat_len)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::ShapeMismatch("payload size overflows".into()))?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != payload_bytes {
        return Err(Error::ShapeMismatch(format!(
            "header declares L={layers} H={heads} N={tokens} d={dim} ({payload_bytes} payload bytes), file carries {}",
            payload.len()
        )));
    }

    let mut attn = vec![0f32; attn_len];
    LittleEndian::read_f32_into(&payload[..attn_len * 4], &mut attn);
    let features = (dim > 0).then(|| {
        let mut f = vec![0f32; feat_len];
        LittleEndian::read_f32_into(&payload[attn_len * 4..], &mut f);
        (dim, f)
    });

    AttentionStack::new(layers, heads, tokens, attn, features, meta)
}

fn short_read(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ShapeMismatch(format!("file truncated inside {what}"))
    } else {
        Error::Io(e)
    }
}

fn parse_meta(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    if bytes.is_empty() {
        return Ok(BTreeMap::new());
    }
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidMeta(e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidMeta(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| Error::InvalidMeta("meta must be a JSON object".into()))?;
    // Exporters sometimes write numbers or booleans; keep their JSON text.
    Ok(object
        .iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), v)
        })
        .collect())
}

pub fn write_stack(stack: &AttentionStack, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_stack_to(stack, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn write_stack_to<W: Write>(stack: &AttentionStack, mut w: W) -> Result<()> {
    let meta = if stack.meta.is_empty() {
        Vec::new()
    } else {
        serde_json::to_vec(&stack.meta).map_err(|e| Error::InvalidMeta(e.to_string()))?
    };
    w.write_all(&MAGIC)?;
    for value in [
        VERSION,
        header_u32(stack.layers, "L")?,
        header_u32(stack.heads, "H")?,
        header_u32(stack.tokens, "N")?,
        header_u32(stack.feature_dim, "d")?,
        FLAG_HAS_CLS,
        header_u32(meta.len(), "meta_len")?,
    ] {
        w.write_u32::<LittleEndian>(value)?;
    }
    w.write_all(&meta)?;
    write_f32s(&mut w, &stack.attn)?;
    if let Some(features) = &stack.features {
        write_f32s(&mut w, features)?;
    }
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = vec![0u8; values.len() * 4];
    LittleEndian::write_f32_into(values, &mut buf);
    w.write_all(&buf)?;
    Ok(())
}
