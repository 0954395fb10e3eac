//! On-disk model formats.
//!
//! Both formats share one layout; all integers and reals are little-endian,
//! reals are IEEE-754 binary32.
//!
//! ```text
//! magic        8 bytes   "BCNNFP32" (float) | "BCNNBIN1" (binarized)
//! version      u32       1
//! input        u32 x 3   channels, height, width
//! layer count  u32
//! per layer:
//!   type       u8        1 conv, 2 max-pool, 3 fc, 4 relu, 5 softmax head
//!   dims       u32 x 5   out, in, kh, kw, stride (zero where unused)
//!   payload    conv/fc only:
//!     float      out·in·kh·kw weights, then out biases
//!     binarized  per kernel: α, then ⌈in·kh·kw / 8⌉ packed sign bytes;
//!                then out biases
//! metadata     optional: "META", iteration u64, seed u64,
//!              u32 length, UTF-8 JSON training config
//! checksum     u32       CRC-32 of every preceding byte
//! ```
//!
//! Pooling records store `(0, 0, size, size, stride)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::layers::ConvLayerParams;
use crate::network::{LayerSpec, MapShape, NetworkParams, NetworkSpec};
use crate::packed::{packed_len, BinarizedModel, PackedKernel, PackedLayer};
use crate::train::{Checkpoint, TrainConfig};

pub const FLOAT_MAGIC: [u8; 8] = *b"BCNNFP32";
pub const BINARIZED_MAGIC: [u8; 8] = *b"BCNNBIN1";
pub const FORMAT_VERSION: u32 = 1;
const META_TAG: [u8; 4] = *b"META";

const HEADER_BYTES: usize = 8 + 4 + 12 + 4;
const LAYER_RECORD_BYTES: usize = 1 + 5 * 4;
const CHECKSUM_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Float,
    Binarized,
}

/// Training provenance carried by checkpoints and trained models.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub iteration: u64,
    pub seed: u64,
    pub config: TrainConfig,
}

impl From<&Checkpoint> for Metadata {
    fn from(c: &Checkpoint) -> Self {
        Metadata {
            iteration: c.iteration,
            seed: c.config.seed,
            config: c.config.clone(),
        }
    }
}

const fn type_code(layer: &LayerSpec) -> u8 {
    match layer {
        LayerSpec::Conv { .. } => 1,
        LayerSpec::MaxPool { .. } => 2,
        LayerSpec::Fc { .. } => 3,
        LayerSpec::Relu => 4,
        LayerSpec::SoftmaxXent => 5,
    }
}

/// Size of the fixed header plus one record per layer, excluding payloads.
pub fn structure_bytes(spec: &NetworkSpec) -> usize {
    HEADER_BYTES + LAYER_RECORD_BYTES * spec.layers().len() + CHECKSUM_BYTES
}

/// Float payload: 4 bytes per weight and per bias.
pub fn float_payload_bytes(spec: &NetworkSpec) -> usize {
    4 * (spec.weight_count() + spec.bias_count())
}

/// Binarized payload: per kernel one α and its byte-padded sign bits, plus
/// 4 bytes per bias.
pub fn binarized_payload_bytes(spec: &NetworkSpec) -> usize {
    spec.param_dims()
        .iter()
        .map(|d| d.out_features * (4 + packed_len(d.kernel_len()) + 4))
        .sum()
}

/// Packed sign bytes alone, summed over all kernels.
pub fn packed_sign_bytes(spec: &NetworkSpec) -> usize {
    spec.param_dims()
        .iter()
        .map(|d| d.out_features * packed_len(d.kernel_len()))
        .sum()
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: [u8; 8], spec: &NetworkSpec) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.u32(FORMAT_VERSION);
        let input = spec.input();
        for d in [input.c, input.h, input.w, spec.layers().len()] {
            w.u32(d as u32);
        }
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn record(&mut self, code: u8, dims: [usize; 5]) {
        self.u8(code);
        for d in dims {
            self.u32(d as u32);
        }
    }

    fn metadata(&mut self, meta: Option<&Metadata>) {
        if let Some(m) = meta {
            self.buf.extend_from_slice(&META_TAG);
            self.u64(m.iteration);
            self.u64(m.seed);
            let json = serde_json::to_vec(&m.config).expect("config serializes");
            self.u32(json.len() as u32);
            self.buf.extend_from_slice(&json);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

/// Emits one record per layer; `payload` writes conv/fc contents given the
/// parametric-layer index.
fn write_layers(w: &mut Writer, spec: &NetworkSpec, mut payload: impl FnMut(&mut Writer, usize)) {
    let dims = spec.param_dims();
    let mut p = 0;
    for layer in spec.layers() {
        let code = type_code(layer);
        match *layer {
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                let d = dims[p];
                w.record(code, [d.out_features, d.in_channels, d.kh, d.kw, d.stride]);
                payload(w, p);
                p += 1;
            }
            LayerSpec::MaxPool { size, stride } => w.record(code, [0, 0, size, size, stride]),
            LayerSpec::Relu | LayerSpec::SoftmaxXent => w.record(code, [0; 5]),
        }
    }
}

pub fn encode_float(params: &NetworkParams, meta: Option<&Metadata>) -> Vec<u8> {
    let mut w = Writer::new(FLOAT_MAGIC, params.spec());
    write_layers(&mut w, params.spec(), |w, i| {
        let layer = &params.layers()[i];
        for &v in layer.weights().iter().chain(layer.biases()) {
            w.f32(v as f32);
        }
    });
    w.metadata(meta);
    w.finish()
}

pub fn encode_binarized(model: &BinarizedModel, meta: Option<&Metadata>) -> Vec<u8> {
    let mut w = Writer::new(BINARIZED_MAGIC, model.spec());
    write_layers(&mut w, model.spec(), |w, i| {
        let layer = &model.layers()[i];
        for k in layer.kernels() {
            w.f32(k.alpha());
            w.buf.extend_from_slice(k.bits());
        }
        for k in layer.kernels() {
            w.f32(k.bias());
        }
    });
    w.metadata(meta);
    w.finish()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// End of the region before the checksum.
    end: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.end - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.end - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.end - self.pos
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Identifies the format from the magic bytes.
pub fn model_kind(bytes: &[u8]) -> Result<ModelKind, FormatError> {
    let magic: [u8; 8] = match bytes.get(..8) {
        Some(m) => m.try_into().expect("8 bytes"),
        None => {
            return Err(FormatError::Truncated {
                offset: 0,
                needed: 8 - bytes.len(),
            })
        }
    };
    match magic {
        FLOAT_MAGIC => Ok(ModelKind::Float),
        BINARIZED_MAGIC => Ok(ModelKind::Binarized),
        found => Err(FormatError::BadMagic { found }),
    }
}

/// One conv/fc record as declared in the file.
struct DeclaredParams {
    index: usize,
    out: usize,
    kernel_len: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
}

/// Parses the shared structure, delegating conv/fc payloads to `payload`.
/// Returns the reconstructed spec and optional metadata after verifying the
/// checksum.
fn decode_with<T>(
    bytes: &[u8],
    want: ModelKind,
    bytes_per_kernel: impl Fn(usize) -> usize,
    mut payload: impl FnMut(&mut Reader<'_>, &DeclaredParams) -> Result<T, FormatError>,
) -> Result<(NetworkSpec, Vec<T>, Option<Metadata>), FormatError> {
    let kind = model_kind(bytes)?;
    if kind != want {
        return Err(FormatError::BadMagic {
            found: bytes[..8].try_into().expect("8 bytes"),
        });
    }
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            offset: 8,
            needed: 12 - bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_BYTES + CHECKSUM_BYTES {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: HEADER_BYTES + CHECKSUM_BYTES - bytes.len(),
        });
    }
    let mut r = Reader {
        bytes,
        pos: 12,
        end: bytes.len() - CHECKSUM_BYTES,
    };
    let input = MapShape {
        c: r.u32()? as usize,
        h: r.u32()? as usize,
        w: r.u32()? as usize,
    };
    let count = r.u32()? as usize;
    if count.saturating_mul(LAYER_RECORD_BYTES) > r.remaining() {
        return Err(FormatError::DimOverflow {
            layer: 0,
            detail: format!("{count} layer records cannot fit in {} bytes", r.remaining()),
        });
    }
    let mut layers = Vec::with_capacity(count);
    let mut items = Vec::new();
    let mut shape = input;
    for i in 0..count {
        let code = r.u8()?;
        let mut d = [0usize; 5];
        for v in &mut d {
            *v = r.u32()? as usize;
        }
        let [out, cin, kh, kw, stride] = d;
        let bad = |detail: String| FormatError::Layer { layer: i, detail };
        let spec = match code {
            1 | 3 => {
                let kernel_len = cin
                    .checked_mul(kh)
                    .and_then(|v| v.checked_mul(kw))
                    .filter(|&v| v > 0)
                    .ok_or_else(|| FormatError::DimOverflow {
                        layer: i,
                        detail: format!("kernel {cin}x{kh}x{kw}"),
                    })?;
                let need = out.checked_mul(bytes_per_kernel(kernel_len)).filter(|&n| n <= r.remaining());
                if out == 0 || need.is_none() {
                    return Err(FormatError::DimOverflow {
                        layer: i,
                        detail: format!(
                            "{out} kernels of {kernel_len} weights exceed the {} remaining bytes",
                            r.remaining()
                        ),
                    });
                }
                if cin != shape.c {
                    return Err(bad(format!("declares {cin} input channels, previous layer has {}", shape.c)));
                }
                let layer = if code == 1 {
                    if kh != kw {
                        return Err(bad(format!("non-square conv kernel {kh}x{kw}")));
                    }
                    LayerSpec::Conv { size: kh, stride, features: out }
                } else {
                    if (kh, kw, stride) != (shape.h, shape.w, 1) {
                        return Err(bad(format!("fc kernel {kh}x{kw}/{stride} does not span input {shape}")));
                    }
                    LayerSpec::Fc { features: out }
                };
                items.push(payload(
                    &mut r,
                    &DeclaredParams {
                        index: i,
                        out,
                        kernel_len,
                        in_channels: cin,
                        kh,
                        kw,
                        stride,
                    },
                )?);
                layer
            }
            2 => {
                if kh != kw || out != 0 || cin != 0 {
                    return Err(bad(format!("malformed pooling record {d:?}")));
                }
                LayerSpec::MaxPool { size: kh, stride }
            }
            4 | 5 => {
                if d != [0; 5] {
                    return Err(bad(format!("unexpected dims {d:?}")));
                }
                if code == 4 {
                    LayerSpec::Relu
                } else {
                    LayerSpec::SoftmaxXent
                }
            }
            code => return Err(FormatError::UnknownLayerType { layer: i, code }),
        };
        layers.push(spec);
        // Track the running shape so later records can be checked.
        shape = NetworkSpec::new(input, layers.clone())
            .ok()
            .and_then(|s| s.output_shapes().last().copied())
            .or_else(|| partial_shape(input, &layers))
            .ok_or_else(|| bad("layer does not fit its input".into()))?;
    }
    let meta = if r.remaining() == 0 {
        None
    } else {
        let tag = r.take(4)?;
        if tag != META_TAG {
            return Err(FormatError::TrailingBytes(r.remaining() + 4));
        }
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let len = r.u32()? as usize;
        let json = r.take(len)?;
        let config: TrainConfig =
            serde_json::from_slice(json).map_err(|e| FormatError::Metadata(e.to_string()))?;
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Some(Metadata { iteration, seed, config })
    };
    let stored = u32::from_le_bytes(bytes[r.end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..r.end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let spec = NetworkSpec::new(input, layers).map_err(|e| FormatError::Layer {
        layer: count.saturating_sub(1),
        detail: e.to_string(),
    })?;
    Ok((spec, items, meta))
}

/// Output shape of a layer prefix that is not yet a complete network.
fn partial_shape(input: MapShape, layers: &[LayerSpec]) -> Option<MapShape> {
    let mut cur = input;
    for l in layers {
        cur = match *l {
            LayerSpec::Conv { size, stride, features } => {
                if size == 0 || stride == 0 || cur.h < size || cur.w < size {
                    return None;
                }
                MapShape {
                    c: features,
                    h: (cur.h - size) / stride + 1,
                    w: (cur.w - size) / stride + 1,
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                let fits = |d: usize| size > 0 && stride > 0 && d >= size && (d - size).is_multiple_of(stride);
                if !fits(cur.h) || !fits(cur.w) {
                    return None;
                }
                MapShape {
                    c: cur.c,
                    h: (cur.h - size) / stride + 1,
                    w: (cur.w - size) / stride + 1,
                }
            }
            LayerSpec::Fc { features } => MapShape { c: features, h: 1, w: 1 },
            LayerSpec::Relu | LayerSpec::SoftmaxXent => cur,
        };
    }
    Some(cur)
}

pub fn decode_float(bytes: &[u8]) -> Result<(NetworkParams, Option<Metadata>)> {
    let (spec, layers, meta) = decode_with(
        bytes,
        ModelKind::Float,
        |n| 4 * (n + 1),
        |r, d| {
            let mut weights = Vec::with_capacity(d.out * d.kernel_len);
            for _ in 0..d.out * d.kernel_len {
                weights.push(f64::from(r.f32()?));
            }
            let mut biases = Vec::with_capacity(d.out);
            for _ in 0..d.out {
                biases.push(f64::from(r.f32()?));
            }
            ConvLayerParams::new(d.out, d.in_channels, d.kh, d.kw, d.stride, weights, biases).map_err(|e| {
                FormatError::Layer {
                    layer: d.index,
                    detail: e.to_string(),
                }
            })
        },
    )?;
    Ok((NetworkParams::new(spec, layers)?, meta))
}

pub fn decode_binarized(bytes: &[u8]) -> Result<(BinarizedModel, Option<Metadata>)> {
    let (spec, layers, meta) = decode_with(
        bytes,
        ModelKind::Binarized,
        |n| 4 + packed_len(n) + 4,
        |r, d| {
            let nbytes = packed_len(d.kernel_len);
            let mut raw = Vec::with_capacity(d.out);
            for _ in 0..d.out {
                let alpha = r.f32()?;
                raw.push((alpha, r.take(nbytes)?.to_vec()));
            }
            let mut kernels = Vec::with_capacity(d.out);
            for (k, (alpha, bits)) in raw.into_iter().enumerate() {
                let bias = r.f32()?;
                let used = d.kernel_len % 8;
                if used != 0 && bits[nbytes - 1] & (0xFF >> used) != 0 {
                    return Err(FormatError::NonzeroPadding { layer: d.index, kernel: k });
                }
                kernels.push(PackedKernel::new(alpha, bias, bits, d.kernel_len).map_err(|e| FormatError::Layer {
                    layer: d.index,
                    detail: format!("kernel {k}: {e}"),
                })?);
            }
            PackedLayer::new(d.in_channels, d.kh, d.kw, d.stride, kernels).map_err(|e| FormatError::Layer {
                layer: d.index,
                detail: e.to_string(),
            })
        },
    )?;
    Ok((BinarizedModel::new(spec, layers)?, meta))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_float(params: &NetworkParams, meta: Option<&Metadata>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_float(params, meta))
}

pub fn load_float(path: impl AsRef<Path>) -> Result<(NetworkParams, Option<Metadata>)> {
    decode_float(&read(path.as_ref())?)
}

pub fn save_binarized(model: &BinarizedModel, meta: Option<&Metadata>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_binarized(model, meta))
}

pub fn load_binarized(path: impl AsRef<Path>) -> Result<(BinarizedModel, Option<Metadata>)> {
    decode_binarized(&read(path.as_ref())?)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    save_float(&ckpt.params, Some(&Metadata::from(ckpt)), path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let (params, meta) = load_float(path)?;
    let meta = meta.ok_or_else(|| FormatError::Metadata(format!("{} has no metadata record", path.display())))?;
    Ok(Checkpoint {
        iteration: meta.iteration,
        config: meta.config,
        params,
    })
}

/// Either kind of model, as loaded from disk.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Float(NetworkParams),
    Binarized(BinarizedModel),
}

impl LoadedModel {
    pub fn spec(&self) -> &NetworkSpec {
        match self {
            LoadedModel::Float(p) => p.spec(),
            LoadedModel::Binarized(m) => m.spec(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            LoadedModel::Float(_) => ModelKind::Float,
            LoadedModel::Binarized(_) => ModelKind::Binarized,
        }
    }
}

pub fn load_any(path: impl AsRef<Path>) -> Result<(LoadedModel, Option<Metadata>)> {
    let bytes = read(path.as_ref())?;
    Ok(match model_kind(&bytes)? {
        ModelKind::Float => {
            let (p, m) = decode_float(&bytes)?;
            (LoadedModel::Float(p), m)
        }
        ModelKind::Binarized => {
            let (b, m) = decode_binarized(&bytes)?;
            (LoadedModel::Binarized(b), m)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CompressionReport {
    pub float_bytes: u64,
    pub bin_bytes: u64,
    /// `float_bytes / bin_bytes` over whole files.
    pub ratio: f64,
}

/// Compares on-disk sizes; both files must load.
pub fn compression_report(float_path: impl AsRef<Path>, bin_path: impl AsRef<Path>) -> Result<CompressionReport> {
    let f = read(float_path.as_ref())?;
    let b = read(bin_path.as_ref())?;
    decode_float(&f)?;
    decode_binarized(&b)?;
    Ok(CompressionReport {
        float_bytes: f.len() as u64,
        bin_bytes: b.len() as u64,
        ratio: f.len() as f64 / b.len() as f64,
    })
}
