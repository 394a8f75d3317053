//! Binary containers for models and Gram caches, plus atomic file writes.
//!
//! Both formats are little-endian and end with an 8-byte content hash (the
//! first 8 bytes of SHA-256 over everything before it).
//!
//! Checkpoint (`PGU1`):
//!
//! ```text
//! magic "PGU1" | version u32 | input tag u32 (0 flat, 1 image) | dims u32...
//! layer count u32 | per layer: kind tag u32, shape dims u32..., has_bias u8
//! per projectable layer: weight f64[rows·cols], bias f64[rows] if present
//! hash u64
//! ```
//!
//! Gram cache (`PGG1`):
//!
//! ```text
//! magic "PGG1" | version u32 | fingerprint [u8; 32] | layer count u32
//! per layer: d u32, patch_count u64, gram f64[d·d],
//!            has_basis u8, [u f64[d·d], sigma f64[d]]
//! hash u64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use pgu_core::nn::{InputShape, LayerParams, LayerSpec, NetworkModel};
use pgu_core::subspace::{EigenBasis, GramCache, LayerBasis, LayerGram};
use pgu_core::Matrix;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGU1";
pub const GRAM_MAGIC: &[u8; 4] = b"PGG1";
pub const FORMAT_VERSION: u32 = 1;

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn content_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let h = content_hash(&self.0);
        self.u64(h);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies the trailing hash and returns a reader over the body.
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self, String> {
        if bytes.len() < 16 {
            return Err(format!("file too short ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != magic {
            return Err(format!("bad magic {:?}, expected {:?}", &bytes[..4], std::str::from_utf8(magic).unwrap()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if content_hash(body) != stored {
            return Err("content hash mismatch".into());
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(format!("unsupported format version {version}"));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let len = n.checked_mul(8).ok_or("array length overflow")?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn flag(&mut self) -> Result<bool, String> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(format!("bad flag byte {v} at {}", self.pos - 1)),
        }
    }

    fn done(&self) -> Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

const TAG_DENSE: usize = 0;
const TAG_CONV: usize = 1;
const TAG_RELU: usize = 2;
const TAG_FLATTEN: usize = 3;

pub fn encode_checkpoint(model: &NetworkModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    match model.input_shape() {
        InputShape::Flat(n) => {
            w.u32(0);
            w.u32(n);
        }
        InputShape::Image { channels, height, width } => {
            w.u32(1);
            w.u32(channels);
            w.u32(height);
            w.u32(width);
        }
    }
    w.u32(model.specs().len());
    for spec in model.specs() {
        match *spec {
            LayerSpec::Dense { input, output, bias } => {
                w.u32(TAG_DENSE);
                w.u32(input);
                w.u32(output);
                w.u8(bias as u8);
            }
            LayerSpec::Conv2d { c_in, c_out, kh, kw, stride, pad, bias } => {
                w.u32(TAG_CONV);
                for d in [c_in, c_out, kh, kw, stride, pad] {
                    w.u32(d);
                }
                w.u8(bias as u8);
            }
            LayerSpec::Relu => w.u32(TAG_RELU),
            LayerSpec::Flatten => w.u32(TAG_FLATTEN),
        }
    }
    for p in model.params() {
        w.f64s(p.weight.as_slice());
        if let Some(b) = &p.bias {
            w.f64s(b);
        }
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkModel, String> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let input = match r.u32()? {
        0 => InputShape::Flat(r.u32()?),
        1 => InputShape::Image { channels: r.u32()?, height: r.u32()?, width: r.u32()? },
        t => return Err(format!("unknown input shape tag {t}")),
    };
    let n = r.u32()?;
    let mut specs = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let spec = match r.u32()? {
            TAG_DENSE => LayerSpec::Dense { input: r.u32()?, output: r.u32()?, bias: r.flag()? },
            TAG_CONV => LayerSpec::Conv2d {
                c_in: r.u32()?,
                c_out: r.u32()?,
                kh: r.u32()?,
                kw: r.u32()?,
                stride: r.u32()?,
                pad: r.u32()?,
                bias: r.flag()?,
            },
            TAG_RELU => LayerSpec::Relu,
            TAG_FLATTEN => LayerSpec::Flatten,
            t => return Err(format!("unknown layer tag {t}")),
        };
        specs.push(spec);
    }
    let mut params = Vec::new();
    for spec in &specs {
        let (rows, cols, bias) = match *spec {
            LayerSpec::Dense { input, output, bias } => (output, input, bias),
            LayerSpec::Conv2d { c_in, c_out, kh, kw, bias, .. } => (c_out, c_in * kh * kw, bias),
            _ => continue,
        };
        let weight = Matrix::new(rows, cols, r.f64s(rows * cols)?).map_err(|e| e.to_string())?;
        let bias = if bias { Some(r.f64s(rows)?) } else { None };
        params.push(LayerParams { weight, bias });
    }
    r.done()?;
    NetworkModel::from_parts(input, specs, params).map_err(|e| e.to_string())
}

/// A Gram cache, optionally with the eigenbasis derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramCacheFile {
    pub cache: GramCache,
    pub basis: Option<EigenBasis>,
}

pub fn encode_gram(file: &GramCacheFile) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(GRAM_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.0.extend_from_slice(&file.cache.fingerprint);
    w.u32(file.cache.layers.len());
    for (i, layer) in file.cache.layers.iter().enumerate() {
        w.u32(layer.gram.rows());
        w.u64(layer.patch_count);
        w.f64s(layer.gram.as_slice());
        match file.basis.as_ref().map(|b| &b.layers[i]) {
            Some(b) => {
                w.u8(1);
                w.f64s(b.u.as_slice());
                w.f64s(&b.sigma);
            }
            None => w.u8(0),
        }
    }
    w.finish()
}

pub fn decode_gram(bytes: &[u8]) -> Result<GramCacheFile, String> {
    let mut r = Reader::open(bytes, GRAM_MAGIC)?;
    let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n = r.u32()?;
    let mut layers = Vec::new();
    let mut bases = Vec::new();
    for i in 0..n {
        let d = r.u32()?;
        let patch_count = r.u64()?;
        let gram = Matrix::new(d, d, r.f64s(d * d)?).map_err(|e| e.to_string())?;
        if !gram.is_symmetric(1e-9) {
            return Err(format!("layer {i}: Gram is not symmetric"));
        }
        if r.flag()? {
            let u = Matrix::new(d, d, r.f64s(d * d)?).map_err(|e| e.to_string())?;
            bases.push(Some(LayerBasis { u, sigma: r.f64s(d)? }));
        } else {
            bases.push(None);
        }
        layers.push(LayerGram { gram, patch_count });
    }
    r.done()?;
    let basis = match bases.iter().filter(|b| b.is_some()).count() {
        0 => None,
        k if k == bases.len() => Some(EigenBasis { layers: bases.into_iter().flatten().collect() }),
        _ => return Err("eigenbasis present for only some layers".into()),
    };
    Ok(GramCacheFile { cache: GramCache { layers, fingerprint }, basis })
}

pub fn save_checkpoint(path: &Path, model: &NetworkModel) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkModel> {
    decode_checkpoint(&read_file(path)?).map_err(|m| CliError::corrupt(path, m))
}

pub fn save_gram(path: &Path, file: &GramCacheFile) -> Result<()> {
    atomic_write(path, &encode_gram(file))
}

pub fn load_gram(path: &Path) -> Result<GramCacheFile> {
    decode_gram(&read_file(path)?).map_err(|m| CliError::corrupt(path, m))
}
