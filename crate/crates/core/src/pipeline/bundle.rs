//! The model bundle file.
//!
//! ```text
//! bundle   := "SEQ1" version:u32 section*
//! section  := tag:[u8; 4] len:u64 payload[len]
//! ```
//!
//! All integers and floats are little-endian; floats are IEEE-754 binary64.
//! Sections appear in the order `META`, `ENCD`, `DECD` (optional), `CODE`
//! (optional), each at most once.
//!
//! * `META`: arch tag `u8` (0 LAE-2, 1 LAE-4, 2 CAE-4), seed `u64`, config
//!   SHA-256 `[u8; 32]`, encoder test accuracy `f64`.
//! * `ENCD` / `DECD`: a network. Input rank `u32` and dims `u32*`, layer
//!   count `u32`, then per layer: kind `u8`, its dims as `u32`, frozen `u8`,
//!   and for parameterised layers the weight then bias values as `f64` in
//!   row-major order. Kinds and dims: 0 Dense(inputs, outputs),
//!   1 Conv2d(in, out, kernel), 2 ConvTranspose2d(in, out, kernel), 3 Relu,
//!   4 Sigmoid, 5 Softmax, 6 MaxPool2x2, 7 Flatten,
//!   8 Unflatten(channels, height, width).
//! * `CODE`: K `u32`, dim `u32`, classes `u32`, centroids `f64[K·dim]`,
//!   cluster labels `u32[K]`, histograms `u64[K·classes]`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::nn::{Arch, Layer, LayerSpec, Network, Params};
use crate::quantizer::{Centroids, Codebook};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SEQ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Arch,
    pub seed: u64,
    pub config_hash: [u8; 32],
    /// Encoder test accuracy measured when it was trained.
    pub p_e: f64,
    pub encoder: Network,
    pub decoder: Option<Network>,
    pub codebook: Option<Codebook>,
}

fn corrupt(msg: impl Into<String>) -> PipelineError {
    PipelineError::Data(format!("corrupt bundle: {}", msg.into()))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PipelineError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, PipelineError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_network(w: &mut Writer, net: &Network) {
    w.u32(net.input_shape().len());
    for &d in net.input_shape() {
        w.u32(d);
    }
    w.u32(net.len());
    for layer in net.layers() {
        let (kind, dims): (u8, Vec<usize>) = match layer.spec {
            LayerSpec::Dense { inputs, outputs } => (0, vec![inputs, outputs]),
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => (1, vec![in_channels, out_channels, kernel]),
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel } => {
                (2, vec![in_channels, out_channels, kernel])
            }
            LayerSpec::Relu => (3, vec![]),
            LayerSpec::Sigmoid => (4, vec![]),
            LayerSpec::Softmax => (5, vec![]),
            LayerSpec::MaxPool2x2 => (6, vec![]),
            LayerSpec::Flatten => (7, vec![]),
            LayerSpec::Unflatten { channels, height, width } => (8, vec![channels, height, width]),
        };
        w.u8(kind);
        for d in dims {
            w.u32(d);
        }
        w.u8(u8::from(layer.frozen));
        if let Some(p) = &layer.params {
            w.f64s(p.values());
        }
    }
}

fn read_network(r: &mut Reader) -> Result<Network, PipelineError> {
    let rank = r.u32()?;
    if rank > 8 {
        return Err(corrupt(format!("input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let count = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let kind = r.u8()?;
        let spec = match kind {
            0 => LayerSpec::Dense { inputs: r.u32()?, outputs: r.u32()? },
            1 => LayerSpec::Conv2d { in_channels: r.u32()?, out_channels: r.u32()?, kernel: r.u32()? },
            2 => LayerSpec::ConvTranspose2d { in_channels: r.u32()?, out_channels: r.u32()?, kernel: r.u32()? },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Sigmoid,
            5 => LayerSpec::Softmax,
            6 => LayerSpec::MaxPool2x2,
            7 => LayerSpec::Flatten,
            8 => LayerSpec::Unflatten { channels: r.u32()?, height: r.u32()?, width: r.u32()? },
            k => return Err(corrupt(format!("unknown layer kind {k}"))),
        };
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(corrupt(format!("frozen flag {f}"))),
        };
        let params = match spec.param_shapes() {
            Some((ws, bs)) => {
                let wn: usize = ws.iter().product();
                let bn: usize = bs.iter().product();
                let weight = Tensor::new(ws, r.f64s(wn)?).map_err(|e| corrupt(e.to_string()))?;
                let bias = Tensor::new(bs, r.f64s(bn)?).map_err(|e| corrupt(e.to_string()))?;
                Some(Params { weight, bias })
            }
            None => None,
        };
        layers.push(Layer { spec, params, frozen });
    }
    Network::from_layers(input_shape, layers).map_err(|e| corrupt(e.to_string()))
}

fn write_codebook(w: &mut Writer, cb: &Codebook) {
    w.u32(cb.k());
    w.u32(cb.dim());
    w.u32(cb.num_classes());
    w.f64s(cb.centroids().data());
    for &l in cb.cluster_labels() {
        w.u32(l);
    }
    for h in cb.histograms() {
        for &n in h {
            w.u64(n);
        }
    }
}

fn read_codebook(r: &mut Reader) -> Result<Codebook, PipelineError> {
    let (k, dim, classes) = (r.u32()?, r.u32()?, r.u32()?);
    let centroids = Centroids::new(r.f64s(k.checked_mul(dim).ok_or_else(|| corrupt("size overflow"))?)?, k, dim)
        .map_err(|e| corrupt(e.to_string()))?;
    let labels = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let mut histograms = Vec::with_capacity(k);
    for _ in 0..k {
        histograms.push((0..classes).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?);
    }
    Codebook::from_parts(centroids, labels, histograms, classes).map_err(|e| corrupt(e.to_string()))
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let mut meta = Writer(Vec::new());
        meta.u8(self.arch.tag());
        meta.u64(self.seed);
        meta.0.extend_from_slice(&self.config_hash);
        meta.f64s([&self.p_e]);
        section(&mut out, b"META", meta.0);

        let mut enc = Writer(Vec::new());
        write_network(&mut enc, &self.encoder);
        section(&mut out, b"ENCD", enc.0);

        if let Some(dec) = &self.decoder {
            let mut w = Writer(Vec::new());
            write_network(&mut w, dec);
            section(&mut out, b"DECD", w.0);
        }
        if let Some(cb) = &self.codebook {
            let mut w = Writer(Vec::new());
            write_codebook(&mut w, cb);
            section(&mut out, b"CODE", w.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let order: [&[u8; 4]; 4] = [b"META", b"ENCD", b"DECD", b"CODE"];
        let mut next = 0;
        let mut meta = None;
        let mut encoder = None;
        let mut decoder = None;
        let mut codebook = None;
        while !r.done() {
            let tag = r.take(4)?;
            let len = usize::try_from(r.u64()?).map_err(|_| corrupt("section too long"))?;
            let mut body = Reader { buf: r.take(len)?, pos: 0 };
            let slot = order[next..]
                .iter()
                .position(|t| t.as_slice() == tag)
                .ok_or_else(|| corrupt(format!("unexpected section {:?}", String::from_utf8_lossy(tag))))?;
            next += slot + 1;
            match tag {
                b"META" => {
                    let arch_tag = body.u8()?;
                    let arch = Arch::from_tag(arch_tag).ok_or_else(|| corrupt(format!("arch tag {arch_tag}")))?;
                    let seed = body.u64()?;
                    let hash: [u8; 32] = body.take(32)?.try_into().unwrap();
                    let p_e = body.f64()?;
                    meta = Some((arch, seed, hash, p_e));
                }
                b"ENCD" => encoder = Some(read_network(&mut body)?),
                b"DECD" => decoder = Some(read_network(&mut body)?),
                _ => codebook = Some(read_codebook(&mut body)?),
            }
            if !body.done() {
                return Err(corrupt(format!("trailing bytes in {}", String::from_utf8_lossy(tag))));
            }
        }
        let (arch, seed, config_hash, p_e) = meta.ok_or_else(|| corrupt("missing META"))?;
        Ok(Self {
            arch,
            seed,
            config_hash,
            p_e,
            encoder: encoder.ok_or_else(|| corrupt("missing ENCD"))?,
            decoder,
            codebook,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String, PipelineError> {
        let bytes = self.to_bytes();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        std::fs::write(path, &bytes).map_err(|e| PipelineError::io(path, e))?;
        Ok(bundle_hash(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn hash(&self) -> String {
        bundle_hash(&self.to_bytes())
    }
}

/// Hex SHA-256 of serialised bundle bytes.
pub fn bundle_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::mirror_decoder_spec;
    use crate::nn::{EMBEDDING_DIM, WeightInit};

    fn sample(with_extras: bool) -> ModelBundle {
        let arch = Arch::Lae2;
        let encoder = Network::new(arch.input_shape(), arch.encoder_specs(), WeightInit::He, 1).unwrap();
        let (decoder, codebook) = if with_extras {
            let dec = Network::new(vec![EMBEDDING_DIM], mirror_decoder_spec(arch), WeightInit::He, 2).unwrap();
            let c = Centroids::new(vec![0.5, -1.0, 2.0, 3.0], 2, 2).unwrap();
            let cb = Codebook::from_parts(c, vec![3, 1], vec![vec![0, 1, 0, 4], vec![0, 2, 0, 0]], 4).unwrap();
            (Some(dec), Some(cb))
        } else {
            (None, None)
        };
        ModelBundle {
            arch,
            seed: 42,
            config_hash: [7; 32],
            p_e: 0.98,
            encoder,
            decoder,
            codebook,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for extras in [false, true] {
            let b = sample(extras);
            let bytes = b.to_bytes();
            let back = ModelBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(true).to_bytes();
        assert!(ModelBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelBundle::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelBundle::from_bytes(&extra).is_err());
        // Header followed directly by ENCD: META missing.
        let mut no_meta = bytes[..8].to_vec();
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        no_meta.extend_from_slice(&bytes[20 + meta_len..]);
        assert!(ModelBundle::from_bytes(&no_meta).is_err());
    }
}
