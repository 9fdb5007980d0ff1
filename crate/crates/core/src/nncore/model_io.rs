//! Binary model container.
//!
//! Layout (all integers little-endian):
//!   magic "NSTR" | format version u32 | input C,H,W u32 | n_classes u32
//!   | layer count u32 | per layer: kind u8, kh u32, kw u32, stride u32,
//!   out u32 | rng seed u64 | per learnable layer in order: weight count
//!   u64, f32 weights, bias count u64, f32 biases.
//!
//! `load_model(save_model(x)) == x` bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::network::{LayerParams, LayerSpec, NetworkSpec, NetworkState};
use crate::nncore::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"NSTR";
pub const MODEL_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_MAXPOOL: u8 = 1;
const KIND_FC: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_SOFTMAX: u8 = 4;

struct CountingWriter<W: Write> {
    inner: W,
}

impl<W: Write> CountingWriter<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f32s(&mut self, vs: &[f32]) -> Result<()> {
        for &v in vs {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct CountingReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(at, format!("truncated while reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.take(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn layer_fields(layer: &LayerSpec) -> (u8, u32, u32, u32, u32) {
    match *layer {
        LayerSpec::Conv {
            out_channels,
            kernel: (kh, kw),
            stride,
        } => (KIND_CONV, kh as u32, kw as u32, stride as u32, out_channels as u32),
        LayerSpec::MaxPool {
            kernel: (kh, kw),
            stride,
        } => (KIND_MAXPOOL, kh as u32, kw as u32, stride as u32, 0),
        LayerSpec::FullyConnected { out_features } => {
            (KIND_FC, 0, 0, 0, out_features as u32)
        }
        LayerSpec::Relu => (KIND_RELU, 0, 0, 0, 0),
        LayerSpec::Softmax => (KIND_SOFTMAX, 0, 0, 0, 0),
    }
}

pub fn write_model<W: Write>(
    writer: W,
    spec: &NetworkSpec,
    state: &NetworkState<f32>,
) -> Result<()> {
    if state.params.len() != spec.layers.len() {
        return Err(Error::Usage(
            "network state does not belong to this spec".into(),
        ));
    }
    let mut w = CountingWriter { inner: writer };
    w.inner.write_all(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    w.u32(spec.input_shape.0 as u32)?;
    w.u32(spec.input_shape.1 as u32)?;
    w.u32(spec.input_shape.2 as u32)?;
    w.u32(spec.n_classes as u32)?;
    w.u32(spec.layers.len() as u32)?;
    for layer in &spec.layers {
        let (kind, kh, kw, stride, out) = layer_fields(layer);
        w.u8(kind)?;
        w.u32(kh)?;
        w.u32(kw)?;
        w.u32(stride)?;
        w.u32(out)?;
    }
    w.u64(state.rng_seed)?;
    for params in state.params.iter().flatten() {
        w.u64(params.weights.len() as u64)?;
        w.f32s(params.weights.data())?;
        w.u64(params.bias.len() as u64)?;
        w.f32s(params.bias.data())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<(NetworkSpec, NetworkState<f32>)> {
    let mut r = CountingReader {
        inner: reader,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected {MODEL_MAGIC:?}"),
        ));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported model version {version}"),
        ));
    }
    let c = r.u32("input channels")? as usize;
    let h = r.u32("input height")? as usize;
    let w_ = r.u32("input width")? as usize;
    let n_classes = r.u32("n_classes")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let at = r.offset;
        let kind = r.u8("layer kind")?;
        let kh = r.u32("kernel height")? as usize;
        let kw = r.u32("kernel width")? as usize;
        let stride = r.u32("stride")? as usize;
        let out = r.u32("out extent")? as usize;
        layers.push(match kind {
            KIND_CONV => LayerSpec::Conv {
                out_channels: out,
                kernel: (kh, kw),
                stride,
            },
            KIND_MAXPOOL => LayerSpec::MaxPool {
                kernel: (kh, kw),
                stride,
            },
            KIND_FC => LayerSpec::FullyConnected { out_features: out },
            KIND_RELU => LayerSpec::Relu,
            KIND_SOFTMAX => LayerSpec::Softmax,
            other => {
                return Err(Error::format(
                    at,
                    format!("unknown layer kind {other} at layer {i}"),
                ))
            }
        });
    }
    let spec = NetworkSpec {
        input_shape: (c, h, w_),
        layers,
        n_classes,
    };
    let shapes = spec
        .propagate_shapes()
        .map_err(|e| Error::format(r.offset, format!("stored spec is invalid: {e}")))?;
    drop(shapes);

    let rng_seed = r.u64("rng seed")?;
    // template gives the expected parameter shapes
    let template = NetworkState::<f32>::init(&spec, rng_seed)?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for (i, slot) in template.params.iter().enumerate() {
        match slot {
            None => params.push(None),
            Some(t) => {
                let at = r.offset;
                let wn = r.u64("weight count")? as usize;
                if wn != t.weights.len() {
                    return Err(Error::format(
                        at,
                        format!(
                            "layer {i}: stored {wn} weights, spec requires {}",
                            t.weights.len()
                        ),
                    ));
                }
                let weights = r.f32s(wn, "weights")?;
                let at = r.offset;
                let bn = r.u64("bias count")? as usize;
                if bn != t.bias.len() {
                    return Err(Error::format(
                        at,
                        format!("layer {i}: stored {bn} biases, spec requires {}", t.bias.len()),
                    ));
                }
                let bias = r.f32s(bn, "biases")?;
                params.push(Some(LayerParams {
                    weights: Tensor::new(t.weights.shape(), weights)?,
                    bias: Tensor::new(t.bias.shape(), bias)?,
                }));
            }
        }
    }
    let velocity = template.velocity;
    Ok((
        spec,
        NetworkState {
            params,
            velocity,
            rng_seed,
        },
    ))
}

pub fn save_model(path: &Path, spec: &NetworkSpec, state: &NetworkState<f32>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_model(&mut w, spec, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(NetworkSpec, NetworkState<f32>)> {
    let file = File::open(path)?;
    read_model(BufReader::new(file))
}
