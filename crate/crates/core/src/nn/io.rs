//! Binary model format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      b"YFNN"
//! version    u32 (= 1)
//! input      u32 rank, then rank x u32 dims
//! layers     u32 count, then per layer: u8 tag + u32 fields
//!              1 dense(inputs, outputs)   2 conv3x3(in, out)
//!              3 maxpool2x2               4 upsample2x2
//!              5 batchnorm(channels)      6 relu        7 sigmoid
//!              8 crop(h, w)               9 pad(h, w)
//!             10 reshape(rank, dims...)
//! params     u64 count, then count x f64 in flattening order
//! running    per batch-norm layer in order: channels x f64 mean, channels x f64 var
//! ```

use super::layer::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"YFNN";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.input_shape().len());
        for &d in self.input_shape() {
            put_u32(&mut out, d);
        }
        put_u32(&mut out, self.layers().len());
        for layer in self.layers() {
            match layer {
                LayerSpec::Dense { inputs, outputs } => {
                    out.push(1);
                    put_u32(&mut out, *inputs);
                    put_u32(&mut out, *outputs);
                }
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    out.push(2);
                    put_u32(&mut out, *in_channels);
                    put_u32(&mut out, *out_channels);
                }
                LayerSpec::MaxPool2x2 => out.push(3),
                LayerSpec::Upsample2x2 => out.push(4),
                LayerSpec::BatchNorm { channels } => {
                    out.push(5);
                    put_u32(&mut out, *channels);
                }
                LayerSpec::Relu => out.push(6),
                LayerSpec::Sigmoid => out.push(7),
                LayerSpec::Crop { height, width } => {
                    out.push(8);
                    put_u32(&mut out, *height);
                    put_u32(&mut out, *width);
                }
                LayerSpec::Pad { height, width } => {
                    out.push(9);
                    put_u32(&mut out, *height);
                    put_u32(&mut out, *width);
                }
                LayerSpec::Reshape { shape } => {
                    out.push(10);
                    put_u32(&mut out, shape.len());
                    for &d in shape {
                        put_u32(&mut out, d);
                    }
                }
            }
        }
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for stats in self.running_stats() {
            for v in stats.mean.iter().chain(&stats.var) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let rank = r.u32()?;
        let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_layers = r.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let tag = r.take(1)?[0];
            layers.push(match tag {
                1 => LayerSpec::Dense {
                    inputs: r.u32()?,
                    outputs: r.u32()?,
                },
                2 => LayerSpec::Conv3x3 {
                    in_channels: r.u32()?,
                    out_channels: r.u32()?,
                },
                3 => LayerSpec::MaxPool2x2,
                4 => LayerSpec::Upsample2x2,
                5 => LayerSpec::BatchNorm { channels: r.u32()? },
                6 => LayerSpec::Relu,
                7 => LayerSpec::Sigmoid,
                8 => LayerSpec::Crop {
                    height: r.u32()?,
                    width: r.u32()?,
                },
                9 => LayerSpec::Pad {
                    height: r.u32()?,
                    width: r.u32()?,
                },
                10 => {
                    let rank = r.u32()?;
                    LayerSpec::Reshape {
                        shape: (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?,
                    }
                }
                t => return Err(Error::Format(format!("unknown layer tag {t}"))),
            });
        }
        let mut net = Network::new(input_shape, layers).map_err(|e| Error::Format(e.to_string()))?;
        let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        if count != net.param_count() {
            return Err(Error::Format(format!(
                "layers need {} parameters, file has {count}",
                net.param_count()
            )));
        }
        for p in net.params_mut() {
            *p = r.f64()?;
        }
        for stats in net.running_stats_mut() {
            for v in stats.mean.iter_mut() {
                *v = r.f64()?;
            }
            for v in stats.var.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(net)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Network {
        let mut net = Network::new(
            vec![1, 13, 15],
            vec![
                LayerSpec::Pad { height: 16, width: 16 },
                LayerSpec::Conv3x3 {
                    in_channels: 1,
                    out_channels: 2,
                },
                LayerSpec::Relu,
                LayerSpec::BatchNorm { channels: 2 },
                LayerSpec::MaxPool2x2,
                LayerSpec::Upsample2x2,
                LayerSpec::Conv3x3 {
                    in_channels: 2,
                    out_channels: 1,
                },
                LayerSpec::Sigmoid,
                LayerSpec::Crop { height: 13, width: 15 },
                LayerSpec::Reshape { shape: vec![195] },
                LayerSpec::Dense {
                    inputs: 195,
                    outputs: 3,
                },
            ],
        )
        .unwrap();
        net.initialize(8);
        net.running_stats_mut().next().unwrap().mean[1] = 0.25;
        net
    }

    #[test]
    fn round_trip() {
        let net = sample();
        let bytes = net.to_bytes();
        let back = Network::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Network::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Network::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Network::from_bytes(&long).is_err());
    }
}
