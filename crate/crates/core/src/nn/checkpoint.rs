use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Layer, LayerSpec, MlpParams, Normalization, RmsProp};
use crate::container::{Reader, RecordTag, Writer};
use crate::error::{Error, Result};

/// Model parameters, optional optimizer state and the JSON config that
/// produced them, persisted as a tagged `BSEC` record (tag 3).
///
/// Payload: config JSON string; `input_dim`; layer count; per layer the spec
/// (`width` u64, activation u8, normalization u8, dropout f64) followed by
/// `W` (row-major), `b`, and for normalized layers `γ`, `β`, plus the
/// running mean and variance for batch norm. Then a `u8` optimizer flag
/// (0 none, 1 RMSprop) and, for RMSprop, the learning rate, tensor count
/// and each accumulator (length-prefixed).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub optimizer: Option<RmsProp>,
    pub config_json: String,
}

const LIMIT: u64 = 1 << 30;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn norm_code(n: Normalization) -> u8 {
    match n {
        Normalization::None => 0,
        Normalization::BatchNorm => 1,
        Normalization::LayerNorm => 2,
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(out);
        let write = |w: &mut Writer<W>| -> std::io::Result<()> {
            w.tagged_header(RecordTag::Checkpoint)?;
            w.str(&self.config_json)?;
            w.u64(self.params.input_dim as u64)?;
            w.u64(self.params.layers.len() as u64)?;
            for l in &self.params.layers {
                w.u64(l.spec.width as u64)?;
                w.u8(activation_code(l.spec.activation))?;
                w.u8(norm_code(l.spec.normalization))?;
                w.f64(l.spec.dropout_rate)?;
                w.f64s(l.w.as_slice().expect("standard layout"))?;
                w.f64s(l.b.as_slice().expect("standard layout"))?;
                for t in [&l.gamma, &l.beta, &l.running_mean, &l.running_var].into_iter().flatten() {
                    w.f64s(t.as_slice().expect("standard layout"))?;
                }
            }
            match &self.optimizer {
                None => w.u8(0)?,
                Some(opt) => {
                    w.u8(1)?;
                    w.f64(opt.learning_rate)?;
                    w.u64(opt.acc.len() as u64)?;
                    for a in &opt.acc {
                        w.u64(a.len() as u64)?;
                        w.f64s(a)?;
                    }
                }
            }
            Ok(())
        };
        write(&mut w).map_err(|e| Error::format("checkpoint", e.to_string()))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input, "checkpoint");
        r.tagged_header(RecordTag::Checkpoint)?;
        let config_json = r.str()?;
        let input_dim = r.count(LIMIT)?;
        let n_layers = r.count(1 << 16)?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = input_dim;
        for _ in 0..n_layers {
            let width = r.count(LIMIT)?;
            let activation = match r.u8()? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                c => return Err(Error::format("checkpoint", format!("bad activation code {c}"))),
            };
            let normalization = match r.u8()? {
                0 => Normalization::None,
                1 => Normalization::BatchNorm,
                2 => Normalization::LayerNorm,
                c => return Err(Error::format("checkpoint", format!("bad normalization code {c}"))),
            };
            let dropout_rate = r.f64()?;
            if fan_in.checked_mul(width).is_none_or(|n| n as u64 > LIMIT) {
                return Err(Error::format("checkpoint", "layer too large"));
            }
            let w = Array2::from_shape_vec((fan_in, width), r.f64s(fan_in * width)?)
                .map_err(|e| Error::format("checkpoint", e.to_string()))?;
            let b = Array1::from_vec(r.f64s(width)?);
            let mut vec_if = |present: bool| -> Result<Option<Array1<f64>>> {
                Ok(if present { Some(Array1::from_vec(r.f64s(width)?)) } else { None })
            };
            let normed = normalization != Normalization::None;
            let bn = normalization == Normalization::BatchNorm;
            let gamma = vec_if(normed)?;
            let beta = vec_if(normed)?;
            let running_mean = vec_if(bn)?;
            let running_var = vec_if(bn)?;
            layers.push(Layer {
                spec: LayerSpec {
                    width,
                    activation,
                    normalization,
                    dropout_rate,
                },
                w,
                b,
                gamma,
                beta,
                running_mean,
                running_var,
            });
            fan_in = width;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let learning_rate = r.f64()?;
                let n = r.count(1 << 20)?;
                let mut acc = Vec::with_capacity(n);
                for _ in 0..n {
                    let len = r.count(LIMIT)?;
                    acc.push(r.f64s(len)?);
                }
                Some(RmsProp { learning_rate, acc })
            }
            c => return Err(Error::format("checkpoint", format!("bad optimizer flag {c}"))),
        };
        r.finish()?;
        Ok(Self {
            params: MlpParams { input_dim, layers },
            optimizer,
            config_json,
        })
    }
}
