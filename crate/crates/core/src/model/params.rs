//! Named parameter storage and per-forward binding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{
    Affine, AttentionWeights, ConvWeights, CrossWeights, EncoderLayerWeights, GatWeights, HeadWeights, Norm,
    PatchWeights,
};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_id_for, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }
}

/// Every trainable array of the network, keyed by a dotted name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    map: BTreeMap<String, Param>,
}

/// Scale applied to the init bound of the two output layers.
pub const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Clone, Copy)]
enum Init {
    Uniform { fan_in: usize },
    /// Uniform with the bound shrunk by [`OUTPUT_INIT_GAIN`]; keeps untrained
    /// logits near zero so the first loss sits close to ln K.
    Output { fan_in: usize },
    Zero,
    One,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases and
    /// positional embeddings zero, norm scales one. Each tensor draws from its
    /// own stream so adding a layer leaves the others unchanged.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut set = Self::new();
        let d = cfg.embed_dim;
        let p = cfg.patch_size;
        let hidden = cfg.mlp_hidden();
        let mut add = |name: String, shape: &[usize], init: Init| {
            let param = match init {
                Init::Zero => Param::zeros(shape),
                Init::One => Param::filled(shape, 1.0),
                Init::Uniform { fan_in } | Init::Output { fan_in } => {
                    let gain = if matches!(init, Init::Output { .. }) { OUTPUT_INIT_GAIN } else { 1.0 };
                    let bound = gain / math::sqrt(fan_in as f64);
                    let mut rng = RngStream::new(seed, stream_id_for(&name));
                    let n = shape.iter().product();
                    Param {
                        shape: shape.to_vec(),
                        data: (0..n).map(|_| rng.uniform(-bound, bound)).collect(),
                    }
                }
            };
            set.map.insert(name, param);
        };

        add("patch.weight".into(), &[d, 3, p, p], Init::Uniform { fan_in: 3 * p * p });
        add("patch.bias".into(), &[d], Init::Zero);
        add("patch.pos".into(), &[cfg.num_tokens(), d], Init::Zero);

        for l in 0..cfg.num_encoder_layers {
            let pre = format!("enc.{l}");
            for ln in ["ln1", "ln2"] {
                add(format!("{pre}.{ln}.gamma"), &[d], Init::One);
                add(format!("{pre}.{ln}.beta"), &[d], Init::Zero);
            }
            for proj in ["q", "k", "v", "out"] {
                add(format!("{pre}.attn.{proj}.weight"), &[d, d], Init::Uniform { fan_in: d });
                add(format!("{pre}.attn.{proj}.bias"), &[d], Init::Zero);
            }
            add(format!("{pre}.fc1.weight"), &[d, hidden], Init::Uniform { fan_in: d });
            add(format!("{pre}.fc1.bias"), &[hidden], Init::Zero);
            add(format!("{pre}.fc2.weight"), &[hidden, d], Init::Uniform { fan_in: hidden });
            add(format!("{pre}.fc2.bias"), &[d], Init::Zero);
        }

        let mut c_in = 3;
        for (i, &c) in cfg.cnn_channels.iter().enumerate() {
            add(format!("cnn.{i}.weight"), &[c, c_in, 3, 3], Init::Uniform { fan_in: c_in * 9 });
            add(format!("cnn.{i}.bias"), &[c], Init::Zero);
            c_in = c;
        }

        add("cross.kv.weight".into(), &[c_in, d], Init::Uniform { fan_in: c_in });
        add("cross.kv.bias".into(), &[d], Init::Zero);
        for proj in ["q", "k", "v", "out"] {
            add(format!("cross.attn.{proj}.weight"), &[d, d], Init::Uniform { fan_in: d });
            add(format!("cross.attn.{proj}.bias"), &[d], Init::Zero);
        }
        add("cross.fuse.weight".into(), &[2 * d, d], Init::Uniform { fan_in: 2 * d });
        add("cross.fuse.bias".into(), &[d], Init::Zero);

        add("gat.weight".into(), &[d, d], Init::Uniform { fan_in: d });
        add("gat.a_src".into(), &[d, 1], Init::Uniform { fan_in: 2 * d });
        add("gat.a_dst".into(), &[d, 1], Init::Uniform { fan_in: 2 * d });

        add("head.ln.gamma".into(), &[d], Init::One);
        add("head.ln.beta".into(), &[d], Init::Zero);
        add("head.out.weight".into(), &[d, cfg.num_classes], Init::Output { fan_in: d });
        add("head.out.bias".into(), &[cfg.num_classes], Init::Zero);

        add("rot.weight".into(), &[d, cfg.num_rotations], Init::Output { fan_in: d });
        add("rot.bias".into(), &[cfg.num_rotations], Init::Zero);
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let n: usize = param.shape.iter().product();
        if n != param.data.len() || param.shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "parameter shape {:?} does not hold {} values",
                param.shape,
                param.data.len()
            )));
        }
        self.map.insert(name.into(), param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Same names and shapes as `self`, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Param::zeros(&v.shape)))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.map.len() == other.map.len()
            && self
                .map
                .iter()
                .zip(&other.map)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape == b.shape)
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.same_layout(other)
            && self.map.values().zip(other.map.values()).all(|(a, b)| {
                a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Fresh leaf tensors for one forward pass. With `trainable` set every
    /// leaf collects a gradient.
    pub fn bind(&self, trainable: bool) -> Bindings {
        let map = self
            .map
            .iter()
            .map(|(k, p)| {
                let t = if trainable {
                    Tensor::param(&p.shape, p.data.clone())
                } else {
                    Tensor::new(&p.shape, p.data.clone())
                };
                (k.clone(), t.expect("parameter shapes are validated on insert"))
            })
            .collect();
        Bindings { map }
    }
}

/// Parameters bound as tensors for one forward pass.
pub struct Bindings {
    map: BTreeMap<String, Tensor>,
}

impl Bindings {
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Gradient of every bound parameter after `backward`, zeros where none arrived.
    pub fn grads(&self) -> ParamSet {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        Param {
                            shape: t.shape().to_vec(),
                            data: t.grad_or_zeros(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn affine(&self, prefix: &str) -> Result<Affine> {
        Ok(Affine {
            weight: self.tensor(&format!("{prefix}.weight"))?,
            bias: self.tensor(&format!("{prefix}.bias"))?,
        })
    }

    pub fn norm(&self, prefix: &str) -> Result<Norm> {
        Ok(Norm {
            gamma: self.tensor(&format!("{prefix}.gamma"))?,
            beta: self.tensor(&format!("{prefix}.beta"))?,
        })
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionWeights> {
        Ok(AttentionWeights {
            q: self.affine(&format!("{prefix}.q"))?,
            k: self.affine(&format!("{prefix}.k"))?,
            v: self.affine(&format!("{prefix}.v"))?,
            out: self.affine(&format!("{prefix}.out"))?,
        })
    }

    pub fn patch(&self) -> Result<PatchWeights> {
        Ok(PatchWeights {
            conv: ConvWeights {
                weight: self.tensor("patch.weight")?,
                bias: self.tensor("patch.bias")?,
            },
            pos: self.tensor("patch.pos")?,
        })
    }

    pub fn encoder_layer(&self, l: usize) -> Result<EncoderLayerWeights> {
        let pre = format!("enc.{l}");
        Ok(EncoderLayerWeights {
            ln1: self.norm(&format!("{pre}.ln1"))?,
            attn: self.attention(&format!("{pre}.attn"))?,
            ln2: self.norm(&format!("{pre}.ln2"))?,
            fc1: self.affine(&format!("{pre}.fc1"))?,
            fc2: self.affine(&format!("{pre}.fc2"))?,
        })
    }

    pub fn cnn_block(&self, i: usize) -> Result<ConvWeights> {
        let a = self.affine(&format!("cnn.{i}"))?;
        Ok(ConvWeights {
            weight: a.weight,
            bias: a.bias,
        })
    }

    pub fn cross(&self) -> Result<CrossWeights> {
        Ok(CrossWeights {
            kv: self.affine("cross.kv")?,
            attn: self.attention("cross.attn")?,
            fuse: self.affine("cross.fuse")?,
        })
    }

    pub fn gat(&self) -> Result<GatWeights> {
        Ok(GatWeights {
            weight: self.tensor("gat.weight")?,
            a_src: self.tensor("gat.a_src")?,
            a_dst: self.tensor("gat.a_dst")?,
        })
    }

    pub fn head(&self) -> Result<HeadWeights> {
        Ok(HeadWeights {
            norm: self.norm("head.ln")?,
            out: self.affine("head.out")?,
        })
    }

    pub fn rotation(&self) -> Result<Affine> {
        self.affine("rot")
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().map(ToString::to_string).collect()
    }
}
