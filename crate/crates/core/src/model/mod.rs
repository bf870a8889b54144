//! The hybrid graph-transformer network.
//!
//! ```text
//! image ─┬─ patch_embed ─ transformer_encoder ─┐
//!        └─ cnn_branch ────────────────────────┴─ cross_attention_fuse
//!            ─ build_graph ─ graph_attention ─ global_average_pool ─┬─ classify_head
//!                                                                   └─ rotation_head
//! ```

mod layers;
mod params;

pub use layers::*;
pub use params::{Bindings, Param, ParamSet};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

/// Elementwise nonlinearity after graph aggregation.
pub const GRAPH_ACTIVATION: Activation = Activation::Gelu;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphConnectivity {
    #[default]
    Grid8,
}

impl GraphConnectivity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid8" => Ok(Self::Grid8),
            other => Err(Error::Config(format!("unknown graph connectivity `{other}`"))),
        }
    }
}

impl fmt::Display for GraphConnectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("grid8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub mlp_ratio: f64,
    pub cnn_channels: Vec<usize>,
    pub dropout_p: f64,
    pub graph_connectivity: GraphConnectivity,
    pub gat_leaky_slope: f64,
    pub num_classes: usize,
    pub num_rotations: usize,
    pub rotation_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 128,
            num_heads: 4,
            num_encoder_layers: 4,
            mlp_ratio: 4.0,
            cnn_channels: vec![16, 32, 64],
            dropout_p: 0.1,
            graph_connectivity: GraphConnectivity::Grid8,
            gat_leaky_slope: 0.2,
            num_classes: 5,
            num_rotations: 4,
            rotation_loss_weight: 0.1,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration used for gradient checks and quick tests.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            patch_size: 16,
            embed_dim: 8,
            num_heads: 2,
            num_encoder_layers: 1,
            cnn_channels: vec![4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return cfg(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return cfg(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_encoder_layers == 0 {
            return cfg("num_encoder_layers must be at least 1".into());
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return cfg(format!("mlp_ratio {} gives no hidden units", self.mlp_ratio));
        }
        if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
            return cfg(format!("cnn_channels {:?} must be non-empty and positive", self.cnn_channels));
        }
        if self.cnn_channels.len() >= usize::BITS as usize || self.image_size >> self.cnn_channels.len() == 0 {
            return Err(Error::Geometry(format!(
                "{}px image is too small for {} pooling blocks",
                self.image_size,
                self.cnn_channels.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return cfg(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.gat_leaky_slope.is_finite() && self.gat_leaky_slope >= 0.0) {
            return cfg(format!("gat_leaky_slope must be non-negative, got {}", self.gat_leaky_slope));
        }
        if self.num_classes < 2 {
            return cfg(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_rotations != 4 {
            return cfg(format!("num_rotations is fixed at 4, got {}", self.num_rotations));
        }
        if !(self.rotation_loss_weight.is_finite() && self.rotation_loss_weight >= 0.0) {
            return cfg(format!(
                "rotation_loss_weight must be non-negative, got {}",
                self.rotation_loss_weight
            ));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn mlp_hidden(&self) -> usize {
        crate::math::floor(self.mlp_ratio * self.embed_dim as f64 + 0.5) as usize
    }

    /// Spatial side of the CNN branch output.
    pub fn cnn_output_side(&self) -> usize {
        self.image_size >> self.cnn_channels.len()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[B, num_classes]`
    pub class_logits: Tensor,
    /// `[B, num_rotations]`
    pub rot_logits: Tensor,
}

/// Full forward pass over bound parameters. `x` is `[B, 3, S, S]` with `S`
/// the configured image size.
pub fn model_forward(cfg: &ModelConfig, params: &Bindings, x: &Tensor, ctx: &mut ForwardCtx) -> Result<ModelOutput> {
    let s = cfg.image_size;
    if x.rank() != 4 || x.shape()[1] != 3 || x.shape()[2] != s || x.shape()[3] != s {
        return Err(Error::Geometry(format!(
            "model expects [B, 3, {s}, {s}] input, got {:?}",
            x.shape()
        )));
    }
    let grid = patch_embed(x, &params.patch()?, cfg.patch_size)?;
    let layers = (0..cfg.num_encoder_layers)
        .map(|l| params.encoder_layer(l))
        .collect::<Result<Vec<_>>>()?;
    let enc = transformer_encoder(&grid.tokens, &layers, cfg.num_heads, cfg.dropout_p, ctx)?;

    let blocks = (0..cfg.cnn_channels.len())
        .map(|i| params.cnn_block(i))
        .collect::<Result<Vec<_>>>()?;
    let cnn = cnn_branch(x, &blocks, cfg.dropout_p, ctx)?;

    let fused = cross_attention_fuse(&cnn, &enc, &params.cross()?, cfg.num_heads, ctx)?;
    let graph = build_graph(&TokenGrid {
        tokens: fused,
        grid_h: grid.grid_h,
        grid_w: grid.grid_w,
    });
    let nodes = graph_attention(&graph, &params.gat()?, cfg.gat_leaky_slope, GRAPH_ACTIVATION, ctx)?;
    let pooled = global_average_pool(&nodes)?;
    Ok(ModelOutput {
        class_logits: classify_head(&pooled, &params.head()?, cfg.dropout_p, ctx)?,
        rot_logits: rotation_head(&pooled, &params.rotation()?)?,
    })
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HgtNet {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl HgtNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamSet::init(&cfg, seed)?;
        Ok(Self { cfg, params })
    }

    /// Forward with constant parameters (no gradients collected).
    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<ModelOutput> {
        model_forward(&self.cfg, &self.params.bind(false), x, ctx)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<ModelOutput> {
        self.forward(x, &mut ForwardCtx::eval())
    }
}

#[cfg(test)]
mod tests;
