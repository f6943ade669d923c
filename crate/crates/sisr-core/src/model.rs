//! The residual super-resolution network: configuration, channel
//! arithmetic, graph assembly, and forward passes.
//!
//! The network is a stack of encoder/decoder residual units behind one
//! global skip connection. Unit `n` sees what lower-order units could not
//! reconstruct; its output is projected back down by a 1x1 block and added
//! into the unit below. The outermost add makes an all-zero parameter set
//! compute the exact identity map, so training only ever has to learn the
//! residual between the upsampled input and the target.

use crate::net::{Graph, NodeId, Scalar, Tensor};
use crate::{Error, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Default unit shapes, in order: (filters, conv layers per block).
const DEFAULT_SHAPES: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];

/// How many units a config may hold.
pub const MAX_UNITS: usize = 5;

/// One residual unit: `layers` repetitions of conv3x3(`filters`) +
/// activation in both the encoder and the decoder block, plus a trailing
/// 1x1 projection block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualUnitSpec {
    /// 1-based position in the stack.
    pub order: usize,
    pub filters: usize,
    pub layers: usize,
}

/// Nonlinearity between convolutions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Border handling of every convolution; output size always equals input
/// size ("same" padding).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Zero,
}

/// Shape of the whole network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Units in increasing order; length 1..=5, orders consecutive from 1.
    pub units: Vec<ResidualUnitSpec>,
    /// With dense wiring, each encoder sees every lower decoder output and
    /// each decoder sees the raw input plus every encoder output so far.
    pub dense: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub padding: Padding,
}

/// One convolution layer of the built network: its parameter base name,
/// weight shape `[cout, cin, kh, kw]`, and whether it carries a bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub weight: [usize; 4],
    pub bias: bool,
}

impl LayerSpec {
    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn weight_len(&self) -> usize {
        self.weight.iter().product()
    }
}

impl ModelConfig {
    /// All five default units, densely wired.
    pub fn full() -> ModelConfig {
        ModelConfig::from_shapes(&DEFAULT_SHAPES, true).unwrap()
    }

    /// The first three default units, densely wired. Small enough to train
    /// on a desktop while keeping the full model's structure.
    pub fn lite() -> ModelConfig {
        ModelConfig::from_shapes(&DEFAULT_SHAPES[..3], true).unwrap()
    }

    /// Builds a config from `(filters, layers)` pairs, assigning orders.
    pub fn from_shapes(shapes: &[(usize, usize)], dense: bool) -> Result<ModelConfig> {
        let units = shapes
            .iter()
            .enumerate()
            .map(|(i, &(filters, layers))| ResidualUnitSpec { order: i + 1, filters, layers })
            .collect();
        let cfg = ModelConfig {
            units,
            dense,
            activation: Activation::Relu,
            padding: Padding::Zero,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() || self.units.len() > MAX_UNITS {
            return Err(Error::BadConfig(format!(
                "model must have 1..={} units, got {}",
                MAX_UNITS,
                self.units.len()
            )));
        }
        for (i, u) in self.units.iter().enumerate() {
            if u.order != i + 1 {
                return Err(Error::BadConfig(format!(
                    "unit orders must run 1..: position {} has order {}",
                    i + 1,
                    u.order
                )));
            }
            if u.filters == 0 || u.layers == 0 {
                return Err(Error::BadConfig(format!(
                    "unit {} must have positive filters and layers",
                    u.order
                )));
            }
        }
        Ok(())
    }

    /// Channels entering unit `n`'s encoder (1-based `n`).
    pub fn encoder_input_channels(&self, n: usize) -> usize {
        if n == 1 {
            1
        } else if self.dense {
            self.units[..n - 1].iter().map(|u| u.filters).sum()
        } else {
            self.units[n - 2].filters
        }
    }

    /// Channels entering unit `n`'s decoder (1-based `n`).
    pub fn decoder_input_channels(&self, n: usize) -> usize {
        if self.dense {
            1 + self.units[..n].iter().map(|u| u.filters).sum::<usize>()
        } else {
            self.units[n - 1].filters
        }
    }

    /// Radius of the input neighborhood that can influence one output
    /// pixel: one pixel per 3x3 convolution, and every unit runs `layers`
    /// of them in the encoder and again in the decoder.
    pub fn receptive_radius(&self) -> usize {
        2 * self.units.iter().map(|u| u.layers).sum::<usize>()
    }

    /// Every convolution layer of the built network, in creation order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for u in &self.units {
            let n = u.order;
            let mut cin = self.encoder_input_channels(n);
            for i in 0..u.layers {
                specs.push(LayerSpec {
                    name: format!("u{n}.enc.{i}"),
                    weight: [u.filters, cin, 3, 3],
                    bias: true,
                });
                cin = u.filters;
            }
            let mut cin = self.decoder_input_channels(n);
            for i in 0..u.layers {
                specs.push(LayerSpec {
                    name: format!("u{n}.dec.{i}"),
                    weight: [u.filters, cin, 3, 3],
                    bias: true,
                });
                cin = u.filters;
            }
            // The projection of unit 1 produces the final residual image:
            // one channel, no bias, no activation. Higher units project
            // down to the unit below and keep both.
            let (cout, bias) = if n == 1 { (1, false) } else { (self.units[n - 2].filters, true) };
            specs.push(LayerSpec {
                name: format!("u{n}.dimred"),
                weight: [cout, u.filters, 1, 1],
                bias,
            });
        }
        specs
    }

    /// Exact number of scalar parameters the built network allocates.
    pub fn param_count(&self) -> u64 {
        self.layer_specs()
            .iter()
            .map(|s| s.weight_len() as u64 + if s.bias { s.weight[0] as u64 } else { 0 })
            .sum()
    }
}

/// A built network: the graph, its handles, and the config it came from.
///
/// The graph also carries a target input and a loss node so a trainer can
/// drive forward/backward without mutating the structure. Plain inference
/// never executes the loss branch.
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    graph: Graph<T>,
    params: Vec<(String, NodeId)>,
    input: NodeId,
    output: NodeId,
    target: NodeId,
    loss: NodeId,
}

impl<T: Scalar> Model<T> {
    /// Assembles the network with all parameters zero (the identity map).
    pub fn build(cfg: ModelConfig) -> Result<Model<T>> {
        cfg.validate()?;
        let mut g: Graph<T> = Graph::new();
        let mut params = Vec::new();
        let x0 = g.input(1);

        // Runs one conv3x3+activation block of `layers` steps.
        let block = |g: &mut Graph<T>,
                     params: &mut Vec<(String, NodeId)>,
                     mut x: NodeId,
                     mut cin: usize,
                     u: &ResidualUnitSpec,
                     kind: &str|
         -> Result<NodeId> {
            for i in 0..u.layers {
                let base = format!("u{}.{kind}.{i}", u.order);
                let w = g.param(&format!("{base}.w"), Tensor::zeros(&[u.filters, cin, 3, 3]));
                let b = g.param(&format!("{base}.b"), Tensor::zeros(&[u.filters]));
                params.push((format!("{base}.w"), w));
                params.push((format!("{base}.b"), b));
                x = g.conv(x, w, Some(b))?;
                x = g.relu(x);
                cin = u.filters;
            }
            Ok(x)
        };

        let mut enc_outs = vec![x0]; // raw input counts as encoder output 0
        let mut dec_outs: Vec<NodeId> = Vec::new();
        for u in &cfg.units {
            let n = u.order;
            let enc_in = if n == 1 {
                x0
            } else if cfg.dense {
                cat(&mut g, &dec_outs)?
            } else {
                *dec_outs.last().unwrap()
            };
            let e = block(&mut g, &mut params, enc_in, cfg.encoder_input_channels(n), u, "enc")?;
            enc_outs.push(e);
            let dec_in = if cfg.dense { cat(&mut g, &enc_outs)? } else { e };
            let d = block(&mut g, &mut params, dec_in, cfg.decoder_input_channels(n), u, "dec")?;
            // The decoder only has to produce the feature delta.
            dec_outs.push(g.add(e, d)?);
        }

        // Fold the stack back down: each unit's 1x1 projection feeds the
        // unit below it, and unit 1's projection feeds the global skip.
        let mut r = *dec_outs.last().unwrap();
        for n in (2..=cfg.units.len()).rev() {
            let u = &cfg.units[n - 1];
            let base = format!("u{n}.dimred");
            let w =
                g.param(&format!("{base}.w"), Tensor::zeros(&[cfg.units[n - 2].filters, u.filters, 1, 1]));
            let b = g.param(&format!("{base}.b"), Tensor::zeros(&[cfg.units[n - 2].filters]));
            params.push((format!("{base}.w"), w));
            params.push((format!("{base}.b"), b));
            let proj = g.conv(r, w, Some(b))?;
            let proj = g.relu(proj);
            r = g.add(dec_outs[n - 2], proj)?;
        }
        let w = g.param("u1.dimred.w", Tensor::zeros(&[1, cfg.units[0].filters, 1, 1]));
        params.push(("u1.dimred.w".to_string(), w));
        let residual = g.conv(r, w, None)?;
        let output = g.add(x0, residual)?;

        let target = g.input(1);
        let loss = g.logcosh(output, target)?;

        // The projection params are created after all the blocks (the fold
        // above runs top-down); re-list everything in layer order so
        // serialization and reporting follow the network layout.
        let by_name: std::collections::HashMap<&str, NodeId> =
            params.iter().map(|(n, id)| (n.as_str(), *id)).collect();
        let mut ordered = Vec::with_capacity(params.len());
        for s in cfg.layer_specs() {
            ordered.push((s.weight_name(), by_name[s.weight_name().as_str()]));
            if s.bias {
                ordered.push((s.bias_name(), by_name[s.bias_name().as_str()]));
            }
        }
        assert_eq!(ordered.len(), params.len(), "layer list out of sync with builder");

        Ok(Model { cfg, graph: g, params: ordered, input: x0, output, target, loss })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }

    pub fn input_id(&self) -> NodeId {
        self.input
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn target_id(&self) -> NodeId {
        self.target
    }

    pub fn loss_id(&self) -> NodeId {
        self.loss
    }

    /// Parameter names in creation order, `<layer>.w` / `<layer>.b`.
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn param_tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.param_id(name).and_then(|id| self.graph.value(id).ok())
    }

    pub fn param_tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.param_id(name)?;
        self.graph.param_value_mut(id).ok()
    }

    /// Re-initializes every weight from a seeded normal with the variance
    /// scaled to the layer fan-in, which keeps activation magnitudes stable
    /// under the relu blocks. Biases stay zero.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        for &(_, id) in &self.params {
            let t = self.graph.param_value_mut(id).unwrap();
            let dims = t.dims().to_vec();
            if dims.len() != 4 {
                t.fill(T::from_f64(0.0));
                continue;
            }
            let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
            for v in t.data_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
    }

    /// Runs the network on a `[N, 1, H, W]` batch.
    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.graph.bind(self.input, x)?;
        self.graph.forward(&[self.output])?;
        Ok(self.graph.value(self.output)?.clone())
    }

    /// Whole-image inference in bounded memory: processes `tile`-sized
    /// output tiles, each padded by the receptive radius so interior
    /// results match a whole-image pass.
    pub fn forward_tiled(&mut self, x: &Tensor<T>, tile: usize) -> Result<Tensor<T>> {
        if tile == 0 {
            return Err(Error::InvalidParameter("tile size must be positive".into()));
        }
        let (n, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::ChannelMismatch { expected: 1, found: c });
        }
        let r = self.cfg.receptive_radius();
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for img in 0..n {
            let plane = &x.data()[img * h * w..(img + 1) * h * w];
            for ty in (0..h).step_by(tile) {
                let y1 = (ty + tile).min(h);
                let (sy0, sy1) = (ty.saturating_sub(r), (y1 + r).min(h));
                for tx in (0..w).step_by(tile) {
                    let x1 = (tx + tile).min(w);
                    let (sx0, sx1) = (tx.saturating_sub(r), (x1 + r).min(w));
                    let (sh, sw) = (sy1 - sy0, sx1 - sx0);
                    let mut slab = Tensor::zeros(&[1, 1, sh, sw]);
                    for yy in 0..sh {
                        let src = (sy0 + yy) * w + sx0;
                        slab.data_mut()[yy * sw..(yy + 1) * sw]
                            .copy_from_slice(&plane[src..src + sw]);
                    }
                    let res = self.forward(slab)?;
                    for yy in ty..y1 {
                        let srow = (yy - sy0) * sw + (tx - sx0);
                        let drow = img * h * w + yy * w + tx;
                        out.data_mut()[drow..drow + (x1 - tx)]
                            .copy_from_slice(&res.data()[srow..srow + (x1 - tx)]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact allocated parameter count.
    pub fn param_count(&self) -> u64 {
        self.graph.param_element_count()
    }
}

/// Concat that skips the copy when there is only one source.
fn cat<T: Scalar>(g: &mut Graph<T>, xs: &[NodeId]) -> Result<NodeId> {
    if xs.len() == 1 {
        Ok(xs[0])
    } else {
        g.concat(xs)
    }
}
