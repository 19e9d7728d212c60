//! Generator and discriminator.
//!
//! Weights are stored at unit scale and multiplied by the He constant on
//! every forward pass. Biases start at zero. There are no normalization
//! layers.

use std::collections::BTreeMap;

use dusty_tensor::{equalized_scale, ConvGeom, Graph, ParamRole, ParamSet, Tensor, Var};
use rand::Rng;

use crate::config::NetConfig;
use crate::error::{GanError, Result};

pub const LEAKY_SLOPE: f32 = 0.2;

/// Parameters of one network bound into a graph, by name.
pub type Bound<'g> = BTreeMap<String, Var<'g>>;

/// Binds every parameter as a differentiable leaf (`trainable`) or a constant.
pub fn bind<'g>(graph: &'g Graph, set: &ParamSet, trainable: bool) -> Bound<'g> {
    set.iter()
        .map(|(name, t)| {
            let v = if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect()
}

/// Gradients of `loss` with respect to every bound parameter.
pub fn param_grads<'g>(graph: &'g Graph, loss: Var<'g>, bound: &Bound<'g>) -> Result<BTreeMap<String, Tensor>> {
    let vars: Vec<Var<'g>> = bound.values().copied().collect();
    let grads = graph.grad(loss, &vars)?;
    Ok(bound
        .keys()
        .zip(grads)
        .map(|(n, g)| (n.clone(), (*g.value()).clone()))
        .collect())
}

fn get<'g>(bound: &Bound<'g>, name: &str) -> Result<Var<'g>> {
    bound
        .get(name)
        .copied()
        .ok_or_else(|| GanError::Shape(format!("missing parameter {name}")))
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    /// Kernel shape in the tensor's own layout.
    kernel: [usize; 4],
    bias: usize,
    fan_in: usize,
    geom: ConvGeom,
    transposed: bool,
}

impl Layer {
    fn init<R: Rng + ?Sized>(&self, set: &mut ParamSet, idx: usize, rng: &mut R) -> Result<()> {
        set.insert(format!("l{idx}.weight"), Tensor::randn(self.kernel, rng))?;
        set.insert(format!("l{idx}.bias"), Tensor::zeros([self.bias]))?;
        Ok(())
    }

    fn apply<'g>(&self, x: Var<'g>, bound: &Bound<'g>, idx: usize) -> Result<Var<'g>> {
        let w = get(bound, &format!("l{idx}.weight"))?.scale(equalized_scale(self.fan_in)?)?;
        let b = get(bound, &format!("l{idx}.bias"))?;
        let y = if self.transposed {
            x.conv2d_transpose(w, self.geom)?
        } else {
            x.conv2d(w, self.geom)?
        };
        let shape = y.shape();
        let b = b.reshape([1, self.bias, 1, 1])?.broadcast_to(&shape)?;
        Ok(y.add(b)?)
    }
}

fn up_geom() -> ConvGeom {
    ConvGeom::new((2, 2), (1, 1))
}

/// Dense outputs of the generator for one batch.
pub struct GeneratorVars<'g> {
    /// `[N,1,H,W]`, strictly inside (−1, 1).
    pub dense: Var<'g>,
    /// `[N,1,H,W]` pixel-level measurability logits.
    pub pixel_logits: Option<Var<'g>>,
    /// `[N,1,H,W]` image-level measurability logits.
    pub image_logits: Option<Var<'g>>,
}

/// Value-only counterpart of [`GeneratorVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput {
    pub dense: Tensor,
    pub pixel_logits: Option<Tensor>,
    pub image_logits: Option<Tensor>,
}

/// Decoder from a latent code to a raster: a 1×1 → H/16×W/16 transposed
/// convolution followed by four stride-2 transposed 4×4 convolutions.
#[derive(Clone, Debug)]
pub struct Generator {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl Generator {
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let (h0, w0) = (config.height / 16, config.width / 16);
        let ch = config.gen_channels;
        let d = config.latent_dim;
        let mut layers = vec![Layer {
            kernel: [d, ch[0], h0, w0],
            bias: ch[0],
            fan_in: d,
            geom: ConvGeom::valid(),
            transposed: true,
        }];
        let outs = [ch[1], ch[2], ch[3], config.variant.output_channels()];
        let mut cin = ch[0];
        for cout in outs {
            layers.push(Layer {
                kernel: [cin, cout, 4, 4],
                bias: cout,
                // taps reaching one output pixel of a stride-2 transpose
                fan_in: cin * 4,
                geom: up_geom(),
                transposed: true,
            });
            cin = cout;
        }
        Ok(Generator { config: config.clone(), layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut set = ParamSet::new(ParamRole::Generator);
        for (i, l) in self.layers.iter().enumerate() {
            l.init(&mut set, i, rng)?;
        }
        Ok(set)
    }

    /// `z: [N, d]` or `[N, d, 1, 1]`.
    pub fn forward<'g>(&self, z: Var<'g>, bound: &Bound<'g>) -> Result<GeneratorVars<'g>> {
        let shape = z.shape();
        let d = self.config.latent_dim;
        let n = match shape.as_slice() {
            [n, k] | [n, k, 1, 1] if *k == d => *n,
            _ => {
                return Err(GanError::Shape(format!(
                    "latent batch {shape:?}, expected [N, {d}]"
                )))
            }
        };
        let mut x = z.reshape([n, d, 1, 1])?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(x, bound, i)?;
            if i < last {
                x = x.leaky_relu(LEAKY_SLOPE)?;
            }
        }
        let dense = x.channels(0, 1)?.tanh()?;
        let variant = self.config.variant;
        let pixel_logits = variant.has_sampler().then(|| x.channels(1, 1)).transpose()?;
        let image_logits = variant.multilevel().then(|| x.channels(2, 1)).transpose()?;
        Ok(GeneratorVars { dense, pixel_logits, image_logits })
    }

    /// Forward pass without gradients.
    pub fn generate(&self, z: &Tensor, params: &ParamSet) -> Result<GeneratorOutput> {
        let g = Graph::new();
        let bound = bind(&g, params, false);
        let out = self.forward(g.constant(z.clone()), &bound)?;
        let val = |v: Var| (*v.value()).clone();
        Ok(GeneratorOutput {
            dense: val(out.dense),
            pixel_logits: out.pixel_logits.map(val),
            image_logits: out.image_logits.map(val),
        })
    }
}

/// Blur, four stride-2 4×4 convolutions and a final H/16×W/16 convolution
/// down to one realness logit per sample.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl Discriminator {
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let ch = config.disc_channels;
        let mut layers = Vec::new();
        let mut cin = 2;
        for cout in ch {
            layers.push(Layer {
                kernel: [cout, cin, 4, 4],
                bias: cout,
                fan_in: cin * 16,
                geom: up_geom(),
                transposed: false,
            });
            cin = cout;
        }
        let (h0, w0) = (config.height / 16, config.width / 16);
        layers.push(Layer {
            kernel: [1, cin, h0, w0],
            bias: 1,
            fan_in: cin * h0 * w0,
            geom: ConvGeom::valid(),
            transposed: false,
        });
        Ok(Discriminator { config: config.clone(), layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut set = ParamSet::new(ParamRole::Discriminator);
        for (i, l) in self.layers.iter().enumerate() {
            l.init(&mut set, i, rng)?;
        }
        Ok(set)
    }

    /// `x: [N,1,H,W]` → `[N,1]` logits.
    pub fn forward<'g>(&self, x: Var<'g>, bound: &Bound<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let (h, w) = (self.config.height, self.config.width);
        if shape.len() != 4 || shape[1] != 1 || shape[2] != h || shape[3] != w {
            return Err(GanError::Shape(format!("discriminator input {shape:?}, expected [N,1,{h},{w}]")));
        }
        let n = shape[0];
        let mut y = x.blur()?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            y = l.apply(y, bound, i)?;
            if i < last {
                y = y.leaky_relu(LEAKY_SLOPE)?;
            }
        }
        Ok(y.reshape([n, 1])?)
    }

    pub fn logits(&self, x: &Tensor, params: &ParamSet) -> Result<Tensor> {
        let g = Graph::new();
        let bound = bind(&g, params, false);
        let out = self.forward(g.constant(x.clone()), &bound)?;
        Ok((*out.value()).clone())
    }
}
