//! Generators seen as differentiable maps from latent codes to rasters.

use dusty_gan::networks::bind;
use dusty_gan::sampler::mask_var;
use dusty_gan::{compose_var, Generator, SamplerConfig, SamplerMode, TrainConfig};
use dusty_lidar::DROP_VALUE;
use dusty_tensor::{rng, ConvGeom, Graph, ParamSet, Tensor, Var};

use crate::error::{InversionError, Result};

pub trait LatentDecoder {
    fn latent_dim(&self) -> usize;

    /// Raster `(height, width)` of the output.
    fn shape(&self) -> (usize, usize);

    /// Dense pre-mask output `[N,1,H,W]` for `z: [N,d]`.
    fn decode<'g>(&self, z: Var<'g>) -> Result<Var<'g>>;

    /// Composed output for display; decoders without a drop model return
    /// the dense output.
    fn compose(&self, z: &Tensor, _seed: u64) -> Result<Tensor> {
        let g = Graph::new();
        Ok((*self.decode(g.constant(z.clone()))?.value()).clone())
    }
}

/// Trained generator with frozen weights.
pub struct GanDecoder {
    gen: Generator,
    params: ParamSet,
    sampler: SamplerConfig,
}

impl GanDecoder {
    /// Display composition runs the sampler in test mode: stochastic pixel
    /// branch, deterministic image branch.
    pub fn new(gen: Generator, params: ParamSet, config: &TrainConfig) -> Result<Self> {
        let sampler = config.sampler(SamplerMode::Test)?;
        Ok(GanDecoder { gen, params, sampler })
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = sampler;
        self
    }
}

impl LatentDecoder for GanDecoder {
    fn latent_dim(&self) -> usize {
        self.gen.config().latent_dim
    }

    fn shape(&self) -> (usize, usize) {
        (self.gen.config().height, self.gen.config().width)
    }

    fn decode<'g>(&self, z: Var<'g>) -> Result<Var<'g>> {
        let bound = bind(z.graph(), &self.params, false);
        Ok(self.gen.forward(z, &bound)?.dense)
    }

    fn compose(&self, z: &Tensor, seed: u64) -> Result<Tensor> {
        let g = Graph::new();
        let bound = bind(&g, &self.params, false);
        let out = self.gen.forward(g.constant(z.clone()), &bound)?;
        let x = match out.pixel_logits {
            None => out.dense,
            Some(pix) => {
                let mut gumbel = rng::stream(seed, "gumbel");
                let (m, _) = mask_var(pix, out.image_logits, &self.sampler, &mut gumbel)?;
                compose_var(out.dense, m.mask, DROP_VALUE)?
            }
        };
        Ok((*x.value()).clone())
    }
}

/// `G(z) = A z` reshaped to `H×W`; `A` is `[H·W, d]`.
pub struct LinearDecoder {
    height: usize,
    width: usize,
    /// Stored as a `[H·W, d, 1, 1]` convolution kernel.
    kernel: Tensor,
}

impl LinearDecoder {
    pub fn new(height: usize, width: usize, a: Tensor) -> Result<Self> {
        let s = a.shape().to_vec();
        if s.len() != 2 || s[0] != height * width || s[1] == 0 {
            return Err(InversionError::Shape(format!("matrix {s:?} for a {height}x{width} output")));
        }
        Ok(LinearDecoder { height, width, kernel: a.reshape([s[0], s[1], 1, 1])? })
    }

    pub fn matrix(&self) -> &[f32] {
        self.kernel.data()
    }
}

impl LatentDecoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.kernel.shape()[1]
    }

    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn decode<'g>(&self, z: Var<'g>) -> Result<Var<'g>> {
        let n = z.shape()[0];
        let d = self.latent_dim();
        let k = z.graph().constant(self.kernel.clone());
        let y = z.reshape([n, d, 1, 1])?.conv2d(k, ConvGeom::valid())?;
        Ok(y.reshape([n, 1, self.height, self.width])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_gan::Variant;

    #[test]
    fn linear_decoder_is_a_matrix_product() {
        let a = Tensor::new([6, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0, 0.5, 0.5, -3.0, 0.0]).unwrap();
        let dec = LinearDecoder::new(2, 3, a).unwrap();
        let g = Graph::new();
        let z = g.constant(Tensor::new([1, 2], vec![2.0, -1.0]).unwrap());
        let y = dec.decode(z).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 3]);
        assert_eq!(y.value().data(), &[2.0, -1.0, 1.0, 5.0, 0.5, -6.0]);
    }

    #[test]
    fn gan_decoder_matches_generator() {
        let cfg = TrainConfig {
            variant: Variant::Dusty2,
            latent_dim: 8,
            gen_channels: [4, 4, 4, 4],
            ..TrainConfig::desk()
        };
        let gen = Generator::new(&cfg.net()).unwrap();
        let params = gen.init(&mut rng::stream(1, "g")).unwrap();
        let z = Tensor::randn([2, 8], &mut rng::stream(2, "z"));
        let dense = gen.generate(&z, &params).unwrap().dense;
        let dec = GanDecoder::new(gen, params, &cfg).unwrap();
        let g = Graph::new();
        assert_eq!(*dec.decode(g.constant(z.clone())).unwrap().value(), dense);
        // image-level branch is deterministic in test mode, the pixel branch
        // follows the seed
        assert_eq!(dec.compose(&z, 3).unwrap(), dec.compose(&z, 3).unwrap());
        assert_eq!(dec.shape(), (16, 64));
    }
}
