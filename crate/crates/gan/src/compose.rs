//! Masking compositor: `x = m ⊙ dense + (1 − m) ⊙ α`.

use dusty_lidar::{NormalizationSpec, RasterMap};
use dusty_tensor::{Tensor, Var};

use crate::error::{GanError, Result};

/// Composes on graph nodes. The gradient reaches `dense` only where the
/// mask is one and reaches the mask as `dense − α`.
pub fn compose_var<'g>(dense: Var<'g>, mask: Var<'g>, alpha: f32) -> Result<Var<'g>> {
    let kept = mask.mul(dense)?;
    let dropped = mask.scale(-1.0)?.add_scalar(1.0)?.scale(alpha)?;
    Ok(kept.add(dropped)?)
}

/// Value-only composition of equally shaped buffers.
pub fn compose_values(dense: &[f32], mask: &[f32], alpha: f32) -> Result<Vec<f32>> {
    if dense.len() != mask.len() {
        return Err(GanError::Shape(format!("dense {} vs mask {}", dense.len(), mask.len())));
    }
    Ok(dense
        .iter()
        .zip(mask)
        .map(|(&x, &m)| m * x + (1.0 - m) * alpha)
        .collect())
}

/// Composes one `[1,1,H,W]`-sized sample into a raster.
pub fn compose(dense: &[f32], mask: &[f32], height: usize, width: usize, alpha: f32) -> Result<RasterMap> {
    let values = compose_values(dense, mask, alpha)?;
    Ok(RasterMap::with_drop_value(height, width, values, alpha, NormalizationSpec::default())?)
}

/// Splits an `[N,1,H,W]` tensor into rasters.
pub fn tensor_to_rasters(t: &Tensor, norm: NormalizationSpec) -> Result<Vec<RasterMap>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(GanError::Shape(format!("expected [N,1,H,W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    t.data()
        .chunks(h * w)
        .map(|c| Ok(RasterMap::new(h, w, c.to_vec(), norm)?))
        .collect()
}

/// Stacks equally shaped rasters into an `[N,1,H,W]` tensor.
pub fn rasters_to_tensor(rasters: &[&RasterMap]) -> Result<Tensor> {
    let first = rasters
        .first()
        .ok_or_else(|| GanError::Shape("empty raster batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        if r.shape() != (h, w) {
            return Err(GanError::Shape(format!("raster {:?} vs {:?}", r.shape(), (h, w))));
        }
        data.extend_from_slice(r.values());
    }
    Ok(Tensor::new([rasters.len(), 1, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_lidar::DROP_VALUE;
    use dusty_tensor::{rng::stream, Graph};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn full_and_empty_masks(vals in prop::collection::vec(-0.999f32..0.999, 1..64)) {
            let ones = vec![1.0; vals.len()];
            let zeros = vec![0.0; vals.len()];
            prop_assert_eq!(compose_values(&vals, &ones, DROP_VALUE).unwrap(), vals.clone());
            prop_assert!(compose_values(&vals, &zeros, DROP_VALUE).unwrap().iter().all(|&v| v == DROP_VALUE));
        }
    }

    #[test]
    fn graph_and_value_paths_agree() {
        let dense = Tensor::randn([2, 1, 3, 4], &mut stream(1, "x")).map(|v| v.tanh());
        let mask = Tensor::from_fn([2, 1, 3, 4], |i| (i % 3 != 0) as u8 as f32);
        let g = Graph::new();
        let out = compose_var(g.constant(dense.clone()), g.constant(mask.clone()), DROP_VALUE).unwrap();
        assert_eq!(out.value().data(), compose_values(dense.data(), mask.data(), DROP_VALUE).unwrap());
    }

    #[test]
    fn dropped_pixels_block_dense_gradient() {
        let g = Graph::new();
        let dense = g.param(Tensor::full([1, 1, 1, 4], 0.3));
        let mask = g.param(Tensor::new([1, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap());
        let out = compose_var(dense, mask, DROP_VALUE).unwrap();
        let grads = g.grad(out.sum().unwrap(), &[dense, mask]).unwrap();
        assert_eq!(grads[0].value().data(), &[1.0, 0.0, 1.0, 0.0]);
        assert!(grads[1].value().data().iter().all(|&v| (v - 1.3).abs() < 1e-6));
    }

    #[test]
    fn raster_round_trip() {
        let t = Tensor::from_fn([2, 1, 2, 3], |i| i as f32 / 10.0 - 0.5);
        let rs = tensor_to_rasters(&t, NormalizationSpec::default()).unwrap();
        assert_eq!(rs.len(), 2);
        let refs: Vec<&RasterMap> = rs.iter().collect();
        assert_eq!(rasters_to_tensor(&refs).unwrap(), t);
    }
}
