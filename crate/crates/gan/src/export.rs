//! 8-bit grayscale previews: inverse depth [−1, 1] → [0, 255], drops black.

use std::path::Path;

use dusty_lidar::DROP_VALUE;
use dusty_tensor::Tensor;
use image::GrayImage;

use crate::error::{GanError, Result};

fn gray(v: f32) -> u8 {
    if v == DROP_VALUE {
        0
    } else {
        ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
    }
}

/// Tiles `[N,1,H,W]` samples into a grid `cols` wide with 1-pixel gaps.
pub fn grid_image(x: &Tensor, cols: usize) -> Result<GrayImage> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 || s[0] == 0 || cols == 0 {
        return Err(GanError::Shape(format!("grid needs a nonempty [N,1,H,W] batch, got {s:?}")));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) - 1, rows * (h + 1) - 1);
    let mut img = GrayImage::new(gw as u32, gh as u32);
    for (i, sample) in x.data().chunks(h * w).enumerate() {
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for r in 0..h {
            for c in 0..w {
                img.put_pixel((ox + c) as u32, (oy + r) as u32, image::Luma([gray(sample[r * w + c])]));
            }
        }
    }
    Ok(img)
}

pub fn save_grid_png(path: &Path, x: &Tensor, cols: usize) -> Result<()> {
    grid_image(x, cols)?.save(path)?;
    Ok(())
}
