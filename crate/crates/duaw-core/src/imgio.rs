//! PNG boundary: the in-memory pipeline is real-valued; quantization to
//! 8-bit happens only here.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{DuawError, Result};
use crate::tensor::Tensor;

/// Write a (3,H,W) or (1,H,W) unit-interval tensor as an 8-bit PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let shape = img.shape();
    if shape.len() != 3 || (shape[0] != 3 && shape[0] != 1) {
        return Err(DuawError::InvalidArg(format!(
            "save_png expects (3,H,W) or (1,H,W), got {:?}",
            shape
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let data = img.data();
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let idx = y as usize * w + x as usize;
        if c == 3 {
            Rgb([
                quant(data[idx]),
                quant(data[h * w + idx]),
                quant(data[2 * h * w + idx]),
            ])
        } else {
            let g = quant(data[idx]);
            Rgb([g, g, g])
        }
    });
    buf.save(path)?;
    Ok(())
}

/// Read a PNG into a (3,H,W) tensor with values in [0,1].
pub fn load_png(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(DuawError::MissingArtifact(path.display().to_string()));
    }
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let idx = y as usize * w + x as usize;
        for ch in 0..3 {
            data[ch * h * w + idx] = px.0[ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}
