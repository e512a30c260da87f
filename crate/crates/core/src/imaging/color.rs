use super::buffer::{Channels, ImageBuffer};
use crate::error::{Error, Result};

/// BT.601 studio-swing luma on unit-range input:
/// `Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels != Channels::Rgb {
        return Err(Error::Data("rgb_to_y needs an RGB image".into()));
    }
    let y = img
        .to_f64_vec()
        .chunks_exact(3)
        .map(|p| ((16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0) as f32)
        .collect();
    ImageBuffer::from_f32(img.width, img.height, Channels::Y, y)
}
