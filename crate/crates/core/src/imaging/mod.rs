//! Images, luma conversion, PSNR/SSIM and bicubic resampling.

mod buffer;
mod color;
mod metrics;
mod resample;

pub use buffer::{Channels, ImageBuffer, Pixels};
pub use color::rgb_to_y;
pub use metrics::{evaluate_pair, psnr, ssim, PairScore, SsimParams};
pub use resample::{bicubic_resize, cubic, ResizeFactor};
