//! Image representation, raster I/O and bicubic resampling.

mod image;
mod io;
mod resample;

pub use image::Image;
pub use io::{
    decode_ften, decode_ppm, encode_ften, encode_ppm, load_ften, load_ppm, quantize, save_ften,
    save_ppm,
};
pub use resample::{
    bicubic_resample, crop_pair, cubic_kernel, downscale, source_coordinate, upscale, BICUBIC_A,
};

use crate::error::{Error, Result};

/// Integer super-resolution factor `r >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleFactor(usize);

impl ScaleFactor {
    pub fn new(r: usize) -> Result<Self> {
        if r < 2 {
            return Err(Error::Config(format!("scale factor must be >= 2, got {r}")));
        }
        Ok(Self(r))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for ScaleFactor {
    fn default() -> Self {
        Self(4)
    }
}

impl std::fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x{}", self.0)
    }
}
