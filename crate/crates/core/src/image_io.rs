//! 8-bit PNG output for 3-channel images with values in [0, 1].

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::Error;
use crate::latent::LatentImage;

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts a channel-major RGB image to 8-bit. With `flip_rows`, image row
/// 0 becomes the bottom row of the output.
pub fn to_rgb8(img: &LatentImage, flip_rows: bool) -> RgbImage {
    assert_eq!(img.channels(), 3, "expected an RGB image");
    let (h, w) = (img.height(), img.width());
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let row = if flip_rows {
            h - 1 - y as usize
        } else {
            y as usize
        };
        Rgb([
            to_u8(img.get(0, row, x as usize)),
            to_u8(img.get(1, row, x as usize)),
            to_u8(img.get(2, row, x as usize)),
        ])
    })
}

pub fn write_png(path: &Path, img: &LatentImage, flip_rows: bool) -> Result<(), Error> {
    to_rgb8(img, flip_rows)
        .save(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads an 8-bit PNG back into `[0, 1]` channel-major form.
pub fn read_png(path: &Path, flip_rows: bool) -> Result<LatentImage, Error> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(LatentImage::from_fn(3, h, w, |c, y, x| {
        let row = if flip_rows { h - 1 - y } else { y };
        img.get_pixel(x as u32, row as u32)[c] as f64 / 255.0
    }))
}
