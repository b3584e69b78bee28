use image::{imageops, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::graph::ImageRef;
use crate::Point2;

/// Square grid of intensities sampled around a keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: Point2,
    /// Image pixels per sample step.
    pub scale: f64,
    pub size: usize,
    /// Row-major `size x size` samples.
    pub samples: Vec<f64>,
}

impl Patch {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.size + col]
    }
}

/// Bilinear lookup with replicate padding outside the image.
#[inline]
pub fn bilinear(pixels: &[f32], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: usize, yy: usize| pixels[yy * width + xx] as f64;
    let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
    let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
    top + fy * (bottom - top)
}

pub fn sample_patch(image: &ImageRef, center: Point2, scale: f64, size: usize) -> Result<Patch> {
    let pixels = image.pixels.as_deref().ok_or(Error::MissingPixels(image.image_id))?;
    if size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("patch size {size} must be odd")));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidInput(format!("patch scale {scale} must be positive")));
    }
    let half = (size / 2) as f64;
    let mut samples = Vec::with_capacity(size * size);
    for r in 0..size {
        let y = center.y + scale * (r as f64 - half);
        for c in 0..size {
            let x = center.x + scale * (c as f64 - half);
            samples.push(bilinear(pixels, image.width, image.height, x, y));
        }
    }
    Ok(Patch {
        center,
        scale,
        size,
        samples,
    })
}

/// Downscales an image so its longest edge is at most `max_edge` pixels.
///
/// Returns the (possibly unchanged) image and the factor mapping original
/// coordinates to resized ones. Images without pixels only get their
/// dimensions updated.
pub fn resize_to_max_edge(image: &ImageRef, max_edge: usize) -> Result<(ImageRef, f64)> {
    let longest = image.width.max(image.height);
    if longest <= max_edge {
        return Ok((image.clone(), 1.0));
    }
    let factor = max_edge as f64 / longest as f64;
    let width = ((image.width as f64 * factor).round() as usize).max(1);
    let height = ((image.height as f64 * factor).round() as usize).max(1);
    let Some(pixels) = &image.pixels else {
        return Ok((ImageRef::new(image.image_id, width, height)?, factor));
    };
    let buffer: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, pixels.clone())
            .ok_or_else(|| Error::InvalidInput(format!("image {} has a bad pixel buffer", image.image_id)))?;
    let resized = imageops::resize(&buffer, width as u32, height as u32, imageops::FilterType::Triangle);
    // Pixel centers sit at integer coordinates here, so the exact factor per
    // axis differs slightly from `factor`; one isotropic factor keeps the
    // keypoint mapping simple.
    let resized = ImageRef::with_pixels(image.image_id, width, height, resized.into_raw())?;
    Ok((resized, factor))
}
