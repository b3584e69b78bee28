//! Grayscale PGM images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::graph::{ImageId, ImageRef};

fn image_error(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any grayscale or color image the `image` crate decodes, as
/// intensities in `[0, 1]`.
pub fn load_image(path: &Path, image_id: ImageId) -> Result<ImageRef> {
    let decoded = image::open(path).map_err(|e| image_error(path, e))?;
    let luma = decoded.to_luma32f();
    let (w, h) = luma.dimensions();
    ImageRef::with_pixels(image_id, w as usize, h as usize, luma.into_raw())
}

/// Writes an 8-bit binary PGM (P5). Intensities are clamped to `[0, 1]`.
pub fn save_image(path: &Path, image: &ImageRef) -> Result<()> {
    let pixels = image.pixels.as_ref().ok_or(Error::MissingPixels(image.image_id))?;
    let samples: Vec<u8> = pixels
        .iter()
        .map(|&v| (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buffer: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, samples)
            .expect("pixel count matches the image dimensions");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    DynamicImage::ImageLuma8(buffer)
        .write_with_encoder(encoder)
        .map_err(|e| image_error(path, e))
}
