//! Lossless 8-bit grayscale image I/O.
//!
//! Files store the usual 0..255 grayscale range; the model works on
//! intensities in [1, 256]. The mapping is a fixed +1 offset in both
//! directions. PNG and binary PGM are supported, chosen by file extension.

use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::likelihood::Image;

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ref e) if e == "png" => Ok(ImageFormat::Png),
        Some(ref e) if e == "pgm" || e == "pnm" => Ok(ImageFormat::Pnm),
        other => Err(Error::Io(format!("unsupported image extension {other:?} (use .png or .pgm)"))),
    }
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let mut gray = GrayImage::new(img.width, img.height);
    for (p, px) in gray.pixels_mut().enumerate() {
        px.0[0] = (img.data[p] - 1) as u8;
    }
    gray.save_with_format(path, format_for(path)?)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)?;
    let gray = dynimg.into_luma8();
    let (width, height) = gray.dimensions();
    let data = gray.pixels().map(|px| px.0[0] as u16 + 1).collect();
    Image::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn png_and_pgm_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = StdRng::seed_from_u64(88);
        let data: Vec<u16> = (0..30 * 20).map(|_| rng.random_range(1..=256)).collect();
        let img = Image::new(30, 20, data).unwrap();
        for name in ["a.png", "a.pgm"] {
            let path = dir.path().join(name);
            write_image(&img, &path).unwrap();
            assert_eq!(read_image(&path).unwrap(), img);
        }
        assert!(write_image(&img, &dir.path().join("a.tiff")).is_err());
    }
}
