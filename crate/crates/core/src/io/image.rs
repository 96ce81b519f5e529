//! PNG raster I/O and conversions between images and tensors.

use std::path::Path;

use image::{
    ColorType, DynamicImage, GrayImage, ImageFormat, ImageReader, Luma, RgbImage, RgbaImage,
};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Scalar, Shape, Tensor};

fn file_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::ImageFile {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes an 8-bit PNG, rejecting other containers and bit depths.
fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) => {}
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                detail: format!("expected a PNG container, found {other:?}"),
            })
        }
    }
    let img = reader.decode().map_err(file_err(path))?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            detail: format!(
                "color type {other:?} ({} bits per channel); only 8-bit gray, gray+alpha, RGB and RGBA are supported",
                other.bits_per_pixel() / other.channel_count() as u16
            ),
        }),
    }
}

/// Loads any supported PNG as RGB; an alpha channel, if present, is dropped.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(decode(path.as_ref())?.to_rgb8())
}

/// Loads a PNG that carries an alpha channel.
pub fn load_rgba(path: impl AsRef<Path>) -> Result<RgbaImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    if !img.color().has_alpha() {
        return Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            detail: format!(
                "smoke images need an alpha channel, found {:?}",
                img.color()
            ),
        });
    }
    Ok(img.to_rgba8())
}

/// Loads a grayscale mask; values above 127 are smoke.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = decode(path)?;
    if !matches!(img.color(), ColorType::L8 | ColorType::La8) {
        return Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            detail: format!("masks must be 8-bit grayscale, found {:?}", img.color()),
        });
    }
    let g = img.to_luma8();
    let (w, h) = g.dimensions();
    BinaryMask::from_vec(
        w as usize,
        h as usize,
        g.pixels().map(|p| (p[0] > 127) as u8).collect(),
    )
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png)
        .map_err(file_err(path))
}

pub fn save_rgba(img: &RgbaImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png)
        .map_err(file_err(path))
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png)
        .map_err(file_err(path))
}

/// Writes a mask as 8-bit grayscale with values 0 and 255.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_gray(&mask_to_gray(mask), path)
}

pub fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) {
            255
        } else {
            0
        }])
    })
}

/// `(1, 3, h, w)` tensor with channel values divided by 255.
pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = T::of(p[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("image dimensions are >= 1")
}

/// Probability plane `(n, 0)` of a map as 8-bit grayscale, rounding half up.
pub fn probability_to_gray<T: Scalar>(map: &Tensor<T>, n: usize) -> GrayImage {
    let s = map.shape();
    let plane = map.plane(n, 0);
    GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let v = plane[y as usize * s.w + x as usize].f64();
        Luma([crate::compositor::to_u8(v.clamp(0.0, 1.0))])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Rgba};

    #[test]
    fn rgba_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        let img = RgbaImage::from_fn(5, 4, |x, y| {
            Rgba([x as u8 * 40, y as u8 * 60, 7, (x * y) as u8 * 10])
        });
        save_rgba(&img, &p).unwrap();
        assert_eq!(load_rgba(&p).unwrap(), img);
        assert_eq!(load_rgb(&p).unwrap().dimensions(), (5, 4));
    }

    #[test]
    fn mask_round_trip_is_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = BinaryMask::from_fn(6, 3, |x, y| (x + y) % 2 == 0);
        save_mask(&m, &p).unwrap();
        let g = image::open(&p).unwrap().to_luma8();
        assert!(g.pixels().all(|p| p[0] == 0 || p[0] == 255));
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn rejects_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let img: ImageBuffer<image::Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_pixel(2, 2, image::Rgb([1000u16, 2, 3]));
        img.save_with_format(&p, ImageFormat::Png).unwrap();
        let err = load_rgb(&p).unwrap_err().to_string();
        assert!(err.contains("Rgb16") && err.contains("16 bits"), "{err}");
    }

    #[test]
    fn rejects_non_png_and_missing_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"not an image at all").unwrap();
        assert!(load_rgb(&p).is_err());
        let q = dir.path().join("rgb.png");
        save_rgb(&RgbImage::new(2, 2), &q).unwrap();
        assert!(load_rgba(&q).is_err());
        assert!(load_mask(&q).is_err());
    }

    #[test]
    fn tensor_conversion() {
        let img = RgbImage::from_fn(3, 2, |x, y| image::Rgb([255, x as u8, y as u8]));
        let t = rgb_to_tensor::<f64>(&img);
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 3));
        assert_eq!(t.get(0, 0, 1, 2), 1.0);
        assert_eq!(t.get(0, 1, 0, 2), 2.0 / 255.0);
        assert_eq!(t.get(0, 2, 1, 0), 1.0 / 255.0);
    }
}
