//! Frame preprocessing: bilinear resize to the network input and
//! zero-centering by the ImageNet mean RGB.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INPUT_SIDE: usize = 112;
pub const MEAN_RGB: [f32; 3] = [123.68, 116.779, 103.939];

/// Bilinear resize with half-pixel centers and edge clamping, rounded back
/// to 8 bits. Same-size input is returned unchanged.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (width, height) {
        return img.clone();
    }
    let src = img.as_raw();
    let (sw, sh) = (sw as usize, sh as usize);
    let scale_x = sw as f32 / width as f32;
    let scale_y = sh as f32 / height as f32;
    let taps = |dst: u32, scale: f32, len: usize| -> (usize, usize, f32) {
        let pos = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f32)
    };
    let cols: Vec<_> = (0..width).map(|x| taps(x, scale_x, sw)).collect();
    let mut out = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, scale_y, sh);
        for &(x0, x1, fx) in &cols {
            for ch in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * sw + xx) * 3 + ch] as f32;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(width, height, out).expect("buffer sized for dimensions")
}

/// Converts pixels to reals and subtracts the per-channel mean; no resize.
pub fn zero_center(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img
        .as_raw()
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| px[c] as f32 - MEAN_RGB[c]))
        .collect();
    Tensor::new(&[h as usize, w as usize, 3], data).expect("image dimensions are positive")
}

/// Resizes any RGB frame to 112×112 and zero-centers it.
pub fn preprocess_frame(img: &RgbImage) -> Tensor<f32> {
    preprocess_frame_at(img, INPUT_SIDE)
}

/// [`preprocess_frame`] for networks built on another input side.
pub fn preprocess_frame_at(img: &RgbImage, side: usize) -> Tensor<f32> {
    let side = side as u32;
    if img.dimensions() == (side, side) {
        zero_center(img)
    } else {
        zero_center(&resize_bilinear(img, side, side))
    }
}

/// [`preprocess_frame`] over an interleaved 8-bit buffer.
pub fn preprocess_raw(width: u32, height: u32, channels: usize, bytes: &[u8]) -> Result<Tensor<f32>> {
    if channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "frames must have 3 channels, got {channels}"
        )));
    }
    if width == 0 || height == 0 || bytes.len() != width as usize * height as usize * 3 {
        return Err(Error::Shape(format!(
            "{width}×{height}×3 frame needs {} bytes, got {}",
            width as usize * height as usize * 3,
            bytes.len()
        )));
    }
    let img = RgbImage::from_raw(width, height, bytes.to_vec()).expect("length checked");
    Ok(preprocess_frame(&img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn gray_frame_centers_to_known_offsets() {
        let img = RgbImage::from_pixel(640, 480, Rgb([128, 128, 128]));
        let t = preprocess_frame(&img);
        assert_eq!(t.shape(), &[112, 112, 3]);
        let expected = [4.32f32, 11.221, 24.061];
        for px in t.data().chunks(3) {
            for (v, e) in px.iter().zip(expected) {
                assert!((v - e).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = RgbImage::from_fn(112, 112, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]));
        assert_eq!(resize_bilinear(&img, 112, 112), img);
    }

    #[test]
    fn resize_is_idempotent_in_shape() {
        let img = RgbImage::from_fn(640, 480, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let once = resize_bilinear(&img, 112, 112);
        let twice = resize_bilinear(&once, 112, 112);
        assert_eq!(once, twice);
    }

    #[test]
    fn resize_preserves_horizontal_ramp_monotonicity() {
        let img = RgbImage::from_fn(64, 8, |x, _| Rgb([(x * 4) as u8, 0, 0]));
        let small = resize_bilinear(&img, 16, 4);
        let row: Vec<u8> = (0..16).map(|x| small.get_pixel(x, 0)[0]).collect();
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_non_rgb_buffers() {
        assert!(preprocess_raw(2, 2, 4, &[0; 16]).is_err());
        assert!(preprocess_raw(2, 2, 3, &[0; 11]).is_err());
        assert_eq!(preprocess_raw(2, 2, 3, &[0; 12]).unwrap().shape(), &[112, 112, 3]);
    }
}
