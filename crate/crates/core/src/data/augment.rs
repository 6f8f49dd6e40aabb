//! Training-time augmentation: random shift, rotation and brightness scale.

use image::RgbImage;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Maximum horizontal shift as a fraction of width (exclusive).
    pub max_shift_x: f32,
    /// Maximum vertical shift as a fraction of height (exclusive).
    pub max_shift_y: f32,
    pub max_rotation_deg: f32,
    pub brightness: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_shift_x: 0.2,
            max_shift_y: 0.2,
            max_rotation_deg: 10.0,
            brightness: (0.5, 1.5),
        }
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Horizontal shift as a fraction of width; positive moves content right.
    pub shift_x: f32,
    pub shift_y: f32,
    pub rotation_deg: f32,
    pub brightness: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        shift_x: 0.0,
        shift_y: 0.0,
        rotation_deg: 0.0,
        brightness: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> Self {
        let sym = |rng: &mut R, max: f32| {
            if max > 0.0 {
                // open interval: |shift| < max
                loop {
                    let v = rng.gen_range(-max..max);
                    if v > -max {
                        break v;
                    }
                }
            } else {
                0.0
            }
        };
        let shift_x = sym(rng, config.max_shift_x);
        let shift_y = sym(rng, config.max_shift_y);
        let rotation_deg = if config.max_rotation_deg > 0.0 {
            rng.gen_range(-config.max_rotation_deg..=config.max_rotation_deg)
        } else {
            0.0
        };
        let (lo, hi) = config.brightness;
        let brightness = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        Self {
            shift_x,
            shift_y,
            rotation_deg,
            brightness,
        }
    }
}

/// Draws parameters from the default ranges and applies them.
pub fn augment<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R) -> RgbImage {
    apply_augmentation(img, &AugmentParams::sample(&AugmentConfig::default(), rng))
}

/// Rotates about the image center, shifts, then scales brightness. Vacated
/// pixels replicate the nearest edge; results clamp to `[0, 255]`.
pub fn apply_augmentation(img: &RgbImage, params: &AugmentParams) -> RgbImage {
    let (w, h) = img.dimensions();
    let (wf, hf) = (w as f32, h as f32);
    let (cx, cy) = ((wf - 1.0) / 2.0, (hf - 1.0) / 2.0);
    let (dx, dy) = (params.shift_x * wf, params.shift_y * hf);
    let theta = params.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let src = img.as_raw();
    let (wu, hu) = (w as usize, h as usize);
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            // inverse map: undo shift, then undo rotation
            let u = x as f32 - dx - cx;
            let v = y as f32 - dy - cy;
            let sx = (cos * u + sin * v + cx).clamp(0.0, wf - 1.0);
            let sy = (-sin * u + cos * v + cy).clamp(0.0, hf - 1.0);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(wu - 1), (y0 + 1).min(hu - 1));
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            for ch in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * wu + xx) * 3 + ch] as f32;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let value = (top * (1.0 - fy) + bottom * fy) * params.brightness;
                out.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(w, h, out).expect("buffer sized for dimensions")
}
