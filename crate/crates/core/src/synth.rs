//! Synthetic insertion videos.
//!
//! Each clip shows the inside of a pink silicone tube. A bright needle tip
//! enters in the horizontal third given by the section's lateral position;
//! its apparent size, brightness and blur depend on the section's depth.
//! Infiltration is drawn as a dark deformation patch over the tip. Frames
//! near state changes fade in and out, and the tip is occasionally obscured
//! for a frame or two (optionally also flickering just after it enters), so
//! single frames are sometimes ambiguous while the sequence is not.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{
    resize_bilinear, write_clip, write_manifest, DataSplit, Lateral, ManifestEntry, NeedleState, Section, SplitKind,
    VideoClip,
};
use crate::derive_seed;
use crate::error::{Error, Result};

/// Inclusive range of a generator parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy + PartialOrd + fmt::Display> Span<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.lo <= self.hi {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{name}: empty range {self}")))
        }
    }
}

impl<T: fmt::Display> fmt::Display for Span<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl<T: FromStr> FromStr for Span<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad range {s:?}"));
        match s.split_once('-') {
            Some((lo, hi)) => Ok(Span {
                lo: parse(lo)?,
                hi: parse(hi)?,
            }),
            None => {
                let (lo, hi) = (parse(s)?, parse(s)?);
                Ok(Span { lo, hi })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub clips_per_section: usize,
    pub infiltration_fraction: f64,
    pub width: u32,
    pub height: u32,
    pub no_needle_frames: Span<usize>,
    pub fist_frames: Span<usize>,
    pub infil_frames: Span<usize>,
    /// Red-channel level of the tube wall.
    pub background_intensity: Span<f32>,
    pub needle_intensity: Span<f32>,
    /// Tip radius in pixels at 640 px width; the larger end is the front.
    pub needle_radius: Span<f32>,
    pub noise_amplitude: f32,
    /// Per-frame chance that the tip is briefly obscured, away from the
    /// fades at either end of a phase.
    pub occlusion_rate: f64,
    /// Frames over which the tip and the patch fade in or out.
    pub ramp_frames: usize,
    /// Frames after the tip first enters during which it flickers in and
    /// out of view, and the chance of each being obscured. Off by default.
    pub entry_flicker_frames: usize,
    pub entry_flicker_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clips_per_section: 14,
            infiltration_fraction: 10.0 / 14.0,
            width: 640,
            height: 480,
            no_needle_frames: Span::new(25, 50),
            fist_frames: Span::new(20, 32),
            infil_frames: Span::new(20, 32),
            background_intensity: Span::new(165.0, 185.0),
            needle_intensity: Span::new(230.0, 245.0),
            needle_radius: Span::new(40.0, 64.0),
            noise_amplitude: 8.0,
            occlusion_rate: 0.04,
            ramp_frames: 3,
            entry_flicker_frames: 0,
            entry_flicker_rate: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.infiltration_fraction) {
            return bad(format!("infiltration fraction {} is outside [0, 1]", self.infiltration_fraction));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad(format!("occlusion rate {} is outside [0, 1]", self.occlusion_rate));
        }
        if !(0.0..=1.0).contains(&self.entry_flicker_rate) {
            return bad(format!("entry flicker rate {} is outside [0, 1]", self.entry_flicker_rate));
        }
        if self.clips_per_section == 0 {
            return bad("clips per section must be at least 1".into());
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!("image size {}x{} is too small", self.width, self.height));
        }
        for (name, span) in [
            ("no_needle_frames", self.no_needle_frames),
            ("fist_frames", self.fist_frames),
            ("infil_frames", self.infil_frames),
        ] {
            span.check(name)?;
            if span.lo == 0 {
                return bad(format!("{name}: phases need at least one frame"));
            }
        }
        for (name, span) in [
            ("background_intensity", self.background_intensity),
            ("needle_intensity", self.needle_intensity),
            ("needle_radius", self.needle_radius),
        ] {
            span.check(name)?;
            if !(span.lo.is_finite() && span.hi.is_finite()) || span.lo < 0.0 {
                return bad(format!("{name}: {span} must be finite and non-negative"));
            }
        }
        if self.background_intensity.hi > 255.0 || self.needle_intensity.hi > 255.0 {
            return bad("intensities must not exceed 255".into());
        }
        if !(0.0..=128.0).contains(&self.noise_amplitude) {
            return bad(format!("noise amplitude {} is outside [0, 128]", self.noise_amplitude));
        }
        Ok(())
    }

    /// Infiltration clips per section.
    pub fn infiltration_clips(&self) -> usize {
        (self.clips_per_section as f64 * self.infiltration_fraction).round() as usize
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not present
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = SynthConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key = value", n + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidArgument(format!("config line {}: {e}", n + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "clips_per_section" => self.clips_per_section = p(key, value)?,
            "infiltration_fraction" => {
                self.infiltration_fraction = match value.split_once('/') {
                    Some((a, b)) => p::<f64>(key, a.trim())? / p::<f64>(key, b.trim())?,
                    None => p(key, value)?,
                }
            }
            "width" => self.width = p(key, value)?,
            "height" => self.height = p(key, value)?,
            "no_needle_frames" => self.no_needle_frames = p(key, value)?,
            "fist_frames" => self.fist_frames = p(key, value)?,
            "infil_frames" => self.infil_frames = p(key, value)?,
            "background_intensity" => self.background_intensity = p(key, value)?,
            "needle_intensity" => self.needle_intensity = p(key, value)?,
            "needle_radius" => self.needle_radius = p(key, value)?,
            "noise_amplitude" => self.noise_amplitude = p(key, value)?,
            "occlusion_rate" => self.occlusion_rate = p(key, value)?,
            "ramp_frames" => self.ramp_frames = p(key, value)?,
            "entry_flicker_frames" => self.entry_flicker_frames = p(key, value)?,
            "entry_flicker_rate" => self.entry_flicker_rate = p(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

impl fmt::Display for SynthConfig {
    /// The same `key = value` form [`SynthConfig::parse`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "clips_per_section = {}", self.clips_per_section)?;
        writeln!(f, "infiltration_fraction = {}", self.infiltration_fraction)?;
        writeln!(f, "width = {}", self.width)?;
        writeln!(f, "height = {}", self.height)?;
        writeln!(f, "no_needle_frames = {}", self.no_needle_frames)?;
        writeln!(f, "fist_frames = {}", self.fist_frames)?;
        writeln!(f, "infil_frames = {}", self.infil_frames)?;
        writeln!(f, "background_intensity = {}", self.background_intensity)?;
        writeln!(f, "needle_intensity = {}", self.needle_intensity)?;
        writeln!(f, "needle_radius = {}", self.needle_radius)?;
        writeln!(f, "noise_amplitude = {}", self.noise_amplitude)?;
        writeln!(f, "occlusion_rate = {}", self.occlusion_rate)?;
        writeln!(f, "ramp_frames = {}", self.ramp_frames)?;
        writeln!(f, "entry_flicker_frames = {}", self.entry_flicker_frames)?;
        writeln!(f, "entry_flicker_rate = {}", self.entry_flicker_rate)
    }
}

/// Horizontal band, as fractions of the width, that the tip center stays in
/// for a given lateral position.
pub fn lateral_band(lateral: Lateral) -> (f32, f32) {
    let third = match lateral {
        Lateral::Left => 0.0,
        Lateral::Center => 1.0,
        Lateral::Right => 2.0,
    };
    ((third + 0.25) / 3.0, (third + 0.75) / 3.0)
}

/// Phase sequence: N F N without infiltration, N F I F N with it.
fn phase_plan<R: Rng + ?Sized>(config: &SynthConfig, infiltration: bool, rng: &mut R) -> Vec<(NeedleState, usize)> {
    let mut draw = |s: Span<usize>| rng.gen_range(s.lo..=s.hi);
    let mut plan = vec![
        (NeedleState::NoNeedle, draw(config.no_needle_frames)),
        (NeedleState::Fist, draw(config.fist_frames)),
    ];
    if infiltration {
        plan.push((NeedleState::Infil, draw(config.infil_frames)));
        plan.push((NeedleState::Fist, draw(config.fist_frames)));
    }
    plan.push((NeedleState::NoNeedle, draw(config.no_needle_frames)));
    plan
}

/// Clip-constant appearance.
struct Scene {
    width: usize,
    height: usize,
    /// Per-pixel wall luminance, already including texture and vignetting.
    wall: Vec<f32>,
    tint: [f32; 3],
    tip_x: f32,
    tip_y: f32,
    drift: (f32, f32),
    radius: f32,
    blur: f32,
    tip_level: f32,
}

impl Scene {
    fn new<R: Rng + ?Sized>(config: &SynthConfig, section: Section, rng: &mut R) -> Self {
        let (width, height) = (config.width as usize, config.height as usize);
        let scale = config.width as f32 / 640.0;
        let level = rng.gen_range(config.background_intensity.lo..=config.background_intensity.hi);
        let tint = [1.0, rng.gen_range(0.55..0.7), rng.gen_range(0.55..0.7)];

        let waves: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(2.0..9.0) / width as f32,
                    rng.gen_range(2.0..9.0) / height as f32,
                    rng.gen_range(0.0..std::f32::consts::TAU),
                    rng.gen_range(4.0..10.0),
                )
            })
            .collect();
        // faint glints on the wall, dimmer and wider than any needle tip
        let glints: Vec<(f32, f32, f32, f32)> = (0..rng.gen_range(0..=2))
            .map(|_| {
                (
                    rng.gen_range(0.0..width as f32),
                    rng.gen_range(0.0..height as f32),
                    rng.gen_range(25.0..45.0) * scale,
                    rng.gen_range(15.0..30.0),
                )
            })
            .collect();
        let (cx, cy) = (width as f32 / 2.0, height as f32 / 2.0);
        let max_r2 = cx * cx + cy * cy;
        let mut wall = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (fx, fy) = (x as f32, y as f32);
                let mut v = level;
                for &(kx, ky, phase, amp) in &waves {
                    v += amp * (std::f32::consts::TAU * (kx * fx + ky * fy) + phase).sin();
                }
                for &(gx, gy, gr, amp) in &glints {
                    let d2 = (fx - gx).powi(2) + (fy - gy).powi(2);
                    v += amp * (-d2 / (2.0 * gr * gr)).exp();
                }
                let r2 = ((fx - cx).powi(2) + (fy - cy).powi(2)) / max_r2;
                wall.push(v * (1.0 - 0.35 * r2));
            }
        }

        let (lo, hi) = lateral_band(section.lateral());
        let depth = match section.depth() {
            crate::data::Depth::Front => 0.0,
            crate::data::Depth::Middle => 0.5,
            crate::data::Depth::Back => 1.0,
        };
        let radius = (config.needle_radius.hi + (config.needle_radius.lo - config.needle_radius.hi) * depth) * scale;
        let blur = (1.5 + 8.0 * depth) * scale;
        let tip_level = rng.gen_range(config.needle_intensity.lo..=config.needle_intensity.hi) * (1.0 - 0.2 * depth);
        Self {
            width,
            height,
            wall,
            tint,
            tip_x: rng.gen_range(lo..hi) * width as f32,
            tip_y: rng.gen_range(0.35..0.65) * height as f32,
            drift: (rng.gen_range(-0.3..0.3) * scale, rng.gen_range(0.1..0.6) * scale),
            radius,
            blur,
            tip_level,
        }
    }

    /// `tip` and `patch` are visibilities in [0, 1]; `t` is the frame index
    /// since the tip entered.
    fn render(&self, tip: f32, patch: f32, t: f32, gain: f32, noise: &[u8], amplitude: f32) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let (lo, hi) = lateral_band_px(self.tip_x, w);
        let px = (self.tip_x + self.drift.0 * t).clamp(lo, hi);
        let py = (self.tip_y + self.drift.1 * t).clamp(0.2 * h as f32, 0.8 * h as f32);
        let reach = self.radius + self.blur;
        let (patch_rx, patch_ry) = (2.4 * self.radius + self.blur, 1.7 * self.radius + self.blur);
        let mut img = RgbImage::new(w as u32, h as u32);
        for (i, (pixel, n)) in img.pixels_mut().zip(noise.chunks_exact(3)).enumerate() {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            let wall = self.wall[i] * gain;
            let mut rgb = [wall * self.tint[0], wall * self.tint[1], wall * self.tint[2]];
            let (dx, dy) = (x - px, y - py);
            if tip > 0.0 && dx.abs() < reach && dy.abs() < reach {
                let d = (dx * dx + dy * dy).sqrt();
                let a = ((self.radius + self.blur * 0.5 - d) / self.blur.max(1.0)).clamp(0.0, 1.0) * tip;
                let level = self.tip_level * (1.0 - 0.15 * (d / self.radius).min(1.0));
                for (c, v) in rgb.iter_mut().enumerate() {
                    let target = level * [1.0, 0.97, 0.93][c];
                    *v += (target - *v) * a;
                }
            }
            if patch > 0.0 {
                let (ex, ey) = (dx / patch_rx, (dy - 0.6 * self.radius) / patch_ry);
                let e = ex * ex + ey * ey;
                if e < 1.0 {
                    let dark = 0.62 * patch * (1.0 - e * e);
                    rgb[0] *= 1.0 - dark;
                    rgb[1] *= 1.0 - 0.8 * dark;
                    rgb[2] *= 1.0 - 0.7 * dark;
                }
            }
            let mut out = [0u8; 3];
            for c in 0..3 {
                let jitter = (n[c] as f32 - 127.5) / 127.5 * amplitude;
                out[c] = (rgb[c] + jitter).round().clamp(0.0, 255.0) as u8;
            }
            *pixel = Rgb(out);
        }
        img
    }
}

fn lateral_band_px(x: f32, width: usize) -> (f32, f32) {
    let third = (x / width as f32 * 3.0).floor().clamp(0.0, 2.0);
    let w = width as f32;
    ((third + 0.2) / 3.0 * w, (third + 0.8) / 3.0 * w)
}

/// Fade factor for frame `i` of a phase of `len` frames: ramps up over the
/// first `ramp` frames when `fade_in` and down over the last when `fade_out`.
fn fade(i: usize, len: usize, ramp: usize, fade_in: bool, fade_out: bool) -> f32 {
    let step = |k: usize| 0.35 + 0.65 * (k + 1) as f32 / (ramp + 1) as f32;
    let mut v = 1.0f32;
    if fade_in && i < ramp {
        v = v.min(step(i));
    }
    let from_end = len - 1 - i;
    if fade_out && from_end < ramp {
        v = v.min(step(from_end));
    }
    v
}

/// Renders one labeled insertion. Deterministic in `rng`'s state.
pub fn generate_insertion_video<R: Rng + ?Sized>(
    config: &SynthConfig,
    id: &str,
    section: Section,
    infiltration: bool,
    rng: &mut R,
) -> VideoClip {
    let plan = phase_plan(config, infiltration, rng);
    let scene = Scene::new(config, section, rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut noise = vec![0u8; scene.width * scene.height * 3];
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut since_entry = 0usize;
    let mut occluded = 0usize;
    for (p, &(state, len)) in plan.iter().enumerate() {
        let prev = p.checked_sub(1).map(|q| plan[q].0);
        let next = plan.get(p + 1).map(|s| s.0);
        for i in 0..len {
            let ramp = config.ramp_frames;
            let (mut tip, mut patch) = match state {
                NeedleState::NoNeedle => (0.0, 0.0),
                NeedleState::Fist => (
                    fade(
                        i,
                        len,
                        ramp,
                        prev == Some(NeedleState::NoNeedle),
                        next == Some(NeedleState::NoNeedle),
                    ),
                    0.0,
                ),
                NeedleState::Infil => (0.7, fade(i, len, ramp, true, true)),
            };
            if state != NeedleState::NoNeedle {
                let settled = i >= ramp + 2 && i + ramp + 4 <= len;
                if occluded == 0 && rng.gen_bool(config.occlusion_rate) && settled {
                    occluded = rng.gen_range(1..=2);
                }
                let entering = state == NeedleState::Fist
                    && prev == Some(NeedleState::NoNeedle)
                    && (1..config.entry_flicker_frames).contains(&i);
                if entering && rng.gen_bool(config.entry_flicker_rate) {
                    occluded = occluded.max(1);
                }
                if occluded > 0 {
                    occluded -= 1;
                    let dim = rng.gen_range(0.05..0.3);
                    tip *= dim;
                    patch *= dim;
                }
            } else {
                occluded = 0;
            }
            let gain = rng.gen_range(0.95..1.05);
            noise_rng.fill_bytes(&mut noise);
            frames.push(scene.render(tip, patch, since_entry as f32, gain, &noise, config.noise_amplitude));
            labels.push(state);
            if state != NeedleState::NoNeedle || since_entry > 0 {
                since_entry += 1;
            }
        }
    }
    VideoClip::new(id, section, infiltration, frames, labels).expect("generated labels follow the grammar")
}

/// How clips are divided between the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Test and validation each take one infiltration clip from every
    /// section, plus non-infiltration clips from three sections each.
    Standard,
    /// Fixed numbers of held-out clips per section. Their infiltration flags
    /// are rotated across sections so each held-out split mixes both kinds.
    PerSection { validation: usize, test: usize },
}

/// One clip of a corpus before rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedClip {
    pub id: String,
    pub section: Section,
    pub index: usize,
    pub infiltration: bool,
    pub split: SplitKind,
}

pub fn clip_id(section: Section, index: usize) -> String {
    format!("{}_{index:02}", section.code())
}

pub fn plan_corpus(config: &SynthConfig, policy: SplitPolicy) -> Result<Vec<PlannedClip>> {
    config.validate()?;
    let n = config.clips_per_section;
    let n_infil = config.infiltration_clips();
    if let SplitPolicy::PerSection { validation, test } = policy {
        if validation + test > n {
            return Err(Error::InvalidArgument(format!(
                "{validation} validation + {test} test clips exceed {n} clips per section"
            )));
        }
    }
    let mut plan = Vec::with_capacity(9 * n);
    for (s, &section) in Section::ALL.iter().enumerate() {
        let mut splits = vec![SplitKind::Train; n];
        let take = |want_infil: bool, kind: SplitKind, splits: &mut Vec<SplitKind>| {
            let free = |k: &usize| splits[*k] == SplitKind::Train;
            let pick = (0..n)
                .filter(free)
                .find(|&k| (k < n_infil) == want_infil)
                .or_else(|| (0..n).find(free));
            if let Some(k) = pick {
                splits[k] = kind;
            }
        };
        match policy {
            SplitPolicy::Standard => {
                take(true, SplitKind::Test, &mut splits);
                take(true, SplitKind::Validation, &mut splits);
                if n > n_infil {
                    match s % 3 {
                        0 => take(false, SplitKind::Test, &mut splits),
                        1 => take(false, SplitKind::Validation, &mut splits),
                        _ => {}
                    }
                }
            }
            SplitPolicy::PerSection { validation, test } => {
                for j in 0..test {
                    take((s + j) % 3 != 0, SplitKind::Test, &mut splits);
                }
                for j in 0..validation {
                    take((s + j) % 3 != 1, SplitKind::Validation, &mut splits);
                }
            }
        }
        for (k, split) in splits.into_iter().enumerate() {
            plan.push(PlannedClip {
                id: clip_id(section, k),
                section,
                index: k,
                infiltration: k < n_infil,
                split,
            });
        }
    }
    Ok(plan)
}

fn render_planned(config: &SynthConfig, clip: &PlannedClip) -> VideoClip {
    let section_index = Section::ALL.iter().position(|&s| s == clip.section).expect("known section") as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[section_index, clip.index as u64]));
    generate_insertion_video(config, &clip.id, clip.section, clip.infiltration, &mut rng)
}

/// Renders a corpus in memory. With `store_side`, frames are downsized to
/// `side × side` right after rendering.
pub fn generate_split(config: &SynthConfig, policy: SplitPolicy, store_side: Option<u32>) -> Result<DataSplit> {
    let plan = plan_corpus(config, policy)?;
    let clips: Vec<VideoClip> = plan
        .par_iter()
        .map(|p| {
            let mut clip = render_planned(config, p);
            if let Some(side) = store_side {
                clip.frames = clip.frames.iter().map(|f| resize_bilinear(f, side, side)).collect();
            }
            clip
        })
        .collect();
    let mut split = DataSplit::default();
    for (p, clip) in plan.iter().zip(clips) {
        split.get_mut(p.split).push(clip);
    }
    Ok(split)
}

/// Writes a corpus in the on-disk dataset layout and returns its manifest.
pub fn generate_corpus(config: &SynthConfig, policy: SplitPolicy, root: &Path) -> Result<Vec<ManifestEntry>> {
    let plan = plan_corpus(config, policy)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    plan.par_iter()
        .try_for_each(|p| write_clip(root, p.split, &render_planned(config, p)))?;
    let entries: Vec<ManifestEntry> = plan
        .iter()
        .map(|p| ManifestEntry::new(&p.id, p.split, p.section, p.infiltration))
        .collect();
    write_manifest(root, &entries)?;
    Ok(entries)
}
