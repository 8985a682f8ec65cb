//! Stochastic augmentation of contour, mask and depth images.
//!
//! Every operator draws from a caller-supplied RNG; [`frame_rng`] derives one
//! independent stream per frame from the global seed. Ranges are sampled as
//! `lo + (hi − lo)·u`, so a degenerate range pins a parameter without
//! changing how many draws are consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryImage, DepthImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourAugment {
    /// Inclusive range of cross-kernel dilation iterations.
    pub dilation_iters: [u32; 2],
    /// Occluder count is uniform in `0..=max_occluders`.
    pub max_occluders: u32,
    /// Occluder side as a fraction of image width and height.
    pub occluder_fraction: f64,
    pub elastic_sigma: f64,
    /// Displacement scale in px; 0 disables the elastic remap.
    pub elastic_alpha: f64,
}

impl Default for ContourAugment {
    fn default() -> Self {
        Self {
            dilation_iters: [1, 3],
            max_occluders: 3,
            occluder_fraction: 0.2,
            elastic_sigma: 4.0,
            elastic_alpha: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskAugment {
    pub p: f64,
    /// Inclusive kernel size range; even draws are bumped to the next odd size.
    pub kernel: [u32; 2],
}

impl Default for MaskAugment {
    fn default() -> Self {
        Self { p: 0.5, kernel: [2, 6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccluderAugment {
    pub p: f64,
    pub count: [u32; 2],
    pub length_px: [f64; 2],
    pub width_px: [f64; 2],
    pub angle_deg: [f64; 2],
}

impl Default for OccluderAugment {
    fn default() -> Self {
        Self {
            p: 0.4,
            count: [1, 2],
            length_px: [100.0, 400.0],
            width_px: [8.0, 25.0],
            angle_deg: [-45.0, 45.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErasingAugment {
    pub p: f64,
    pub count: [u32; 2],
    /// Patch side range as image size divided by `[max_div, min_div]`.
    pub size_divisors: [u32; 2],
    /// Erased fraction of the image; patches exceeding the upper end are redrawn.
    pub ratio: [f64; 2],
}

impl Default for ErasingAugment {
    fn default() -> Self {
        Self {
            p: 0.4,
            count: [0, 2],
            size_divisors: [20, 8],
            ratio: [0.05, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeAugment {
    pub p: f64,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Default for NormalizeAugment {
    fn default() -> Self {
        Self {
            p: 0.5,
            a: [0.0, 0.2],
            b: [0.8, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleAugment {
    pub p: f64,
    pub s: [f64; 2],
    pub delta: [f64; 2],
    /// Noise standard deviation as a fraction of 255.
    pub noise_sigma: [f64; 2],
}

impl Default for ScaleAugment {
    fn default() -> Self {
        Self {
            p: 0.6,
            s: [0.7, 1.3],
            delta: [-30.0, 30.0],
            noise_sigma: [0.01, 0.05],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthAugment {
    pub occluder: OccluderAugment,
    pub erasing: ErasingAugment,
    pub normalize: NormalizeAugment,
    pub scale: ScaleAugment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub contour: ContourAugment,
    pub mask: MaskAugment,
    pub depth: DepthAugment,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("mask.p", self.mask.p),
            ("depth.occluder.p", self.depth.occluder.p),
            ("depth.erasing.p", self.depth.erasing.p),
            ("depth.normalize.p", self.depth.normalize.p),
            ("depth.scale.p", self.depth.scale.p),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        let c = &self.contour;
        let d = &self.depth;
        let ranges = [
            ("contour.dilation_iters", c.dilation_iters[0] as f64, c.dilation_iters[1] as f64),
            ("mask.kernel", self.mask.kernel[0] as f64, self.mask.kernel[1] as f64),
            ("depth.occluder.count", d.occluder.count[0] as f64, d.occluder.count[1] as f64),
            ("depth.occluder.length_px", d.occluder.length_px[0], d.occluder.length_px[1]),
            ("depth.occluder.width_px", d.occluder.width_px[0], d.occluder.width_px[1]),
            ("depth.occluder.angle_deg", d.occluder.angle_deg[0], d.occluder.angle_deg[1]),
            ("depth.erasing.count", d.erasing.count[0] as f64, d.erasing.count[1] as f64),
            // divisors run large to small: size range is [W/d0, W/d1]
            ("depth.erasing.size_divisors", d.erasing.size_divisors[1] as f64, d.erasing.size_divisors[0] as f64),
            ("depth.erasing.ratio", d.erasing.ratio[0], d.erasing.ratio[1]),
            ("depth.normalize.a", d.normalize.a[0], d.normalize.a[1]),
            ("depth.normalize.b", d.normalize.b[0], d.normalize.b[1]),
            ("depth.scale.s", d.scale.s[0], d.scale.s[1]),
            ("depth.scale.delta", d.scale.delta[0], d.scale.delta[1]),
            ("depth.scale.noise_sigma", d.scale.noise_sigma[0], d.scale.noise_sigma[1]),
        ];
        for (name, lo, hi) in ranges {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name}: lower end {lo} exceeds upper end {hi}")));
            }
        }
        if d.erasing.size_divisors[1] == 0 || self.mask.kernel[0] == 0 {
            return Err(Error::InvalidConfig("divisors and kernel sizes must be positive".into()));
        }
        if !(c.elastic_sigma > 0.0) || c.elastic_alpha < 0.0 || !(0.0..=1.0).contains(&c.occluder_fraction) {
            return Err(Error::InvalidConfig("contour elastic/occluder parameters out of range".into()));
        }
        Ok(())
    }
}

/// Independent stream for frame `frame` under the global `seed`.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn uniform_int(rng: &mut impl Rng, [lo, hi]: [u32; 2]) -> u32 {
    rng.random_range(lo..=hi)
}

fn chance(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Zhang–Suen thinning. Pixels outside the image count as background.
pub fn skeletonize(img: &BinaryImage) -> BinaryImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut cur = img.clone();
    let mut marked: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            marked.clear();
            for y in 0..h {
                for x in 0..w {
                    if !cur.get(x as usize, y as usize) {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let n = [
                        cur.get_signed(x, y - 1),
                        cur.get_signed(x + 1, y - 1),
                        cur.get_signed(x + 1, y),
                        cur.get_signed(x + 1, y + 1),
                        cur.get_signed(x, y + 1),
                        cur.get_signed(x - 1, y + 1),
                        cur.get_signed(x - 1, y),
                        cur.get_signed(x - 1, y - 1),
                    ];
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        marked.push((x as usize, y as usize));
                    }
                }
            }
            for &(x, y) in &marked {
                cur.set(x, y, false);
            }
            changed |= !marked.is_empty();
        }
        if !changed {
            return cur;
        }
    }
}

/// Dilation with the 2×2 cross element (anchor at the lower-right cell): a
/// pixel is set if it, its upper or its left neighbor is set.
pub fn dilate_cross(img: &BinaryImage, iterations: u32) -> BinaryImage {
    let mut cur = img.clone();
    for _ in 0..iterations {
        let prev = cur.clone();
        cur = BinaryImage::from_fn(img.width(), img.height(), |x, y| {
            let (xi, yi) = (x as i64, y as i64);
            prev.get(x, y) || prev.get_signed(xi - 1, yi) || prev.get_signed(xi, yi - 1)
        });
    }
    cur
}

/// Offsets of the k×k elliptical structuring element, rasterized row by row
/// as in common image libraries (half-width per row rounded to nearest).
pub fn ellipse_element(k: u32) -> Vec<(i64, i64)> {
    let k = k as i64;
    let r = k / 2;
    let c = k / 2;
    let inv_r2 = if r > 0 { 1.0 / (r * r) as f64 } else { 0.0 };
    let mut out = Vec::new();
    for i in 0..k {
        let dy = i - r;
        if dy.abs() > r {
            continue;
        }
        let dx = ((c as f64) * (((r * r - dy * dy) as f64) * inv_r2).sqrt()).round() as i64;
        let (j1, j2) = ((c - dx).max(0), (c + dx + 1).min(k));
        for j in j1..j2 {
            out.push((j - c, dy));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// One morphological pass with `element`. Out-of-image pixels are ignored.
pub fn morph(img: &BinaryImage, op: MorphOp, element: &[(i64, i64)]) -> BinaryImage {
    BinaryImage::from_fn(img.width(), img.height(), |x, y| {
        let (xi, yi) = (x as i64, y as i64);
        let inside = |dx: i64, dy: i64| {
            let (u, v) = (xi + dx, yi + dy);
            u >= 0 && v >= 0 && (u as usize) < img.width() && (v as usize) < img.height()
        };
        match op {
            MorphOp::Dilate => element.iter().any(|&(dx, dy)| img.get_signed(xi - dx, yi - dy)),
            MorphOp::Erode => element
                .iter()
                .all(|&(dx, dy)| !inside(dx, dy) || img.get_signed(xi + dx, yi + dy)),
        }
    })
}

/// Separable Gaussian blur with reflected borders, truncated at 4σ.
fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let reflect = |i: i64, n: i64| -> usize {
        // half-sample symmetric: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
        let period = 2 * n;
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - 1 - m }) as usize
    };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * data[y * w + reflect(x as i64 + k as i64 - radius, w as i64)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * tmp[reflect(y as i64 + k as i64 - radius, h as i64) * w + x])
                .sum();
        }
    }
    out
}

/// Displacement field `(dx, dy)` per pixel: uniform noise in `[-1, 1]`,
/// Gaussian-smoothed, scaled by `alpha`.
pub fn elastic_field(w: usize, h: usize, sigma: f64, alpha: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut noise = || -> Vec<f64> { (0..w * h).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect() };
    let (nx, ny) = (noise(), noise());
    let dx = gaussian_blur(&nx, w, h, sigma).into_iter().map(|v| v * alpha).collect();
    let dy = gaussian_blur(&ny, w, h, sigma).into_iter().map(|v| v * alpha).collect();
    (dx, dy)
}

/// `out(x, y) = in(round(x + dx), round(y + dy))`; samples outside are unset.
pub fn remap_nearest(img: &BinaryImage, dx: &[f64], dy: &[f64]) -> BinaryImage {
    let w = img.width();
    BinaryImage::from_fn(w, img.height(), |x, y| {
        let i = y * w + x;
        let sx = (x as f64 + dx[i]).round() as i64;
        let sy = (y as f64 + dy[i]).round() as i64;
        img.get_signed(sx, sy)
    })
}

/// Skeletonize, dilate, occlude with up to N rectangles, then elastic remap.
pub fn augment_contour(img: &BinaryImage, cfg: &ContourAugment, rng: &mut impl Rng) -> BinaryImage {
    let (w, h) = (img.width(), img.height());
    let iters = uniform_int(rng, cfg.dilation_iters);
    let mut out = dilate_cross(&skeletonize(img), iters);
    let count = uniform_int(rng, [0, cfg.max_occluders]);
    let rw = ((w as f64) * cfg.occluder_fraction).round() as usize;
    let rh = ((h as f64) * cfg.occluder_fraction).round() as usize;
    for _ in 0..count {
        let x0 = rng.random_range(0..=w.saturating_sub(rw));
        let y0 = rng.random_range(0..=h.saturating_sub(rh));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                out.set(x, y, false);
            }
        }
    }
    if cfg.elastic_alpha > 0.0 {
        let (dx, dy) = elastic_field(w, h, cfg.elastic_sigma, cfg.elastic_alpha, rng);
        out = remap_nearest(&out, &dx, &dy);
    }
    out
}

/// With probability `p`, one erosion or dilation with an elliptical element.
pub fn augment_mask(img: &BinaryImage, cfg: &MaskAugment, rng: &mut impl Rng) -> BinaryImage {
    if !chance(rng, cfg.p) {
        return img.clone();
    }
    let op = if rng.random::<bool>() { MorphOp::Dilate } else { MorphOp::Erode };
    let k = odd_kernel(uniform_int(rng, cfg.kernel));
    morph(img, op, &ellipse_element(k))
}

/// Even sizes are bumped to the next odd size.
pub fn odd_kernel(k: u32) -> u32 {
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Occluder, erasing, normalization and scale perturbation in that order.
/// Only pixels valid on input (z > 0) and not yet occluded are touched; all
/// others end as zero.
pub fn augment_depth(img: &DepthImage, cfg: &DepthAugment, rng: &mut impl Rng) -> DepthImage {
    let (w, h) = (img.width(), img.height());
    let mut z = img.data().to_vec();
    let mut valid: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();

    if chance(rng, cfg.occluder.p) {
        let n = uniform_int(rng, cfg.occluder.count);
        for _ in 0..n {
            let cx = uniform(rng, [0.0, w as f64]);
            let cy = uniform(rng, [0.0, h as f64]);
            let theta = uniform(rng, cfg.occluder.angle_deg).to_radians();
            let len = uniform(rng, cfg.occluder.length_px).min(w as f64);
            let wid = uniform(rng, cfg.occluder.width_px).min(h as f64);
            let (c, s) = (theta.cos(), theta.sin());
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let along = px * c + py * s;
                    let across = -px * s + py * c;
                    if along.abs() <= len / 2.0 && across.abs() <= wid / 2.0 {
                        valid[y * w + x] = false;
                    }
                }
            }
        }
    }

    if chance(rng, cfg.erasing.p) {
        let n = uniform_int(rng, cfg.erasing.count);
        let [d_small, d_large] = cfg.erasing.size_divisors;
        let w_range = [(w / d_small as usize) as u32, (w / d_large as usize) as u32];
        let h_range = [(h / d_small as usize) as u32, (h / d_large as usize) as u32];
        let pw = uniform_int(rng, w_range) as usize;
        let ph = uniform_int(rng, h_range) as usize;
        let ratio = (n as usize * pw * ph) as f64 / (w * h) as f64;
        if ratio <= cfg.erasing.ratio[1] && pw > 0 && ph > 0 {
            for _ in 0..n {
                let x0 = rng.random_range(0..=w - pw.min(w));
                let y0 = rng.random_range(0..=h - ph.min(h));
                for y in y0..(y0 + ph).min(h) {
                    for x in x0..(x0 + pw).min(w) {
                        valid[y * w + x] = false;
                    }
                }
            }
        }
    }

    if chance(rng, cfg.normalize.p) {
        let a = uniform(rng, cfg.normalize.a);
        let b = uniform(rng, cfg.normalize.b);
        let (lo, hi) = z
            .iter()
            .zip(&valid)
            .filter(|(_, &v)| v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&z, _)| (lo.min(z), hi.max(z)));
        if hi > lo {
            for (zi, &v) in z.iter_mut().zip(&valid) {
                if v {
                    let t = (*zi - lo) / (hi - lo);
                    *zi = 255.0 * (a + (b - a) * t);
                }
            }
        }
    }

    if chance(rng, cfg.scale.p) {
        let s = uniform(rng, cfg.scale.s);
        let delta = uniform(rng, cfg.scale.delta);
        let sigma = uniform(rng, cfg.scale.noise_sigma) * 255.0;
        let noise = Normal::new(0.0, sigma).ok();
        for (zi, &v) in z.iter_mut().zip(&valid) {
            if v {
                let eps = match &noise {
                    Some(n) if sigma > 0.0 => n.sample(rng),
                    _ => 0.0,
                };
                *zi = (s * *zi + delta + eps).max(0.0);
            }
        }
    }

    for (zi, &v) in z.iter_mut().zip(&valid) {
        if !v {
            *zi = 0.0;
        }
    }
    DepthImage::from_vec(w, h, z)
}
