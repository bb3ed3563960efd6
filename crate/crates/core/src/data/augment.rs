//! Stochastic image augmentation.
//!
//! Each transform in the policy fires with its own probability, drawn per
//! image from `U(p_min, p_max)` unless forced. Geometric transforms sample
//! bilinearly and fill out-of-bounds pixels with zeros. Values are clamped to
//! `[0, 1]` after every transform.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::{chw, resize_bilinear};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    ColorShift,
    Blur,
    Translate,
    Rotate,
    Mirror,
    Crop,
    Sharpen,
    Shadow,
    Illumination,
    Zoom,
}

impl Transform {
    pub const ALL: [Transform; 10] = [
        Transform::ColorShift,
        Transform::Blur,
        Transform::Translate,
        Transform::Rotate,
        Transform::Mirror,
        Transform::Crop,
        Transform::Sharpen,
        Transform::Shadow,
        Transform::Illumination,
        Transform::Zoom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::ColorShift => "color_shift",
            Transform::Blur => "blur",
            Transform::Translate => "translate",
            Transform::Rotate => "rotate",
            Transform::Mirror => "mirror",
            Transform::Crop => "crop",
            Transform::Sharpen => "sharpen",
            Transform::Shadow => "shadow",
            Transform::Illumination => "illumination",
            Transform::Zoom => "zoom",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Transform> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown transform {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub transforms: Vec<Transform>,
    pub p_min: f64,
    pub p_max: f64,
    /// Overrides every sampled probability.
    pub force_p: Option<f64>,
    pub rotate_deg: f64,
    /// Fraction of the image side.
    pub translate: f64,
    pub zoom: (f64, f64),
    pub color_shift: f64,
    /// Fraction of each side kept by a crop.
    pub crop: (f64, f64),
    pub sharpen: (f64, f64),
    pub shade: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            transforms: Transform::ALL.to_vec(),
            p_min: 0.05,
            p_max: 0.5,
            force_p: None,
            rotate_deg: 15.0,
            translate: 0.1,
            zoom: (0.9, 1.1),
            color_shift: 0.1,
            crop: (0.85, 1.0),
            sharpen: (0.5, 1.0),
            shade: (0.7, 1.3),
        }
    }
}

impl AugmentPolicy {
    /// The policy with every probability pinned to `p`.
    pub fn forced(p: f64) -> AugmentPolicy {
        AugmentPolicy { force_p: Some(p), ..Default::default() }
    }

    pub fn only(transforms: &[Transform], p: f64) -> AugmentPolicy {
        AugmentPolicy { transforms: transforms.to_vec(), force_p: Some(p), ..Default::default() }
    }
}

#[derive(Clone)]
struct Img {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Img {
    fn plane(&self, ch: usize) -> &[f32] {
        &self.v[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    fn clamp(&mut self) {
        self.v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    }

    fn tensor(self) -> Result<Tensor> {
        Tensor::from_vec(&[self.c, self.h, self.w], self.v)
    }

    /// Bilinear sample of channel `ch` at `(y, x)`; zero outside the image.
    fn sample(&self, ch: usize, y: f64, x: f64) -> f32 {
        let (h, w) = (self.h as isize, self.w as isize);
        let p = self.plane(ch);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let at = |yy: isize, xx: isize| {
            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                0.0
            } else {
                p[yy as usize * self.w + xx as usize]
            }
        };
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Inverse-maps every output pixel through `f(y, x) -> (src_y, src_x)`.
    fn warp(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Img {
        let mut v = vec![0f32; self.v.len()];
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    let (sy, sx) = f(y as f64, x as f64);
                    v[(ch * self.h + y) * self.w + x] = self.sample(ch, sy, sx);
                }
            }
        }
        Img { v, ..*self }
    }

    /// 3x3 box blur with edge clamping.
    fn box_blur(&self) -> Img {
        let (h, w) = (self.h, self.w);
        let mut v = vec![0f32; self.v.len()];
        for ch in 0..self.c {
            let p = self.plane(ch);
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for dy in [-1isize, 0, 1] {
                        for dx in [-1isize, 0, 1] {
                            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                            s += p[yy * w + xx];
                        }
                    }
                    v[(ch * h + y) * w + x] = s / 9.0;
                }
            }
        }
        Img { v, ..*self }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn apply(t: Transform, img: Img, p: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Result<Img> {
    let (h, w) = (img.h as f64, img.w as f64);
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    Ok(match t {
        Transform::ColorShift => {
            let mut img = img;
            let plane = img.h * img.w;
            for ch in 0..img.c {
                let d = uniform(rng, (-p.color_shift, p.color_shift)) as f32;
                img.v[ch * plane..(ch + 1) * plane].iter_mut().for_each(|x| *x += d);
            }
            img
        }
        Transform::Blur => img.box_blur(),
        Transform::Translate => {
            let dy = (uniform(rng, (-p.translate, p.translate)) * h).round();
            let dx = (uniform(rng, (-p.translate, p.translate)) * w).round();
            img.warp(|y, x| (y - dy, x - dx))
        }
        Transform::Rotate => {
            let a = uniform(rng, (-p.rotate_deg, p.rotate_deg)).to_radians();
            let (s, c) = a.sin_cos();
            img.warp(|y, x| {
                let (yy, xx) = (y - cy, x - cx);
                (cy + c * yy - s * xx, cx + s * yy + c * xx)
            })
        }
        Transform::Mirror => {
            let mut img = img;
            let w = img.w;
            img.v.chunks_mut(w).for_each(<[f32]>::reverse);
            img
        }
        Transform::Crop => {
            let f = uniform(rng, p.crop);
            let ch = ((h * f).round() as usize).clamp(1, img.h);
            let cw = ((w * f).round() as usize).clamp(1, img.w);
            let y0 = rng.random_range(0..=img.h - ch);
            let x0 = rng.random_range(0..=img.w - cw);
            let mut v = Vec::with_capacity(img.c * ch * cw);
            for c in 0..img.c {
                let pl = img.plane(c);
                for y in y0..y0 + ch {
                    v.extend_from_slice(&pl[y * img.w + x0..y * img.w + x0 + cw]);
                }
            }
            let cropped = Tensor::from_vec(&[img.c, ch, cw], v)?;
            let back = resize_bilinear(&cropped, img.h, img.w)?;
            Img { v: back.to_f32_vec(), ..img }
        }
        Transform::Sharpen => {
            let amount = uniform(rng, p.sharpen) as f32;
            let blurred = img.box_blur();
            let v = img.v.iter().zip(&blurred.v).map(|(x, b)| x + amount * (x - b)).collect();
            Img { v, ..img }
        }
        Transform::Shadow => {
            let f = uniform(rng, p.shade) as f32;
            let y0 = rng.random_range(0..img.h);
            let y1 = rng.random_range(y0..img.h) + 1;
            let x0 = rng.random_range(0..img.w);
            let x1 = rng.random_range(x0..img.w) + 1;
            let mut img = img;
            let (ih, iw) = (img.h, img.w);
            for c in 0..img.c {
                for y in y0..y1 {
                    let row = &mut img.v[(c * ih + y) * iw..(c * ih + y) * iw + iw];
                    row[x0..x1].iter_mut().for_each(|v| *v *= f);
                }
            }
            img
        }
        Transform::Illumination => {
            let f = uniform(rng, p.shade) as f32;
            let mut img = img;
            img.v.iter_mut().for_each(|v| *v *= f);
            img
        }
        Transform::Zoom => {
            let z = uniform(rng, p.zoom);
            img.warp(|y, x| (cy + (y - cy) / z, cx + (x - cx) / z))
        }
    })
}

/// Applies the policy to a `(C, H, W)` image; fully determined by `rng`'s state.
pub fn augment(img: &Tensor, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let [c, h, w] = chw(img)?;
    let mut im = Img { c, h, w, v: img.to_f32_vec() };
    for &t in &policy.transforms {
        let p = match policy.force_p {
            Some(p) => p,
            None => uniform(rng, (policy.p_min, policy.p_max)),
        };
        if rng.random::<f64>() < p {
            im = apply(t, im, policy, rng)?;
            im.clamp();
        }
    }
    im.clamp();
    Ok(im.tensor()?.cast(img.precision()))
}
