//! 8-bit RGB composites of covariance fields.

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{wrapped_arg, CovarianceField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositeMode {
    /// Hue from the phase of `C_ij`, saturation from coherence, value from `C_ii`.
    Insar(usize, usize),
    /// Grayscale square-root reflectivity of one channel.
    Amplitude(usize),
}

/// Display stretch: divide by the given quantile, clip at 1, apply gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stretch {
    pub quantile: f64,
    pub gamma: f64,
}

impl Default for Stretch {
    fn default() -> Self {
        Self {
            quantile: 0.99,
            gamma: 0.7,
        }
    }
}

impl Stretch {
    fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut sorted: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let top = if sorted.is_empty() {
            0.0
        } else {
            let i = ((sorted.len() - 1) as f64 * self.quantile).round() as usize;
            sorted[i.min(sorted.len() - 1)]
        };
        values.mapv(|v| {
            if top > 0.0 && v > 0.0 {
                (v / top).min(1.0).powf(self.gamma)
            } else {
                0.0
            }
        })
    }
}

/// HSV to RGB with all components in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_composite(field: &CovarianceField, mode: CompositeMode, stretch: Stretch) -> Result<RgbImage> {
    let dim = field.dim();
    let check = |c: usize| {
        if c >= dim {
            Err(Error::InvalidArgument(format!("channel {c} out of range for D={dim}")))
        } else {
            Ok(())
        }
    };
    let (h, w) = (field.height(), field.width());
    let mut img = RgbImage::new(w as u32, h as u32);
    match mode {
        CompositeMode::Amplitude(d) => {
            check(d)?;
            let amp = field.reflectivity(d).mapv(|r| r.max(0.0).sqrt());
            let v = stretch.apply(&amp);
            for ((r, c), x) in v.indexed_iter() {
                let b = to_byte(*x);
                img.put_pixel(c as u32, r as u32, Rgb([b, b, b]));
            }
        }
        CompositeMode::Insar(i, j) => {
            check(i)?;
            check(j)?;
            if i == j {
                return Err(Error::InvalidArgument("interferogram needs two distinct channels".into()));
            }
            let value = stretch.apply(&field.reflectivity(i).to_owned());
            for r in 0..h {
                for c in 0..w {
                    let z = crate::model::off_diagonal(field, i, j, r, c);
                    let (a, b) = (field.reflectivity(i)[(r, c)], field.reflectivity(j)[(r, c)]);
                    let coh = if a > 0.0 && b > 0.0 {
                        (z.norm() / (a * b).sqrt()).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let hue = (wrapped_arg(z) / std::f64::consts::TAU).rem_euclid(1.0);
                    let rgb = hsv_to_rgb(hue, coh, value[(r, c)]);
                    img.put_pixel(c as u32, r as u32, Rgb(rgb.map(to_byte)));
                }
            }
        }
    }
    Ok(img)
}
