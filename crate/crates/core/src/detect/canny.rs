//! Classical Canny edge detection on 8-bit RGB input.
//!
//! Thresholds apply to the smoothed Sobel magnitude rescaled to 0–255, with
//! the image's strongest gradient at 255.

use std::collections::VecDeque;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.4,
            low_threshold: 50.0,
            high_threshold: 150.0,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma > 0.0) {
            return Err(Error::Config(format!(
                "gaussian_sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        if !(self.low_threshold >= 0.0 && self.low_threshold < self.high_threshold) {
            return Err(Error::Config(format!(
                "need 0 <= low < high, got low={} high={}",
                self.low_threshold, self.high_threshold
            )));
        }
        Ok(())
    }

    /// Side length of the Gaussian smoothing kernel.
    pub fn kernel_size(&self) -> usize {
        2 * kernel_radius(self.gaussian_sigma) + 1
    }
}

fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// A dense row-major f64 plane.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn zeros(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.at(x, y)
    }
}

pub(crate) fn luminance(img: &RgbImage) -> Plane {
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    Plane {
        w: w as usize,
        h: h as usize,
        data,
    }
}

fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    let r = kernel_radius(sigma) as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let mut tmp = Plane::zeros(src.w, src.h);
    for y in 0..src.h {
        for x in 0..src.w {
            tmp.data[y * src.w + x] = kernel
                .iter()
                .zip(-r..=r)
                .map(|(k, d)| k * src.clamped(x as isize + d, y as isize))
                .sum();
        }
    }
    let mut out = Plane::zeros(src.w, src.h);
    for y in 0..src.h {
        for x in 0..src.w {
            out.data[y * src.w + x] = kernel
                .iter()
                .zip(-r..=r)
                .map(|(k, d)| k * tmp.clamped(x as isize, y as isize + d))
                .sum();
        }
    }
    out
}

/// Sobel gradients (gx, gy), with clamped borders.
fn sobel(src: &Plane) -> (Plane, Plane) {
    let mut gx = Plane::zeros(src.w, src.h);
    let mut gy = Plane::zeros(src.w, src.h);
    for y in 0..src.h as isize {
        for x in 0..src.w as isize {
            let p = |dx: isize, dy: isize| src.clamped(x + dx, y + dy);
            let i = y as usize * src.w + x as usize;
            gx.data[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy.data[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Smoothed gradient magnitude, rescaled so the strongest gradient in the
/// image is 255 (a flat image stays all zero). Thresholds are read on this
/// scale, which keeps the conventional 50/150 pair meaningful regardless of
/// how much the smoothing attenuates a step.
pub(crate) fn gradient_magnitude(img: &RgbImage, sigma: f64) -> (Plane, Plane, Plane) {
    let smoothed = gaussian_blur(&luminance(img), sigma);
    let (gx, gy) = sobel(&smoothed);
    let mut data: Vec<f64> = gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect();
    let max = data.iter().copied().fold(0.0, f64::max);
    // Anything below this is float noise from blurring a flat region.
    if max > 1e-9 {
        data.iter_mut().for_each(|m| *m *= 255.0 / max);
    } else {
        data.iter_mut().for_each(|m| *m = 0.0);
    }
    (Plane { w: gx.w, h: gx.h, data }, gx, gy)
}

/// Keeps ridge pixels of the magnitude along the gradient direction. A pixel
/// must beat its neighbour on the negative side strictly and at least match
/// the one on the positive side, so a two-pixel plateau thins to one pixel.
fn non_maximum_suppression(mag: &Plane, gx: &Plane, gy: &Plane) -> Plane {
    let mut out = Plane::zeros(mag.w, mag.h);
    if mag.w < 3 || mag.h < 3 {
        return out;
    }
    for y in 1..mag.h - 1 {
        for x in 1..mag.w - 1 {
            let m = mag.at(x, y);
            if m <= 0.0 {
                continue;
            }
            let mut angle = gy.at(x, y).atan2(gx.at(x, y)).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let behind = mag.at((x as isize - dx) as usize, (y as isize - dy) as usize);
            let ahead = mag.at((x as isize + dx) as usize, (y as isize + dy) as usize);
            if m > behind && m >= ahead {
                out.data[y * mag.w + x] = m;
            }
        }
    }
    out
}

fn hysteresis(thin: &Plane, low: f64, high: f64) -> GrayImage {
    let (w, h) = (thin.w, thin.h);
    let mut out = GrayImage::new(w as u32, h as u32);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if thin.at(x, y) > 0.0 && thin.at(x, y) >= high {
                out.put_pixel(x as u32, y as u32, Luma([255]));
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let v = thin.at(nx, ny);
                if v > 0.0 && v >= low && out.get_pixel(nx as u32, ny as u32)[0] == 0 {
                    out.put_pixel(nx as u32, ny as u32, Luma([255]));
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    out
}

/// Binary edge map (values 0 or 255) with the input's dimensions.
pub fn canny_edges(img: &RgbImage, params: &CannyParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = img.dimensions();
    let k = params.kernel_size();
    if (w as usize) < k || (h as usize) < k {
        return Err(Error::Image(format!(
            "{w}x{h} image is smaller than the {k}x{k} smoothing kernel"
        )));
    }
    let (mag, gx, gy) = gradient_magnitude(img, params.gaussian_sigma);
    let thin = non_maximum_suppression(&mag, &gx, &gy);
    Ok(hysteresis(&thin, params.low_threshold, params.high_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn step(w: u32, h: u32, boundary: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, _| if x < boundary { Rgb([0; 3]) } else { Rgb([255; 3]) })
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = RgbImage::from_pixel(32, 32, Rgb([128; 3]));
        let e = canny_edges(&img, &CannyParams::default()).unwrap();
        assert!(e.pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn step_edge_is_one_pixel_wide() {
        let e = canny_edges(&step(32, 32, 16), &CannyParams::default()).unwrap();
        for y in 1..31 {
            let cols: Vec<u32> = (0..32).filter(|&x| e.get_pixel(x, y)[0] == 255).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!((15..=16).contains(&cols[0]));
        }
    }

    #[test]
    fn thresholds_above_max_magnitude_give_nothing() {
        let p = CannyParams {
            low_threshold: 1000.0,
            high_threshold: 2000.0,
            ..Default::default()
        };
        let e = canny_edges(&step(32, 32, 16), &p).unwrap();
        assert!(e.pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn rejects_tiny_image_and_bad_params() {
        let img = RgbImage::new(10, 32);
        assert!(matches!(
            canny_edges(&img, &CannyParams::default()),
            Err(Error::Image(_))
        ));
        let bad = CannyParams {
            low_threshold: 10.0,
            high_threshold: 10.0,
            ..Default::default()
        };
        assert!(canny_edges(&step(32, 32, 16), &bad).is_err());
    }

    fn arb_image() -> impl Strategy<Value = RgbImage> {
        (11u32..28, 11u32..28, any::<u64>()).prop_map(|(w, h, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn binary_and_same_shape(img in arb_image()) {
            let e = canny_edges(&img, &CannyParams::default()).unwrap();
            prop_assert_eq!(e.dimensions(), img.dimensions());
            prop_assert!(e.pixels().all(|p| p[0] == 0 || p[0] == 255));
            prop_assert_eq!(canny_edges(&img, &CannyParams::default()).unwrap(), e);
        }

        #[test]
        fn raising_high_threshold_never_adds_edges(img in arb_image(), low in 0.0f64..60.0, a in 1.0f64..100.0, b in 0.0f64..100.0) {
            let p1 = CannyParams { low_threshold: low, high_threshold: low + a, ..Default::default() };
            let p2 = CannyParams { high_threshold: low + a + b, ..p1 };
            let e1 = canny_edges(&img, &p1).unwrap();
            let e2 = canny_edges(&img, &p2).unwrap();
            for (q1, q2) in e1.pixels().zip(e2.pixels()) {
                prop_assert!(q2[0] <= q1[0]);
            }
        }
    }
}
