//! Our Canny against imageproc's on simple gray scenes.
//!
//! imageproc thresholds the raw Sobel magnitude of its own blurred image;
//! ours rescales the magnitude so the image maximum is 255. The reference
//! thresholds are therefore ours × (reference max / 255). Its non-maximum
//! suppression keeps both pixels of a symmetric plateau, so edges are
//! compared with a one-pixel tolerance in both directions.

use image::{GrayImage, Luma, Rgb, RgbImage};
use imageproc::filter::gaussian_blur_f32;
use imageproc::gradients::{horizontal_sobel, vertical_sobel};

use synthaug::detect::{canny_edges, CannyParams};

fn reference(gray: &GrayImage, p: &CannyParams) -> GrayImage {
    let blurred = gaussian_blur_f32(gray, p.gaussian_sigma as f32);
    let gx = horizontal_sobel(&blurred);
    let gy = vertical_sobel(&blurred);
    let max = gx
        .iter()
        .zip(gy.iter())
        .map(|(h, v)| (*h as f32).hypot(*v as f32))
        .fold(0.0f32, f32::max);
    let scale = max / 255.0;
    imageproc::edges::canny(gray, p.low_threshold as f32 * scale, p.high_threshold as f32 * scale)
}

fn to_rgb(gray: &GrayImage) -> RgbImage {
    RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    })
}

fn edge_pixels(img: &GrayImage) -> Vec<(i64, i64)> {
    img.enumerate_pixels()
        .filter(|(_, _, p)| p[0] == 255)
        .map(|(x, y, _)| (x as i64, y as i64))
        .collect()
}

/// Every edge pixel of `a` has an edge pixel of `b` within one pixel.
fn covered(a: &[(i64, i64)], b: &[(i64, i64)]) -> Result<(), (i64, i64)> {
    for &(x, y) in a {
        if !b.iter().any(|&(u, v)| (u - x).abs() <= 1 && (v - y).abs() <= 1) {
            return Err((x, y));
        }
    }
    Ok(())
}

fn assert_matches_reference(gray: &GrayImage) {
    let p = CannyParams::default();
    let ours = canny_edges(&to_rgb(gray), &p).unwrap();
    let theirs = reference(gray, &p);
    let (a, b) = (edge_pixels(&ours), edge_pixels(&theirs));
    assert!(!a.is_empty() && !b.is_empty());
    if let Err(px) = covered(&a, &b) {
        panic!("our edge pixel {px:?} has no reference edge nearby");
    }
    if let Err(px) = covered(&b, &a) {
        panic!("reference edge pixel {px:?} has no edge of ours nearby");
    }
}

#[test]
fn vertical_step_matches_and_is_one_pixel_wide() {
    let gray = GrayImage::from_fn(32, 32, |x, _| Luma([if x < 16 { 0 } else { 255 }]));
    assert_matches_reference(&gray);
    let ours = canny_edges(&to_rgb(&gray), &CannyParams::default()).unwrap();
    for y in 1..31 {
        let cols: Vec<u32> = (0..32).filter(|&x| ours.get_pixel(x, y)[0] == 255).collect();
        assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
        assert!((15..=16).contains(&cols[0]));
    }
}

#[test]
fn horizontal_step_matches() {
    let gray = GrayImage::from_fn(40, 32, |_, y| Luma([if y < 12 { 30 } else { 200 }]));
    assert_matches_reference(&gray);
}

#[test]
fn low_contrast_step_matches() {
    let gray = GrayImage::from_fn(32, 32, |x, _| Luma([if x < 20 { 100 } else { 140 }]));
    assert_matches_reference(&gray);
}

#[test]
fn diagonal_half_plane_matches() {
    let gray = GrayImage::from_fn(40, 40, |x, y| Luma([if x > y { 220 } else { 20 }]));
    assert_matches_reference(&gray);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let img = RgbImage::from_fn(48, 40, |x, y| Rgb([(x * 5) as u8, (y * 6) as u8, ((x ^ y) * 3) as u8]));
    let a = canny_edges(&img, &CannyParams::default()).unwrap();
    let b = canny_edges(&img, &CannyParams::default()).unwrap();
    assert_eq!(a.as_raw(), b.as_raw());
}
