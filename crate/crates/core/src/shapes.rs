//! Axis-aligned shape rendering for the synthetic corpus and the procedural
//! generator. Each class draws from its own colour band so that a patch
//! classifier can identify it from local appearance.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SHAPE_NAMES: [&str; 3] = ["circle", "square", "triangle"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "circle" => Some(Shape::Circle),
            "square" => Some(Shape::Square),
            "triangle" => Some(Shape::Triangle),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    fn color(self, rng: &mut ChaCha8Rng) -> [u8; 3] {
        let hi = rng.gen_range(170..=255u8);
        let lo1 = rng.gen_range(10..=90u8);
        let lo2 = rng.gen_range(10..=90u8);
        match self {
            Shape::Circle => [hi, lo1, lo2],
            Shape::Square => [lo1, hi, lo2],
            Shape::Triangle => [lo1, lo2, hi],
        }
    }

    /// Whether the pixel at offset (dx, dy) inside a `size`-sided box is
    /// covered.
    fn covers(self, dx: u32, dy: u32, size: u32) -> bool {
        let s = size as f64;
        let (px, py) = (dx as f64 + 0.5, dy as f64 + 0.5);
        match self {
            Shape::Square => true,
            Shape::Circle => {
                let r = s / 2.0;
                (px - r).powi(2) + (py - r).powi(2) <= r * r
            }
            Shape::Triangle => {
                // Apex at top centre, base along the bottom edge.
                let half = (py / s) * s / 2.0;
                (px - s / 2.0).abs() <= half
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub shape: Shape,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub color: [u8; 3],
}

impl Placement {
    fn overlaps(&self, other: &Placement, gap: u32) -> bool {
        let a = (self.x, self.y, self.x + self.size + gap, self.y + self.size + gap);
        let b = (other.x, other.y, other.x + other.size + gap, other.y + other.size + gap);
        a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Placement {
        Placement {
            x: (self.x as i64 + dx) as u32,
            y: (self.y as i64 + dy) as u32,
            ..*self
        }
    }
}

/// Shape side lengths used at a given canvas size (never below 8 px).
pub fn size_range(width: u32, height: u32) -> (u32, u32) {
    let m = width.min(height);
    let lo = (m / 5).max(8);
    let hi = (m * 3 / 8).max(lo + 1);
    (lo, hi)
}

pub fn noise_background(width: u32, height: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(width, height, |_, _| {
        let base = rng.gen_range(0..=50u8);
        Rgb([
            base + rng.gen_range(0..=10u8),
            base + rng.gen_range(0..=10u8),
            base + rng.gen_range(0..=10u8),
        ])
    })
}

/// Places one object per entry of `shapes` without overlap. Returns `None`
/// if the canvas cannot fit them after bounded retries.
pub fn place(
    shapes: &[Shape],
    width: u32,
    height: u32,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Placement>> {
    let (lo, hi) = size_range(width, height);
    'attempt: for _ in 0..50 {
        let mut placed: Vec<Placement> = Vec::with_capacity(shapes.len());
        for &shape in shapes {
            let mut ok = false;
            for _ in 0..100 {
                let size = rng.gen_range(lo..=hi).min(width).min(height);
                let p = Placement {
                    shape,
                    x: rng.gen_range(0..=width - size),
                    y: rng.gen_range(0..=height - size),
                    size,
                    color: shape.color(rng),
                };
                if placed.iter().all(|q| !p.overlaps(q, 2)) {
                    placed.push(p);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'attempt;
            }
        }
        return Some(placed);
    }
    None
}

pub fn draw(img: &mut RgbImage, p: &Placement) {
    for dy in 0..p.size {
        for dx in 0..p.size {
            let (x, y) = (p.x + dx, p.y + dy);
            if x < img.width() && y < img.height() && p.shape.covers(dx, dy, p.size) {
                img.put_pixel(x, y, Rgb(p.color));
            }
        }
    }
}

pub fn render(background: &RgbImage, placements: &[Placement]) -> RgbImage {
    let mut img = background.clone();
    for p in placements {
        draw(&mut img, p);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    #[test]
    fn placements_fit_and_do_not_overlap() {
        let mut r = rng(3);
        for _ in 0..200 {
            let shapes = [Shape::Circle, Shape::Square, Shape::Triangle];
            let ps = place(&shapes, 64, 64, &mut r).expect("fits");
            for (i, p) in ps.iter().enumerate() {
                assert!(p.size >= 8 && p.x + p.size <= 64 && p.y + p.size <= 64);
                for q in &ps[i + 1..] {
                    assert!(!p.overlaps(q, 0));
                }
            }
        }
    }

    #[test]
    fn shapes_cover_expected_area() {
        let area = |s: Shape| {
            (0..20)
                .flat_map(|y| (0..20).map(move |x| (x, y)))
                .filter(|&(x, y)| s.covers(x, y, 20))
                .count()
        };
        assert_eq!(area(Shape::Square), 400);
        let c = area(Shape::Circle) as f64;
        assert!((c - std::f64::consts::PI * 100.0).abs() < 20.0, "{c}");
        let t = area(Shape::Triangle) as f64;
        assert!((t - 200.0).abs() < 20.0, "{t}");
    }
}
