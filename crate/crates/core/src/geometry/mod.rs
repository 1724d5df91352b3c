//! Pixel-grid primitives: image dimensions, boxes, points and binary masks.
//!
//! Coordinates are integers in the native pixel frame, origin top-left.
//! A box `[x1, y1, x2, y2]` covers the pixels `x1 <= x < x2`, `y1 <= y < y2`,
//! so its area is `(x2 - x1) * (y2 - y1)` and rasterizing it gives a mask of
//! exactly that area.

mod mask;
mod pgm;
mod rle;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mask::{mask_union, Mask};
pub use pgm::{read_pgm, write_pgm};
pub use rle::RleMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains_box(&self, b: &BBox) -> bool {
        b.x1 >= 0 && b.y1 >= 0 && b.x2 <= self.width as i64 && b.y2 <= self.height as i64
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width as i64 && p.y < self.height as i64
    }
}

impl fmt::Display for ImageDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Axis-aligned box in corner form. Construction enforces `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

impl BBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self> {
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> i64 {
        self.x1
    }
    pub fn y1(&self) -> i64 {
        self.y1
    }
    pub fn x2(&self) -> i64 {
        self.x2
    }
    pub fn y2(&self) -> i64 {
        self.y2
    }

    pub fn coords(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Closed containment test: points on the far edge count as inside.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn clamp_to(&self, dims: ImageDims) -> BBox {
        let (w, h) = (dims.width as i64, dims.height as i64);
        BBox {
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
            x2: self.x2.clamp(0, w),
            y2: self.y2.clamp(0, h),
        }
    }

    /// Rasterize onto `dims`; pixels outside the frame are dropped.
    pub fn rasterize(&self, dims: ImageDims) -> Mask {
        let mut m = Mask::empty(dims);
        let c = self.clamp_to(dims);
        for y in c.y1..c.y2 {
            for x in c.x1..c.x2 {
                m.set(x as u32, y as u32, true);
            }
        }
        m
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = Error;
    fn try_from(c: [i64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn clamp_to(&self, dims: ImageDims) -> Point {
        Point {
            x: self.x.clamp(0, dims.width as i64 - 1),
            y: self.y.clamp(0, dims.height as i64 - 1),
        }
    }
}

impl From<[i64; 2]> for Point {
    fn from(c: [i64; 2]) -> Self {
        Point::new(c[0], c[1])
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a == 0 && area_b == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    inter as f64 / union as f64
}

/// How the four per-coordinate box differences are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Reduction {
    #[default]
    Mean,
    Sum,
}

/// Mean absolute coordinate difference between two boxes.
pub fn bbox_l1(a: &BBox, b: &BBox) -> f64 {
    bbox_l1_with(a, b, L1Reduction::Mean)
}

pub fn bbox_l1_with(a: &BBox, b: &BBox, reduction: L1Reduction) -> f64 {
    let sum: i64 = a
        .coords()
        .iter()
        .zip(b.coords().iter())
        .map(|(p, q)| (p - q).abs())
        .sum();
    match reduction {
        L1Reduction::Mean => sum as f64 / 4.0,
        L1Reduction::Sum => sum as f64,
    }
}

pub fn point_l1(a: &Point, b: &Point) -> f64 {
    ((a.x - b.x).abs() + (a.y - b.y).abs()) as f64 / 2.0
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, union) = a.intersection_union(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
