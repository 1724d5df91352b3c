use std::fmt;

use super::{BBox, ImageDims, Point};
use crate::error::{Error, Result};

/// Binary raster mask stored as a row-major packed bit array.
///
/// Bit `y * width + x` lives in word `i / 64` at position `i % 64`. Bits past
/// `width * height` in the last word are always zero, so word-wise popcounts
/// give exact areas.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: ImageDims,
    words: Vec<u64>,
}

impl Mask {
    pub fn empty(dims: ImageDims) -> Self {
        Self {
            dims,
            words: vec![0; dims.pixel_count().div_ceil(64)],
        }
    }

    pub fn full(dims: ImageDims) -> Self {
        let mut m = Self {
            dims,
            words: vec![u64::MAX; dims.pixel_count().div_ceil(64)],
        };
        m.clear_tail();
        m
    }

    pub fn from_bools(dims: ImageDims, bits: &[bool]) -> Result<Self> {
        if bits.len() != dims.pixel_count() {
            return Err(Error::BadMaskLength {
                expected: dims.pixel_count(),
                got: bits.len(),
            });
        }
        let mut m = Self::empty(dims);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(m)
    }

    /// Build from a predicate over `(x, y)`.
    pub fn from_fn(dims: ImageDims, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(dims);
        for y in 0..dims.height {
            for x in 0..dims.width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.dims.pixel_count()).map(|i| self.bit(i)).collect()
    }

    #[inline]
    fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.dims.width && y < self.dims.height);
        self.bit(y as usize * self.dims.width as usize + x as usize)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(
            x < self.dims.width && y < self.dims.height,
            "pixel ({x}, {y}) outside {}",
            self.dims
        );
        let i = y as usize * self.dims.width as usize + x as usize;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn area(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(self.dims, other.dims));
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)` in pixels.
    pub fn intersection_union(&self, other: &Mask) -> Result<(u64, u64)> {
        self.check_dims(other)?;
        let (mut inter, mut union) = (0u64, 0u64);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += (a & b).count_ones() as u64;
            union += (a | b).count_ones() as u64;
        }
        Ok((inter, union))
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersect_with(&mut self, other: &Mask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
        Ok(())
    }

    /// Tight bounding box in corner form, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (x, y) in self.iter_set() {
            any = true;
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x + 1);
            y2 = y2.max(y + 1);
        }
        any.then(|| BBox::new(x1 as i64, y1 as i64, x2 as i64, y2 as i64).unwrap())
    }

    /// The set pixel closest to the centroid (ties: row-major first), so the
    /// point always lies on the mask even for non-convex shapes.
    pub fn interior_point(&self) -> Option<Point> {
        let n = self.area();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .iter_set()
            .fold((0f64, 0f64), |(a, b), (x, y)| (a + x as f64, b + y as f64));
        let (cx, cy) = (sx / n as f64, sy / n as f64);
        let mut best: Option<((u32, u32), f64)> = None;
        for (x, y) in self.iter_set() {
            let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some(((x, y), d));
            }
        }
        best.map(|((x, y), _)| Point::new(x as i64, y as i64))
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.dims.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let i = wi * 64 + tz;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    fn clear_tail(&mut self) {
        let n = self.dims.pixel_count();
        if !n.is_multiple_of(64) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask({}, area={})", self.dims, self.area())
    }
}

pub fn mask_union(masks: &[Mask]) -> Result<Mask> {
    let (first, rest) = masks.split_first().ok_or(Error::EmptyInput)?;
    let mut out = first.clone();
    for m in rest {
        out.union_with(m)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mask_iou;

    fn row(bits: &str) -> Mask {
        let v: Vec<bool> = bits.chars().map(|c| c == '1').collect();
        Mask::from_bools(ImageDims::new(v.len() as u32, 1).unwrap(), &v).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = row("1100");
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&row("1100"), &row("0011")).unwrap(), 0.0);
        assert!((mask_iou(&a, &row("0110")).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&row("0000"), &row("0000")).unwrap(), 1.0);
    }

    #[test]
    fn iou_dims_mismatch() {
        assert!(matches!(
            mask_iou(&row("10"), &row("100")),
            Err(Error::DimsMismatch(..))
        ));
    }

    #[test]
    fn union_examples() {
        let m = row("1010");
        assert_eq!(mask_union(std::slice::from_ref(&m)).unwrap(), m);
        assert_eq!(mask_union(&[m.clone(), m.clone()]).unwrap(), m);
        assert_eq!(mask_union(&[row("1100"), row("0110")]).unwrap(), row("1110"));
        assert_eq!(mask_union(&[]), Err(Error::EmptyInput));
        assert!(mask_union(&[row("1"), row("10")]).is_err());
    }

    #[test]
    fn full_mask_area_and_tail() {
        let d = ImageDims::new(7, 11).unwrap();
        let f = Mask::full(d);
        assert_eq!(f.area(), 77);
        assert_eq!(f.to_bools().iter().filter(|b| **b).count(), 77);
    }

    #[test]
    fn bad_length() {
        let d = ImageDims::new(2, 2).unwrap();
        assert!(Mask::from_bools(d, &[true; 3]).is_err());
    }

    #[test]
    fn bbox_and_point() {
        let d = ImageDims::new(10, 10).unwrap();
        let m = Mask::from_fn(d, |x, y| (2..5).contains(&x) && (3..9).contains(&y));
        assert_eq!(m.bounding_box(), Some(BBox::new(2, 3, 5, 9).unwrap()));
        let p = m.interior_point().unwrap();
        assert!(m.get(p.x as u32, p.y as u32));
        assert_eq!(Mask::empty(d).bounding_box(), None);
        let coords: Vec<_> = m.iter_set().take(2).collect();
        assert_eq!(coords, vec![(2, 3), (3, 3)]);
    }
}
