//! COCO-style uncompressed run-length encoding.
//!
//! Pixels are visited column-major (down each column, then to the next
//! column). `counts` alternates zero-runs and one-runs and always starts with
//! a zero-run, which is `0` when the first pixel is set. Serialized as
//! `{"size": [height, width], "counts": [...]}`.

use serde::{Deserialize, Serialize};

use super::{ImageDims, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RleJson", into = "RleJson")]
pub struct RleMask {
    pub dims: ImageDims,
    pub counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct RleJson {
    size: [u32; 2],
    counts: Vec<u64>,
}

impl TryFrom<RleJson> for RleMask {
    type Error = Error;
    fn try_from(j: RleJson) -> Result<Self> {
        let dims = ImageDims::new(j.size[1], j.size[0])?;
        RleMask::new(dims, j.counts)
    }
}

impl From<RleMask> for RleJson {
    fn from(r: RleMask) -> Self {
        RleJson {
            size: [r.dims.height, r.dims.width],
            counts: r.counts,
        }
    }
}

impl RleMask {
    pub fn new(dims: ImageDims, counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total != dims.pixel_count() as u64 {
            return Err(Error::CorruptRle(format!(
                "counts sum to {total}, expected {}",
                dims.pixel_count()
            )));
        }
        Ok(Self { dims, counts })
    }

    pub fn encode(mask: &Mask) -> Self {
        let dims = mask.dims();
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for x in 0..dims.width {
            for y in 0..dims.height {
                let b = mask.get(x, y);
                if b != current {
                    counts.push(run);
                    run = 0;
                    current = b;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self { dims, counts }
    }

    pub fn decode(&self) -> Result<Mask> {
        let total: u64 = self.counts.iter().sum();
        let n = self.dims.pixel_count() as u64;
        if total != n {
            return Err(Error::CorruptRle(format!(
                "counts sum to {total}, expected {n}"
            )));
        }
        let h = self.dims.height as u64;
        let mut mask = Mask::empty(self.dims);
        let mut pos = 0u64;
        for (i, &run) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for k in pos..pos + run {
                    mask.set((k / h) as u32, (k % h) as u32, true);
                }
            }
            pos += run;
        }
        Ok(mask)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("rle serializes")
    }
}

impl From<&Mask> for RleMask {
    fn from(m: &Mask) -> Self {
        RleMask::encode(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    #[test]
    fn canonical_counts() {
        assert_eq!(RleMask::encode(&Mask::empty(d(2, 2))).counts, vec![4]);
        assert_eq!(RleMask::encode(&Mask::full(d(2, 2))).counts, vec![0, 4]);
    }

    #[test]
    fn column_major_order() {
        // 3 wide, 2 tall; set (1,0) and (1,1): column 1 fully set
        let m = Mask::from_fn(d(3, 2), |x, _| x == 1);
        assert_eq!(RleMask::encode(&m).counts, vec![2, 2, 2]);
        // row 0 set: alternates per column
        let m = Mask::from_fn(d(3, 2), |_, y| y == 0);
        assert_eq!(RleMask::encode(&m).counts, vec![0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn corrupt_sum_rejected() {
        let r = RleMask {
            dims: d(2, 2),
            counts: vec![1, 2],
        };
        assert!(matches!(r.decode(), Err(Error::CorruptRle(_))));
        assert!(RleMask::new(d(2, 2), vec![5]).is_err());
        assert!(serde_json::from_str::<RleMask>(r#"{"size":[2,2],"counts":[3]}"#).is_err());
    }

    #[test]
    fn json_shape() {
        let m = Mask::from_fn(d(3, 2), |x, _| x == 1);
        let s = serde_json::to_string(&RleMask::encode(&m)).unwrap();
        assert_eq!(s, r#"{"size":[2,3],"counts":[2,2,2]}"#);
        let back: RleMask = serde_json::from_str(&s).unwrap();
        assert_eq!(back.decode().unwrap(), m);
    }
}
