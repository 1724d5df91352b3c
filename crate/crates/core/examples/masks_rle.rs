//! Mask rasterization, IoU, COCO RLE and PGM round trips.

use rlvrseg::geometry::{bbox_iou, mask_iou, read_pgm, write_pgm, BBox, ImageDims, Mask, RleMask};

fn main() -> rlvrseg::Result<()> {
    let dims = ImageDims::new(16, 12)?;
    let a = BBox::new(2, 2, 10, 8)?;
    let b = BBox::new(4, 3, 12, 9)?;
    println!("bbox iou {:.4}", bbox_iou(&a, &b));

    let ma = a.rasterize(dims);
    let disc = Mask::from_fn(dims, |x, y| {
        let (dx, dy) = (x as i64 - 8, y as i64 - 6);
        dx * dx + dy * dy <= 16
    });
    println!("mask iou {:.4}", mask_iou(&ma, &disc)?);

    let rle = RleMask::encode(&disc);
    println!("rle {}", serde_json::to_string(&rle)?);
    assert_eq!(rle.decode()?, disc);

    let mut pgm = Vec::new();
    write_pgm(&disc, &mut pgm)?;
    assert_eq!(read_pgm(pgm.as_slice())?, disc);
    println!("pgm {} bytes, tight box {:?}", pgm.len(), disc.bounding_box().map(|b| b.coords()));
    Ok(())
}
