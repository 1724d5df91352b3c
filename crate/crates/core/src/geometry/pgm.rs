//! Binary PGM (P5, maxval 255) import/export. Export writes 0/255; import
//! treats any non-zero sample as set.

use std::io::{Read, Write};

use super::{ImageDims, Mask};
use crate::error::{Error, Result};

pub fn write_pgm<W: Write>(mask: &Mask, mut out: W) -> Result<()> {
    let d = mask.dims();
    write!(out, "P5\n{} {}\n255\n", d.width, d.height)?;
    let bytes: Vec<u8> = mask
        .to_bools()
        .into_iter()
        .map(|b| if b { 255 } else { 0 })
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut input: R) -> Result<Mask> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        loop {
            match buf.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::CorruptPgm("truncated header".into())),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::CorruptPgm(format!("magic {:?}, expected P5", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::CorruptPgm(format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::CorruptPgm(format!("maxval {maxval}, expected 255")));
    }
    let dims = ImageDims::new(w, h)?;
    let raster = buf
        .get(pos..pos + dims.pixel_count())
        .ok_or_else(|| Error::CorruptPgm("truncated raster".into()))?;
    let bits: Vec<bool> = raster.iter().map(|&v| v != 0).collect();
    Mask::from_bools(dims, &bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_header() {
        let d = ImageDims::new(5, 3).unwrap();
        let m = Mask::from_fn(d, |x, y| (x + y) % 2 == 0);
        let mut bytes = Vec::new();
        write_pgm(&m, &mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 15);
        assert_eq!(read_pgm(&bytes[..]).unwrap(), m);
    }

    #[test]
    fn comments_and_errors() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend([0u8, 7]);
        let m = read_pgm(&data[..]).unwrap();
        assert!(!m.get(0, 0) && m.get(1, 0));
        assert!(read_pgm(&b"P2\n1 1\n255\n\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n1 1\n1\n\0"[..]).is_err());
    }
}
