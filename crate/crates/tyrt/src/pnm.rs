//! Binary PNM readers and writers: PGM (P5) for single-channel Bayer frames,
//! PPM (P6) for RGB. Maxval must be 255; comments are tolerated anywhere in
//! the header.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use tyrt_core::image::{BayerFrame, BayerPattern, RgbImage};

#[derive(Debug)]
pub enum PnmError {
    Io(io::Error),
    BadHeader(&'static str),
    BadDimensions { width: usize, height: usize },
}

impl From<io::Error> for PnmError {
    fn from(e: io::Error) -> Self {
        PnmError::Io(e)
    }
}

impl fmt::Display for PnmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnmError::Io(e) => write!(f, "io error: {e}"),
            PnmError::BadHeader(what) => write!(f, "bad pnm header: {what}"),
            PnmError::BadDimensions { width, height } => {
                write!(f, "unusable image dimensions {width}x{height}")
            }
        }
    }
}

impl std::error::Error for PnmError {}

/// Read one whitespace-delimited header token, skipping `#` comments.
fn token(r: &mut impl Read) -> Result<String, PnmError> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            if tok.is_empty() {
                return Err(PnmError::BadHeader("truncated header"));
            }
            return Ok(tok);
        }
        let c = b[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

fn dim(r: &mut impl Read) -> Result<usize, PnmError> {
    let t = token(r)?;
    let v: usize = t.parse().map_err(|_| PnmError::BadHeader("non-numeric dimension"))?;
    if v == 0 || v > 1 << 16 {
        return Err(PnmError::BadHeader("dimension out of range"));
    }
    Ok(v)
}

fn header(r: &mut impl Read, magic: &str) -> Result<(usize, usize), PnmError> {
    if token(r)? != magic {
        return Err(PnmError::BadHeader("wrong magic"));
    }
    let width = dim(r)?;
    let height = dim(r)?;
    if token(r)? != "255" {
        return Err(PnmError::BadHeader("maxval must be 255"));
    }
    Ok((width, height))
}

pub fn read_pgm(r: &mut impl Read, pattern: BayerPattern) -> Result<BayerFrame, PnmError> {
    let (width, height) = header(r, "P5")?;
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)?;
    BayerFrame::new(width, height, pattern, data)
        .map_err(|_| PnmError::BadDimensions { width, height })
}

pub fn write_pgm(w: &mut impl Write, f: &BayerFrame) -> Result<(), PnmError> {
    write!(w, "P5\n{} {}\n255\n", f.width, f.height)?;
    w.write_all(&f.data)?;
    Ok(())
}

pub fn read_ppm(r: &mut impl Read) -> Result<RgbImage, PnmError> {
    let (width, height) = header(r, "P6")?;
    let mut data = vec![0u8; width * height * 3];
    r.read_exact(&mut data)?;
    RgbImage::new(width, height, data).map_err(|_| PnmError::BadDimensions { width, height })
}

pub fn write_ppm(w: &mut impl Write, img: &RgbImage) -> Result<(), PnmError> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn load_pgm(path: &Path, pattern: BayerPattern) -> Result<BayerFrame, PnmError> {
    read_pgm(&mut BufReader::new(File::open(path)?), pattern)
}

pub fn save_pgm(path: &Path, f: &BayerFrame) -> Result<(), PnmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<RgbImage, PnmError> {
    read_ppm(&mut BufReader::new(File::open(path)?))
}

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<(), PnmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tyrt_core::image::SyntheticScene;

    fn scene_frame() -> BayerFrame {
        SyntheticScene { width: 32, height: 24, pattern: BayerPattern::Rggb, seed: 3 }
            .bayer_frame(0)
    }

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let f = scene_frame();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &f).unwrap();
        let back = read_pgm(&mut buf.as_slice(), BayerPattern::Rggb).unwrap();
        assert_eq!(back.width, f.width);
        assert_eq!(back.height, f.height);
        assert_eq!(back.data, f.data);
    }

    #[test]
    fn ppm_round_trip_is_bit_exact() {
        let (img, _) = SyntheticScene { width: 32, height: 24, pattern: BayerPattern::Rggb, seed: 3 }
            .rgb_frame(1);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        let back = read_ppm(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn header_comments_are_skipped() {
        let src = b"P5 # comment right here\n# and a full line\n4 2\n255\nabcdefgh";
        let f = read_pgm(&mut src.as_slice(), BayerPattern::Rggb).unwrap();
        assert_eq!((f.width, f.height), (4, 2));
        assert_eq!(f.data, b"abcdefgh");
    }

    #[test]
    fn wrong_magic_and_maxval_rejected() {
        assert!(read_pgm(&mut b"P6\n4 2\n255\nxxxxxxxx".as_slice(), BayerPattern::Rggb).is_err());
        assert!(read_pgm(&mut b"P5\n4 2\n65535\n".as_slice(), BayerPattern::Rggb).is_err());
        assert!(read_ppm(&mut b"P5\n4 2\n255\n".as_slice()).is_err());
    }

    #[test]
    fn truncated_pixels_rejected() {
        assert!(read_pgm(&mut b"P5\n4 2\n255\nabc".as_slice(), BayerPattern::Rggb).is_err());
    }

    #[test]
    fn odd_bayer_dimensions_rejected() {
        let src = b"P5\n3 2\n255\nabcdef";
        assert!(matches!(
            read_pgm(&mut src.as_slice(), BayerPattern::Rggb),
            Err(PnmError::BadDimensions { .. })
        ));
    }
}
