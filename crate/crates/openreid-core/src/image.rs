//! 8-bit grayscale face chips: contrast normalization, resizing, cropping,
//! and binary PGM round-tripping for fixtures.

use std::io::{BufRead, Write};

use thiserror::Error;

/// Side length faces are resized to before cropping.
pub const RESIZE_SIDE: u32 = 256;
/// Side length of the crop windows handed to the embedder.
pub const CROP_SIDE: u32 = 224;
/// Offset of the central crop window inside the resized face.
pub const CENTRAL_OFFSET: (u32, u32) = (16, 16);
/// Corner and center offsets of the five-crop layout, in emission order.
pub const FIVE_OFFSETS: [(u32, u32); 5] = [(0, 0), (32, 0), (0, 32), (32, 32), (16, 16)];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer holds {actual} bytes, {expected} expected for {w}x{h}")]
    PixelCount {
        expected: usize,
        actual: usize,
        w: u32,
        h: u32,
    },
    #[error("source is {w}x{h}, at least {min_w}x{min_h} required")]
    SourceTooSmall {
        w: u32,
        h: u32,
        min_w: u32,
        min_h: u32,
    },
    #[error("image is {w}x{h}, exactly {expected_w}x{expected_h} required")]
    WrongSize {
        expected_w: u32,
        expected_h: u32,
        w: u32,
        h: u32,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount {
                expected,
                actual: pixels.len(),
                w: width,
                h: height,
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: u32, height: u32, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Histogram equalization over the full intensity range.
///
/// Intensity v maps to round((cdf(v) - cdf_min) / (N - cdf_min) * 255) where
/// cdf_min is the cdf at the lowest occupied intensity. An image with a single
/// intensity is returned unchanged; the mapping is undefined there.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let n = img.pixels.len() as u64;
    if n == 0 {
        return img.clone();
    }
    let mut hist = [0u64; 256];
    for &p in &img.pixels {
        hist[p as usize] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut run = 0u64;
    for (c, &h) in cdf.iter_mut().zip(hist.iter()) {
        run += h;
        *c = run;
    }
    let cdf_min = cdf
        .iter()
        .copied()
        .find(|&c| c > 0)
        .expect("non-empty image has an occupied bin");
    if cdf_min == n {
        // Single occupied intensity: denominator would be zero.
        return img.clone();
    }
    let denom = (n - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(cdf_min) as f64;
        *slot = (num / denom * 255.0).round() as u8;
    }
    let pixels = img.pixels.iter().map(|&p| lut[p as usize]).collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Corner-aligned bilinear resize.
///
/// Output pixel (x, y) samples the source at x * (sw-1) / (ow-1); source
/// corners map exactly onto output corners, and resizing to the source size
/// is the identity.
pub fn resize_bilinear(img: &GrayImage, out_w: u32, out_h: u32) -> Result<GrayImage, ImageError> {
    if img.width < 2 || img.height < 2 {
        return Err(ImageError::SourceTooSmall {
            w: img.width,
            h: img.height,
            min_w: 2,
            min_h: 2,
        });
    }
    debug_assert!(out_w >= 1 && out_h >= 1);
    let sx_scale = if out_w > 1 {
        (img.width - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let sy_scale = if out_h > 1 {
        (img.height - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let mut pixels = Vec::with_capacity(out_w as usize * out_h as usize);
    for y in 0..out_h {
        let sy = y as f64 * sy_scale;
        let y0 = sy.floor() as u32;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = x as f64 * sx_scale;
            let x0 = sx.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let top = f64::from(img.get(x0, y0)) * (1.0 - fx) + f64::from(img.get(x1, y0)) * fx;
            let bottom = f64::from(img.get(x0, y1)) * (1.0 - fx) + f64::from(img.get(x1, y1)) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(GrayImage {
        width: out_w,
        height: out_h,
        pixels,
    })
}

fn crop_window(img: &GrayImage, ox: u32, oy: u32, side: u32) -> GrayImage {
    let mut pixels = Vec::with_capacity(side as usize * side as usize);
    for y in 0..side {
        let row = (oy + y) as usize * img.width as usize + ox as usize;
        pixels.extend_from_slice(&img.pixels[row..row + side as usize]);
    }
    GrayImage {
        width: side,
        height: side,
        pixels,
    }
}

fn require_resized(img: &GrayImage) -> Result<(), ImageError> {
    if img.width != RESIZE_SIDE || img.height != RESIZE_SIDE {
        return Err(ImageError::WrongSize {
            expected_w: RESIZE_SIDE,
            expected_h: RESIZE_SIDE,
            w: img.width,
            h: img.height,
        });
    }
    Ok(())
}

/// Center 224x224 window of a resized 256x256 face.
pub fn crop_central(img: &GrayImage) -> Result<GrayImage, ImageError> {
    require_resized(img)?;
    Ok(crop_window(img, CENTRAL_OFFSET.0, CENTRAL_OFFSET.1, CROP_SIDE))
}

/// Four corner windows plus the central one, in `FIVE_OFFSETS` order.
pub fn crop_five(img: &GrayImage) -> Result<[GrayImage; 5], ImageError> {
    require_resized(img)?;
    Ok(FIVE_OFFSETS.map(|(ox, oy)| crop_window(img, ox, oy, CROP_SIDE)))
}

/// Writes binary PGM (P5), maxval 255.
pub fn write_pgm<W: Write>(img: &GrayImage, mut w: W) -> Result<(), ImageError> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.pixels)?;
    Ok(())
}

/// Reads binary PGM (P5), maxval 255. `#` comments in the header are skipped.
pub fn read_pgm<R: BufRead>(mut r: R) -> Result<GrayImage, ImageError> {
    fn next_token<R: BufRead>(r: &mut R) -> Result<String, ImageError> {
        let mut tok = String::new();
        let mut in_comment = false;
        loop {
            let mut byte = [0u8; 1];
            match r.read(&mut byte)? {
                0 => {
                    if tok.is_empty() {
                        return Err(ImageError::Pgm("unexpected end of header".into()));
                    }
                    return Ok(tok);
                }
                _ => {
                    let c = byte[0] as char;
                    if in_comment {
                        if c == '\n' {
                            in_comment = false;
                        }
                    } else if c == '#' {
                        in_comment = true;
                    } else if c.is_ascii_whitespace() {
                        if !tok.is_empty() {
                            return Ok(tok);
                        }
                    } else {
                        tok.push(c);
                    }
                }
            }
        }
    }

    let magic = next_token(&mut r)?;
    if magic != "P5" {
        return Err(ImageError::Pgm(format!("unsupported magic {magic:?}")));
    }
    let parse = |s: String| -> Result<u32, ImageError> {
        s.parse()
            .map_err(|_| ImageError::Pgm(format!("bad header token {s:?}")))
    };
    let width = parse(next_token(&mut r)?)?;
    let height = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval != 255 {
        return Err(ImageError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width as usize * height as usize];
    r.read_exact(&mut pixels)
        .map_err(|_| ImageError::Pgm("truncated pixel data".into()))?;
    GrayImage::new(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equalize_spreads_low_contrast_block() {
        let img = GrayImage::new(2, 2, vec![10, 10, 10, 200]).unwrap();
        let out = histogram_equalize(&img);
        assert_eq!(out.pixels(), &[0, 0, 0, 255]);
    }

    #[test]
    fn equalize_keeps_binary_extremes() {
        let img = GrayImage::new(2, 2, vec![0, 0, 255, 255]).unwrap();
        let out = histogram_equalize(&img);
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn equalize_leaves_constant_image_alone() {
        let img = GrayImage::constant(4, 4, 77);
        assert_eq!(histogram_equalize(&img), img);
    }

    #[test]
    fn equalize_is_monotone_and_tops_out() {
        let pixels: Vec<u8> = (0..64).map(|i| (i * 3 + 11) as u8).collect();
        let img = GrayImage::new(8, 8, pixels).unwrap();
        let out = histogram_equalize(&img);
        let mut pairs: Vec<(u8, u8)> = img
            .pixels()
            .iter()
            .copied()
            .zip(out.pixels().iter().copied())
            .collect();
        pairs.sort();
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1, "mapping must preserve intensity order");
        }
        let max_in = *img.pixels().iter().max().unwrap();
        let mapped = pairs.iter().find(|p| p.0 == max_in).unwrap().1;
        assert_eq!(mapped, 255);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let pixels: Vec<u8> = (0..256u32 * 256).map(|i| (i % 251) as u8).collect();
        let img = GrayImage::new(256, 256, pixels).unwrap();
        let out = resize_bilinear(&img, 256, 256).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::constant(2, 2, 123);
        let out = resize_bilinear(&img, 256, 256).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 123));
    }

    #[test]
    fn resize_halving_preserves_checkerboard_mean() {
        let pixels: Vec<u8> = (0..512u32 * 512)
            .map(|i| {
                let x = i % 512;
                let y = i / 512;
                if (x + y) % 2 == 0 {
                    0
                } else {
                    255
                }
            })
            .collect();
        let img = GrayImage::new(512, 512, pixels).unwrap();
        let out = resize_bilinear(&img, 256, 256).unwrap();
        assert!((out.mean() - img.mean()).abs() <= 1.0);
    }

    #[test]
    fn resize_rejects_tiny_sources() {
        let img = GrayImage::constant(1, 8, 0);
        assert!(matches!(
            resize_bilinear(&img, 256, 256),
            Err(ImageError::SourceTooSmall { .. })
        ));
    }

    fn coordinate_image() -> GrayImage {
        // Pixel value encodes position so crop offsets are visible.
        let pixels: Vec<u8> = (0..256u32 * 256)
            .map(|i| {
                let x = i % 256;
                let y = i / 256;
                ((x * 7 + y * 13) % 256) as u8
            })
            .collect();
        GrayImage::new(256, 256, pixels).unwrap()
    }

    #[test]
    fn central_crop_takes_the_middle_window() {
        let img = coordinate_image();
        let crop = crop_central(&img).unwrap();
        assert_eq!(crop.width(), CROP_SIDE);
        assert_eq!(crop.get(0, 0), img.get(16, 16));
        assert_eq!(crop.get(223, 223), img.get(239, 239));
    }

    #[test]
    fn five_crop_matches_single_window_extraction() {
        let img = coordinate_image();
        let crops = crop_five(&img).unwrap();
        for (crop, (ox, oy)) in crops.iter().zip(FIVE_OFFSETS) {
            for &(x, y) in &[(0u32, 0u32), (100, 3), (223, 223)] {
                assert_eq!(crop.get(x, y), img.get(ox + x, oy + y));
            }
        }
        // Center crop of the five agrees with crop_central.
        assert_eq!(crops[4], crop_central(&img).unwrap());
    }

    #[test]
    fn crops_demand_resized_input() {
        let img = GrayImage::constant(255, 256, 0);
        assert!(matches!(crop_central(&img), Err(ImageError::WrongSize { .. })));
        assert!(matches!(crop_five(&img), Err(ImageError::WrongSize { .. })));
    }

    #[test]
    fn pgm_round_trip_is_exact() {
        let img = coordinate_image();
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        let back = read_pgm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_reader_skips_comments() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"P5\n# fixture\n2 1\n255\n");
        buf.extend_from_slice(&[7, 9]);
        let img = read_pgm(&buf[..]).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[7, 9]);
    }

    #[test]
    fn pgm_reader_rejects_truncation() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"P5\n4 4\n255\n");
        buf.extend_from_slice(&[0u8; 3]);
        assert!(read_pgm(&buf[..]).is_err());
    }
}
