//! Image interchange: 8-bit sRGB PNGs for display and PFM float images for
//! lossless linear data.
//!
//! PFM layout: `PF\n<width> <height>\n<scale>\n` followed by `width*height`
//! RGB triplets of binary32, rows running bottom to top. A negative scale
//! marks little-endian data (we always write `-1.0`); the magnitude is a
//! global multiplier applied on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::color::{encode_255, srgb_decode, Rgb};
use crate::transport::Image;

use super::IoError;

fn quantize(v: f64) -> u8 {
    encode_255(v).round() as u8
}

pub fn write_image_png(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    if !img.is_finite() {
        return Err(IoError::NonFiniteImage);
    }
    let mut out = image::RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            out.put_pixel(x, y, image::Rgb([quantize(p.r), quantize(p.g), quantize(p.b)]));
        }
    }
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::Png(e.to_string()))
}

pub fn read_image_png(path: impl AsRef<Path>) -> Result<Image, IoError> {
    let decoded = image::open(path)
        .map_err(|e| IoError::Png(e.to_string()))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let mut img = Image::new(w, h, 1);
    for (x, y, p) in decoded.enumerate_pixels() {
        img.set_pixel(
            x,
            y,
            Rgb {
                r: srgb_decode(p[0] as f64 / 255.0),
                g: srgb_decode(p[1] as f64 / 255.0),
                b: srgb_decode(p[2] as f64 / 255.0),
            },
        );
    }
    Ok(img)
}

pub fn write_image_pfm_to(w: &mut impl Write, img: &Image) -> Result<(), IoError> {
    if !img.is_finite() {
        return Err(IoError::NonFiniteImage);
    }
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.width as usize * 12);
    for y in (0..img.height).rev() {
        buf.clear();
        for x in 0..img.width {
            let p = img.pixel(x, y);
            for c in [p.r, p.g, p.b] {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_image_pfm(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_image_pfm_to(&mut w, img)?;
    w.flush()?;
    Ok(())
}

fn read_byte(r: &mut impl Read) -> Result<Option<u8>, IoError> {
    let mut b = [0u8; 1];
    loop {
        match r.read(&mut b) {
            Ok(0) => return Ok(None),
            Ok(_) => return Ok(Some(b[0])),
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(IoError::Io(e)),
        }
    }
}

/// Next whitespace-delimited header token; consumes exactly one trailing
/// whitespace byte, after which binary data may begin.
fn read_token(r: &mut impl Read) -> Result<String, IoError> {
    let mut tok = Vec::new();
    loop {
        match read_byte(r)? {
            None => {
                if tok.is_empty() {
                    return Err(IoError::Pfm("truncated header".into()));
                }
                break;
            }
            Some(b) if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            Some(b) => tok.push(b),
        }
    }
    String::from_utf8(tok).map_err(|_| IoError::Pfm("non-ASCII header token".into()))
}

pub fn read_image_pfm_from(r: &mut impl Read) -> Result<Image, IoError> {
    let mut magic = [0u8; 2];
    for b in &mut magic {
        *b = read_byte(r)?.ok_or_else(|| IoError::Pfm("truncated header".into()))?;
    }
    match &magic {
        b"PF" => {}
        b"Pf" => return Err(IoError::Pfm("grayscale PFM is not supported".into())),
        _ => return Err(IoError::Pfm("not a PFM stream".into())),
    }
    let width: u32 = read_token(r)?
        .parse()
        .map_err(|_| IoError::Pfm("bad width".into()))?;
    let height: u32 = read_token(r)?
        .parse()
        .map_err(|_| IoError::Pfm("bad height".into()))?;
    let scale: f64 = read_token(r)?
        .parse()
        .map_err(|_| IoError::Pfm("bad scale".into()))?;
    if width == 0 || height == 0 {
        return Err(IoError::Pfm(format!("zero image size {width}x{height}")));
    }
    if !scale.is_finite() || scale == 0.0 {
        return Err(IoError::Pfm(format!("bad scale {scale}")));
    }
    let little_endian = scale < 0.0;
    let factor = scale.abs();

    let count = (width as u64 * height as u64)
        .checked_mul(12)
        .map(|bytes| bytes / 4)
        .ok_or_else(|| IoError::Pfm(format!("image {width}x{height} is too large")))?;
    let mut values: Vec<f64> = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut remaining = count * 4;
    let mut buf = [0u8; 65536];
    while remaining > 0 {
        let take = remaining.min(buf.len() as u64) as usize;
        let mut got = 0;
        while got < take {
            match r.read(&mut buf[got..take]) {
                Ok(0) => break,
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(IoError::Io(e)),
            }
        }
        for b in buf[..got].chunks_exact(4) {
            let quad = [b[0], b[1], b[2], b[3]];
            let v = if little_endian {
                f32::from_le_bytes(quad)
            } else {
                f32::from_be_bytes(quad)
            };
            values.push(v as f64);
        }
        if got < take {
            return Err(IoError::Pfm(format!(
                "expected {count} samples, data ends after {}",
                values.len()
            )));
        }
        remaining -= take as u64;
    }
    if read_byte(r)?.is_some() {
        return Err(IoError::Pfm("trailing bytes after pixel data".into()));
    }

    let mut img = Image::new(width, height, 1);
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let i = ((row * width + x) * 3) as usize;
            let mut p = Rgb {
                r: values[i],
                g: values[i + 1],
                b: values[i + 2],
            };
            if factor != 1.0 {
                p = p * factor;
            }
            img.set_pixel(x, y, p);
        }
    }
    if !img.is_finite() {
        return Err(IoError::NonFiniteImage);
    }
    Ok(img)
}

pub fn read_image_pfm(path: impl AsRef<Path>) -> Result<Image, IoError> {
    read_image_pfm_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use std::io::Cursor;

    fn f32_uniform(rng: &mut Pcg32, lo: f64, hi: f64) -> f64 {
        ((lo + (hi - lo) * rng.uniform()) as f32) as f64
    }

    fn random_image(rng: &mut Pcg32) -> Image {
        let w = 1 + rng.next_u32() % 6;
        let h = 1 + rng.next_u32() % 6;
        let mut img = Image::new(w, h, 1 + rng.next_u32() % 64);
        for p in &mut img.pixels {
            *p = Rgb {
                r: f32_uniform(rng, -0.5, 4.0),
                g: f32_uniform(rng, -0.5, 4.0),
                b: f32_uniform(rng, -0.5, 4.0),
            };
        }
        img
    }

    fn pixel_bits(img: &Image) -> Vec<[u64; 3]> {
        img.pixels
            .iter()
            .map(|p| [p.r.to_bits(), p.g.to_bits(), p.b.to_bits()])
            .collect()
    }

    #[test]
    fn pfm_round_trips_bit_exact() {
        let mut rng = Pcg32::new(101, 0);
        for _ in 0..200 {
            let img = random_image(&mut rng);
            let mut buf = Vec::new();
            write_image_pfm_to(&mut buf, &img).unwrap();
            let back = read_image_pfm_from(&mut Cursor::new(&buf)).unwrap();
            assert_eq!(back.width, img.width);
            assert_eq!(back.height, img.height);
            assert_eq!(pixel_bits(&back), pixel_bits(&img));
        }
    }

    #[test]
    fn pfm_stores_rows_bottom_to_top() {
        let mut img = Image::new(2, 2, 1);
        img.set_pixel(0, 0, Rgb { r: 1.0, g: 0.0, b: 0.0 });
        img.set_pixel(1, 1, Rgb { r: 0.0, g: 0.0, b: 7.0 });
        let mut buf = Vec::new();
        write_image_pfm_to(&mut buf, &img).unwrap();
        let header_len = b"PF\n2 2\n-1.0\n".len();
        let first = f32::from_le_bytes(buf[header_len..header_len + 4].try_into().unwrap());
        // First stored pixel is (0, 1) — the bottom-left corner — whose red is 0.
        assert_eq!(first, 0.0);
        let blue_of_second =
            f32::from_le_bytes(buf[header_len + 20..header_len + 24].try_into().unwrap());
        assert_eq!(blue_of_second, 7.0);
    }

    #[test]
    fn pfm_reads_big_endian_data() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PF\n1 1\n1.0\n");
        for v in [0.25f32, 0.5, 2.0] {
            buf.extend_from_slice(&v.to_be_bytes());
        }
        let img = read_image_pfm_from(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(img.pixel(0, 0), Rgb { r: 0.25, g: 0.5, b: 2.0 });
    }

    #[test]
    fn pfm_applies_scale_magnitude() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PF\n1 1\n-2.0\n");
        for v in [0.25f32, 0.5, 2.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let img = read_image_pfm_from(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(img.pixel(0, 0), Rgb { r: 0.5, g: 1.0, b: 4.0 });
    }

    #[test]
    fn pfm_rejects_malformed_streams() {
        let cases: Vec<Vec<u8>> = vec![
            b"Pf\n1 1\n-1.0\n\0\0\0\0".to_vec(),
            b"P6\n1 1\n-1.0\n".to_vec(),
            b"PF\n0 1\n-1.0\n".to_vec(),
            b"PF\n1 1\n0.0\n".to_vec(),
            b"PF\nx 1\n-1.0\n".to_vec(),
            b"PF\n1 1\n-1.0\n\0\0\0".to_vec(),
            b"PF".to_vec(),
        ];
        for (i, c) in cases.iter().enumerate() {
            assert!(
                read_image_pfm_from(&mut Cursor::new(c)).is_err(),
                "case {i} should be rejected"
            );
        }
    }

    #[test]
    fn pfm_rejects_trailing_bytes() {
        let mut img = Image::new(1, 1, 1);
        img.set_pixel(0, 0, Rgb { r: 1.0, g: 1.0, b: 1.0 });
        let mut buf = Vec::new();
        write_image_pfm_to(&mut buf, &img).unwrap();
        buf.push(9);
        assert!(matches!(
            read_image_pfm_from(&mut Cursor::new(&buf)),
            Err(IoError::Pfm(_))
        ));
    }

    #[test]
    fn pfm_rejects_non_finite_samples() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PF\n1 1\n-1.0\n");
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            read_image_pfm_from(&mut Cursor::new(&buf)),
            Err(IoError::NonFiniteImage)
        ));
        let mut img = Image::new(1, 1, 1);
        img.set_pixel(0, 0, Rgb { r: f64::INFINITY, g: 0.0, b: 0.0 });
        let mut sink = Vec::new();
        assert!(matches!(
            write_image_pfm_to(&mut sink, &img),
            Err(IoError::NonFiniteImage)
        ));
    }

    #[test]
    fn png_round_trips_every_8bit_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("levels.png");
        let mut img = Image::new(16, 16, 1);
        for i in 0..256u32 {
            let v = srgb_decode(i as f64 / 255.0);
            img.pixels[i as usize] = Rgb { r: v, g: v, b: v };
        }
        write_image_png(&path, &img).unwrap();
        let back = read_image_png(&path).unwrap();
        assert_eq!(back.spp, 1);
        assert_eq!(pixel_bits(&back), pixel_bits(&img));
    }

    #[test]
    fn png_quantizes_out_of_range_values_to_the_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.png");
        let mut img = Image::new(2, 1, 1);
        img.set_pixel(0, 0, Rgb { r: -2.0, g: -0.1, b: 0.0 });
        img.set_pixel(1, 0, Rgb { r: 1.0, g: 1.5, b: 900.0 });
        write_image_png(&path, &img).unwrap();
        let back = read_image_png(&path).unwrap();
        assert_eq!(back.pixel(0, 0), Rgb { r: 0.0, g: 0.0, b: 0.0 });
        assert_eq!(back.pixel(1, 0), Rgb { r: 1.0, g: 1.0, b: 1.0 });
    }

    #[test]
    fn png_rejects_non_finite_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(1, 1, 1);
        img.set_pixel(0, 0, Rgb { r: f64::NAN, g: 0.0, b: 0.0 });
        assert!(matches!(
            write_image_png(dir.path().join("bad.png"), &img),
            Err(IoError::NonFiniteImage)
        ));
    }
}
