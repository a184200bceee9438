//! Binary PPM (P6) / PGM (P5) images and bilinear resampling.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    /// `[3,H,W]` with values `v / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::of(px[c] as f64 / 255.0);
            }
        }
        Tensor::new(out, &[3, self.height, self.width]).expect("consistent image buffer")
    }
}

impl GrayImage {
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }

    /// Binary mask: 1 where the value is at least `level`.
    pub fn binarize(&self, level: u8) -> Vec<f64> {
        self.data.iter().map(|&v| if v >= level { 1.0 } else { 0.0 }).collect()
    }

    /// Quantizes values in `[0,1]` as `round(255 v)`.
    pub fn from_unit(values: &[f64], width: usize, height: usize) -> Self {
        assert_eq!(values.len(), width * height);
        let data = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Self { width, height, data }
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), reason: reason.into() }
}

/// Parses a binary netpbm header with magic `magic`; returns (width, height, payload).
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(path, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "malformed header"))?;
    }
    if fields[2] != 255 {
        return Err(bad(path, format!("unsupported maxval {}", fields[2])));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad(path, "malformed header"));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    let (width, height, payload) = parse_netpbm(&bytes, b"P6", path)?;
    let n = width * height * 3;
    if payload.len() < n || width == 0 || height == 0 {
        return Err(bad(path, "truncated pixel data"));
    }
    Ok(RgbImage { width, height, data: payload[..n].to_vec() })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    let (width, height, payload) = parse_netpbm(&bytes, b"P5", path)?;
    let n = width * height;
    if payload.len() < n || width == 0 || height == 0 {
        return Err(bad(path, "truncated pixel data"));
    }
    Ok(GrayImage { width, height, data: payload[..n].to_vec() })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    fs::write(path, out)?;
    Ok(())
}

/// Bilinear resampling of one row-major plane, half-pixel centres
/// (`align_corners = false`), edges clamped.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, new_w: usize, new_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), w * h);
    if w == new_w && h == new_h {
        return src.to_vec();
    }
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (x.floor() as usize).min(n_src - 1);
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, new_w);
    let ys = axis(h, new_h);
    let mut out = Vec::with_capacity(new_w * new_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resizes each channel of interleaved RGB and requantizes.
pub fn resize_rgb(img: &RgbImage, new_w: usize, new_h: usize) -> RgbImage {
    if img.width == new_w && img.height == new_h {
        return img.clone();
    }
    let mut data = vec![0u8; new_w * new_h * 3];
    for c in 0..3 {
        let plane: Vec<f64> = img.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        for (i, v) in resize_bilinear(&plane, img.width, img.height, new_w, new_h).into_iter().enumerate() {
            data[i * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    RgbImage { width: new_w, height: new_h, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn netpbm_round_trip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RgbImage { width: 3, height: 2, data: (0..18).map(|i| i * 14).collect() };
        let p = dir.path().join("a.ppm");
        write_ppm(&p, &rgb).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), rgb);
        let q = dir.path().join("b.pgm");
        fs::write(&q, b"P5\n# made by hand\n2 2\n255\n\x00\xff\x80\x01").unwrap();
        let g = read_pgm(&q).unwrap();
        assert_eq!(g.data, vec![0, 255, 128, 1]);
        assert_eq!(g.binarize(128), vec![0.0, 1.0, 1.0, 0.0]);
        assert!(read_ppm(&q).is_err());
        fs::write(&q, b"P5\n2 2\n255\n\x00").unwrap();
        assert!(read_pgm(&q).is_err());
    }

    #[test]
    fn tensor_layout_is_planar() {
        let rgb = RgbImage { width: 2, height: 1, data: vec![255, 0, 0, 0, 0, 255] };
        assert_eq!(rgb.to_tensor::<f32>().to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn bilinear_half_pixel_convention() {
        // 2 -> 4 upsampling of [0, 1]: centres at -0.25, 0.25, 0.75, 1.25
        let up = resize_bilinear(&[0.0, 1.0], 2, 1, 4, 1);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
        let down = resize_bilinear(&[0.0, 1.0, 2.0, 3.0], 4, 1, 2, 1);
        assert_eq!(down, vec![0.5, 2.5]);
        let c = resize_bilinear(&[0.7; 12], 4, 3, 7, 5);
        assert!(c.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn quantization_rounds() {
        let g = GrayImage::from_unit(&[0.0, 0.5, 1.0, 0.999], 2, 2);
        assert_eq!(g.data, vec![0, 128, 255, 255]);
    }
}
