use alloc::format;
use alloc::vec::Vec;

use crate::tensor::{Result, Tensor, TensorError};

fn hwc(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(TensorError::Config(format!("expected an [h, w, c] image, got {:?}", img.shape()))),
    }
}

/// Source coordinate and blend weight for output index `o` under the
/// half-pixel convention, clamped to the input.
fn source(o: usize, out: usize, inp: usize) -> (usize, usize, f32) {
    let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
    let lo = s as usize;
    let hi = (lo + 1).min(inp - 1);
    (lo, hi, (s - lo as f64) as f32)
}

/// Bilinear resize to `[out_h, out_w, c]`. Pixel centres sit at `i + 0.5`,
/// so an unchanged size is an exact copy.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidShape(alloc::vec![out_h, out_w, c]));
    }
    let src = img.data();
    let cols: Vec<_> = (0..out_w).map(|x| source(x, out_w, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = source(y, out_h, h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = if fx == 0.0 { at(y0, x0) } else { at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx };
                let v = if fy == 0.0 {
                    top
                } else {
                    let bottom = if fx == 0.0 { at(y1, x0) } else { at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx };
                    top * (1.0 - fy) + bottom * fy
                };
                out.push(v);
            }
        }
    }
    Tensor::from_vec(&[out_h, out_w, c], out)
}

/// Resizes to `size x size`, replicates grayscale to three channels and
/// clamps to `[0, 1]`.
pub fn preprocess(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(img)?;
    if h < 8 || w < 8 {
        return Err(TensorError::Config(format!("image {h}x{w} is smaller than 8x8")));
    }
    if c != 1 && c != 3 {
        return Err(TensorError::Config(format!("expected 1 or 3 channels, got {c}")));
    }
    let resized = resize_bilinear(img, size, size)?;
    let data: Vec<f32> = if c == 1 {
        resized.data().iter().flat_map(|&v| [v.clamp(0.0, 1.0); 3]).collect()
    } else {
        resized.data().iter().map(|v| v.clamp(0.0, 1.0)).collect()
    };
    Tensor::from_vec(&[size, size, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor<f32> {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::from_vec(&[h, w, 1], data).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let a = img(9, 11, |y, x| (y * 11 + x) as f32 / 99.0);
        assert_eq!(resize_bilinear(&a, 9, 11).unwrap(), a);
    }

    #[test]
    fn checkerboard_halves_to_gray() {
        let a = img(8, 8, |y, x| ((x + y) % 2) as f32);
        let r = resize_bilinear(&a, 4, 4).unwrap();
        // Every output centre falls midway between four input pixels, two
        // of each colour.
        for &(y, x) in &[(0, 0), (1, 2), (3, 3), (2, 1)] {
            assert_eq!(r.data()[y * 4 + x], 0.5);
        }
    }

    #[test]
    fn upscale_matches_hand_weights() {
        let a = Tensor::from_vec(&[2, 2, 1], alloc::vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resize_bilinear(&a, 4, 4).unwrap();
        // Output x = 1 maps to source 0.25, output y = 2 to 0.75.
        let expect = (1.0 - 0.75) * (0.75 * 0.0 + 0.25 * 1.0) + 0.75 * (0.75 * 2.0 + 0.25 * 3.0);
        assert!((r.data()[2 * 4 + 1] - expect).abs() < 1e-6);
        assert_eq!(r.data()[0], 0.0);
        assert_eq!(r.data()[15], 3.0);
    }

    #[test]
    fn preprocess_shape_and_range() {
        let a = img(40, 30, |y, x| if (x + y) % 3 == 0 { 1.2 } else { -0.1 });
        let p = preprocess(&a, 32).unwrap();
        assert_eq!(p.shape(), &[32, 32, 3]);
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let flat = preprocess(&img(16, 16, |_, _| 0.3), 32).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.3));
        assert!(preprocess(&img(4, 16, |_, _| 0.0), 32).is_err());
    }
}
