use alloc::format;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::tensor::{Result, Tensor, TensorError};

/// Random affine augmentation. Angles are in degrees, shifts are fractions
/// of the image extent, `zoom` is a range of scale factors (above 1
/// magnifies).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AugmentConfig {
    pub horizontal_flip: f64,
    pub rotation: f64,
    pub zoom: (f64, f64),
    pub width_shift: f64,
    pub height_shift: f64,
    pub shear: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { horizontal_flip: 0.5, rotation: 10.0, zoom: (0.9, 1.1), width_shift: 0.1, height_shift: 0.1, shear: 10.0 }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig { horizontal_flip: 0.0, rotation: 0.0, zoom: (1.0, 1.0), width_shift: 0.0, height_shift: 0.0, shear: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.horizontal_flip)
            && (0.0..=180.0).contains(&self.rotation)
            && 0.0 < self.zoom.0
            && self.zoom.0 <= self.zoom.1
            && self.zoom.1 <= 4.0
            && (0.0..=1.0).contains(&self.width_shift)
            && (0.0..=1.0).contains(&self.height_shift)
            && (0.0..80.0).contains(&self.shear);
        if !ok {
            return Err(TensorError::Config(format!("augmentation magnitudes out of range: {self:?}")));
        }
        Ok(())
    }

    /// Draws one transform. All six parameters are always drawn, in a fixed
    /// order, so the generator advances identically whatever the config.
    pub fn sample(&self, rng: &mut Rng) -> AffineParams {
        let flip = rng::uniform(rng) < self.horizontal_flip;
        let rotation = rng::uniform_in(rng, -self.rotation, self.rotation);
        let zoom = rng::uniform_in(rng, self.zoom.0, self.zoom.1);
        let shift_x = rng::uniform_in(rng, -self.width_shift, self.width_shift);
        let shift_y = rng::uniform_in(rng, -self.height_shift, self.height_shift);
        let shear = rng::uniform_in(rng, -self.shear, self.shear);
        AffineParams { flip, rotation, zoom, shift_x, shift_y, shear }
    }
}

/// One concrete transform: mirror, then shear, zoom and rotation about the
/// image centre, then translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub flip: bool,
    /// Degrees, counter-clockwise as displayed.
    pub rotation: f64,
    pub zoom: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    /// Degrees.
    pub shear: f64,
}

fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

impl AffineParams {
    /// Resamples `img` (`[h, w, c]`) with bilinear interpolation, replicating
    /// edge pixels for coordinates that fall outside.
    pub fn apply(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [h, w, c] = *img.shape() else {
            return Err(TensorError::Config(format!("expected an [h, w, c] image, got {:?}", img.shape())));
        };
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (tx, ty) = (self.shift_x * w as f64, self.shift_y * h as f64);
        // Forward map in (x right, y down): out = c + R S Z (in - c) + t.
        let th = self.rotation.to_radians();
        let (s, co) = (libm::sin(th), libm::cos(th));
        let k = libm::tan(self.shear.to_radians());
        let z = self.zoom;
        // R = [[cos, sin], [-sin, cos]] turns counter-clockwise on screen.
        let a = [[co * z, (co * k + s) * z], [-s * z, (-s * k + co) * z]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let src = img.data();
        let mut out = Vec::with_capacity(img.len());
        for y in 0..h {
            for x in 0..w {
                let (ux, uy) = (x as f64 - cx - tx, y as f64 - cy - ty);
                let mut sx = snap(cx + inv[0][0] * ux + inv[0][1] * uy);
                let sy = snap(cy + inv[1][0] * ux + inv[1][1] * uy);
                if self.flip {
                    sx = (w - 1) as f64 - sx;
                }
                let sx = sx.clamp(0.0, (w - 1) as f64);
                let sy = sy.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx as usize, sy as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
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
        Tensor::from_vec(img.shape(), out)
    }
}

/// Samples a transform from `cfg` and applies it.
pub fn augment(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor<f32>> {
    cfg.validate()?;
    cfg.sample(rng).apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> Tensor<f32> {
        Tensor::from_vec(&[3, 3, 1], (1..=9).map(|v| v as f32).collect()).unwrap()
    }

    fn fixed(flip: bool, rotation: f64) -> AffineParams {
        AffineParams { flip, rotation, zoom: 1.0, shift_x: 0.0, shift_y: 0.0, shear: 0.0 }
    }

    #[test]
    fn identity_config_is_bit_exact() {
        let img = Tensor::from_vec(&[5, 4, 2], (0..40).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
        let mut rng = rng::seeded(1);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng).unwrap(), img);
        }
    }

    #[test]
    fn flip_mirrors_and_is_an_involution() {
        let img = probe();
        let once = fixed(true, 0.0).apply(&img).unwrap();
        assert_eq!(once.data(), &[3., 2., 1., 6., 5., 4., 9., 8., 7.]);
        assert_eq!(fixed(true, 0.0).apply(&once).unwrap(), img);
    }

    #[test]
    fn quarter_turn_permutes_exactly() {
        let img = probe();
        let r = fixed(false, 90.0).apply(&img).unwrap();
        // Counter-clockwise: the right column becomes the top row.
        let hand: Vec<f32> = (0..3).flat_map(|r| (0..3).map(move |c| (c * 3 + (2 - r) + 1) as f32)).collect();
        assert_eq!(r.data(), hand.as_slice());
        assert_eq!(r.data(), &[3., 6., 9., 2., 5., 8., 1., 4., 7.]);
    }

    #[test]
    fn shifts_replicate_edges() {
        let img = probe();
        let p = AffineParams { shift_x: 1.0 / 3.0, ..fixed(false, 0.0) };
        let r = p.apply(&img).unwrap();
        assert_eq!(r.data(), &[1., 1., 2., 4., 4., 5., 7., 7., 8.]);
    }

    #[test]
    fn sampling_stays_in_bounds() {
        let cfg = AugmentConfig::default();
        let mut rng = rng::seeded(9);
        for _ in 0..200 {
            let p = cfg.sample(&mut rng);
            assert!(p.rotation.abs() <= 10.0 && (0.9..=1.1).contains(&p.zoom));
            assert!(p.shift_x.abs() <= 0.1 && p.shift_y.abs() <= 0.1 && p.shear.abs() <= 10.0);
        }
        assert!(AugmentConfig { horizontal_flip: 1.5, ..cfg }.validate().is_err());
    }
}
