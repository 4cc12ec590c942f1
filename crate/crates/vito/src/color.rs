//! RGB triples and the sRGB transfer curve. Radiance stays linear everywhere
//! inside the renderer; encoding happens only at image output and at the loss
//! and metric boundaries.

use std::ops::{Add, AddAssign, Div, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

pub const fn rgb(r: f64, g: f64, b: f64) -> Rgb {
    Rgb { r, g, b }
}

impl Rgb {
    pub const BLACK: Rgb = rgb(0.0, 0.0, 0.0);
    pub const WHITE: Rgb = rgb(1.0, 1.0, 1.0);

    pub const fn splat(v: f64) -> Rgb {
        rgb(v, v, v)
    }

    pub fn channel(self, c: usize) -> f64 {
        match c {
            0 => self.r,
            1 => self.g,
            2 => self.b,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn set_channel(&mut self, c: usize, v: f64) {
        match c {
            0 => self.r = v,
            1 => self.g = v,
            2 => self.b = v,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Rgb {
        rgb(f(self.r), f(self.g), f(self.b))
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn min_component(self) -> f64 {
        self.r.min(self.g).min(self.b)
    }

    pub fn mean(self) -> f64 {
        (self.r + self.g + self.b) / 3.0
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_array(a: [f64; 3]) -> Rgb {
        rgb(a[0], a[1], a[2])
    }
}

impl Add for Rgb {
    type Output = Rgb;
    fn add(self, o: Rgb) -> Rgb {
        rgb(self.r + o.r, self.g + o.g, self.b + o.b)
    }
}

impl AddAssign for Rgb {
    fn add_assign(&mut self, o: Rgb) {
        *self = *self + o;
    }
}

impl Sub for Rgb {
    type Output = Rgb;
    fn sub(self, o: Rgb) -> Rgb {
        rgb(self.r - o.r, self.g - o.g, self.b - o.b)
    }
}

impl Mul for Rgb {
    type Output = Rgb;
    fn mul(self, o: Rgb) -> Rgb {
        rgb(self.r * o.r, self.g * o.g, self.b * o.b)
    }
}

impl Mul<f64> for Rgb {
    type Output = Rgb;
    fn mul(self, s: f64) -> Rgb {
        rgb(self.r * s, self.g * s, self.b * s)
    }
}

impl Div<f64> for Rgb {
    type Output = Rgb;
    fn div(self, s: f64) -> Rgb {
        rgb(self.r / s, self.g / s, self.b / s)
    }
}

const SRGB_LINEAR_CUTOFF: f64 = 0.003_130_8;
const SRGB_ENCODED_CUTOFF: f64 = 0.040_45;

/// Linear -> sRGB transfer curve on the unit scale.
///
/// The power branch is applied for every input above the cutoff, so values
/// above 1.0 keep a smooth, monotone encoding instead of clipping; clamping
/// is left to the 8-bit output path. Negative inputs continue the linear
/// branch.
pub fn srgb_encode(x: f64) -> f64 {
    if x <= SRGB_LINEAR_CUTOFF {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// Derivative of `srgb_encode` (left-continuous at the branch cutoff).
pub fn srgb_encode_deriv(x: f64) -> f64 {
    if x <= SRGB_LINEAR_CUTOFF {
        12.92
    } else {
        (1.055 / 2.4) * x.powf(1.0 / 2.4 - 1.0)
    }
}

/// sRGB -> linear transfer curve on the unit scale.
pub fn srgb_decode(u: f64) -> f64 {
    if u <= SRGB_ENCODED_CUTOFF {
        u / 12.92
    } else {
        ((u + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear radiance to the clamped 8-bit display scale `[0, 255]`.
pub fn encode_255(x: f64) -> f64 {
    255.0 * srgb_encode(x.clamp(0.0, 1.0))
}
