use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type of the numeric core: `f64` for checking, `f32` for speed.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const MODE: NumericMode;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    fn to_le_f32(self) -> [u8; 4] {
        (self.f64() as f32).to_le_bytes()
    }

    /// `tanh` used by activations. Exact for `f64`; a rational
    /// approximation accurate to a few ulp for `f32`.
    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }
}

impl Real for f64 {
    const MODE: NumericMode = NumericMode::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const MODE: NumericMode = NumericMode::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn act_tanh(self) -> Self {
        tanh_f32(self)
    }
}

/// 13/6 rational approximation of `tanh` on `[-7.9, 7.9]`, saturating
/// outside.
#[inline]
pub fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = -2.760_768_5e-16_f32;
    p = p * x2 + 2.000_187_9e-13;
    p = p * x2 - 8.604_671_5e-11;
    p = p * x2 + 5.122_297e-8;
    p = p * x2 + 1.485_722_4e-5;
    p = p * x2 + 6.372_619_3e-4;
    p = p * x2 + 4.893_524_6e-3;
    let mut q = 1.198_258_4e-6_f32;
    q = q * x2 + 1.185_347_1e-4;
    q = q * x2 + 2.268_434_6e-3;
    q = q * x2 + 4.893_525e-3;
    x * p / q
}

/// Run-level numeric mode, recorded in every artifact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericMode {
    F64,
    F32,
}

impl std::str::FromStr for NumericMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f64" | "float64" => Ok(NumericMode::F64),
            "f32" | "float32" => Ok(NumericMode::F32),
            other => Err(format!("unknown numeric mode `{other}` (expected f64 or f32)")),
        }
    }
}

impl std::fmt::Display for NumericMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NumericMode::F64 => "f64",
            NumericMode::F32 => "f32",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_tracks_libm() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f32 * 1e-4;
            worst = worst.max((tanh_f32(x) as f64 - (x as f64).tanh()).abs());
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(tanh_f32(50.0), tanh_f32(7.905_311));
        assert!((tanh_f32(-50.0) + 1.0).abs() < 1e-6);
        assert_eq!(1.5f64.act_tanh(), 1.5f64.tanh());
    }
}
