use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar type the kernels, collectives and file formats are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumCast + AddAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Bit-level equality, used for replica consistency checks.
    fn bit_eq(self, other: Self) -> bool;

    fn from_f64_lossy(value: f64) -> Self {
        <Self as NumCast>::from(value).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn bit_eq(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
}

impl Scalar for f64 {
    fn bit_eq(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
}
