//! Dense tensors, the scalar abstraction shared by float32 training and
//! float64 gradient checking, and the seeded random source.

mod rng;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub use rng::RngState;
pub use tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Tensor};

/// Engine-wide float width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatMode {
    F32,
    F64,
}

impl FloatMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FloatMode::F32 => "f32",
            FloatMode::F64 => "f64",
        }
    }
}

/// Scalar type the whole engine is generic over.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const MODE: FloatMode;
    const BYTES: usize;

    /// Maps 64 random bits onto `[0, 1)` using as many bits as the mantissa holds,
    /// so the cast can never round up to 1.
    fn unit_from_bits(bits: u64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes.len()` must equal `Self::BYTES`.
    fn read_le(bytes: &[u8]) -> Self;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const MODE: FloatMode = FloatMode::F32;
    const BYTES: usize = 4;

    fn unit_from_bits(bits: u64) -> Self {
        (bits >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const MODE: FloatMode = FloatMode::F64;
    const BYTES: usize = 8;

    fn unit_from_bits(bits: u64) -> Self {
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Formats a float with 9 significant digits, the precision used in every CSV
/// the engine writes.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.8e}")
}
