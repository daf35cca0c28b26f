//! Floating point element type shared by every network, loss and metric.
//!
//! Training runs in `f32` (checkpoints store 32-bit floats); gradient checks run
//! the same code in `f64`.

use core::fmt::Debug;
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// Bit pattern widened to 64 bits, used for checksums.
    fn to_bits_u64(self) -> u64;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }

    #[inline]
    fn of_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Real for f32 {
    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Real for f64 {
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes
/// without reassociating a single running sum.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] = acc[j] + xa[j] * xb[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// FNV-1a over the bit patterns of a slice; used to check freeze discipline.
pub fn checksum<T: Real>(values: &[T], mut state: u64) -> u64 {
    for v in values {
        for byte in v.to_bits_u64().to_le_bytes() {
            state ^= u64::from(byte);
            state = state.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    state
}

pub const CHECKSUM_SEED: u64 = 0xcbf2_9ce4_8422_2325;
