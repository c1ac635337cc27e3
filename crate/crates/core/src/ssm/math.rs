//! Scalar kernels. Every reduction here has a fixed evaluation order, which
//! the encoder/decoder replay relies on.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating-point type the model can be instantiated with.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `exp` from plain arithmetic: vectorizes, and gives the same bits
    /// on every platform (unlike the system libm).
    fn fast_exp(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }
}

impl Real for f64 {
    #[inline]
    fn fast_exp(self) -> Self {
        exp_f64(self)
    }
}

/// `e^x` to about 1e-14 relative error. Inputs are clamped to
/// [-708, 709]; NaN propagates.
#[inline]
pub fn exp_f64(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 709.0);
    // t's low mantissa bits hold k = round(x / ln 2) in two's complement.
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52)
}

/// `e^x` to about 2e-7 relative error. Inputs are clamped to [-87, 88].
#[inline]
pub fn exp_f32(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0; // 1.5 * 2^23
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    let x = x.clamp(-87.0, 88.0);
    let t = x * std::f32::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 40_320.0;
    for c in [1.0 / 5_040.0, 1.0 / 720.0, 1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0, 1.0] {
        p = p * r + c;
    }
    p * f32::from_bits(t.to_bits().wrapping_add(127) << 23)
}

/// Sum with four interleaved partial sums, combined in a fixed order.
#[inline]
pub fn sum4(xs: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = xs.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..4 {
            acc[k] += c[k];
        }
    }
    ((acc[0] + acc[2]) + (acc[1] + acc[3])) + tail
}

pub const LN_EPS: f64 = 1e-5;

/// Minimum items per parallel task. With a single worker, splitting only
/// hands the work to another thread and back, so don't.
pub fn task_min_len() -> usize {
    if rayon::current_num_threads() > 1 {
        1
    } else {
        usize::MAX
    }
}

/// Runs `f` compiled for AVX2 when the CPU has it. Only the vector width
/// changes: Rust never fuses or reorders float operations, so results are
/// bit-identical either way.
#[inline(always)]
pub fn wide<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        unsafe fn run<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was just detected.
            return unsafe { run(f) };
        }
    }
    f()
}

/// Dot product with eight interleaved partial sums, combined pairwise.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += scale * v`
#[inline]
pub fn axpy<F: Real>(out: &mut [F], scale: F, v: &[F]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o = *o + scale * *x;
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).fast_exp())
}

#[inline]
pub fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

/// d silu / dx
#[inline]
pub fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::of(20.0) {
        x
    } else {
        x.fast_exp().ln_1p()
    }
}

/// Normalizes `x` into `xhat`, returning `1 / sqrt(var + eps)`.
pub fn layer_norm<F: Real>(x: &[F], xhat: &mut [F]) -> F {
    let n = F::of(x.len() as f64);
    let mut sum = F::zero();
    for &v in x {
        sum = sum + v;
    }
    let mean = sum / n;
    let mut var = F::zero();
    for &v in x {
        let d = v - mean;
        var = var + d * d;
    }
    let rstd = F::one() / (var / n + F::of(LN_EPS)).sqrt();
    for (h, &v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * rstd;
    }
    rstd
}

/// Gradient through normalization: `dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))`,
/// accumulated into `dx`.
pub fn layer_norm_backward<F: Real>(xhat: &[F], rstd: F, dxhat: &[F], dx: &mut [F]) {
    let n = F::of(xhat.len() as f64);
    let mut m1 = F::zero();
    let mut m2 = F::zero();
    for (&g, &h) in dxhat.iter().zip(xhat) {
        m1 = m1 + g;
        m2 = m2 + g * h;
    }
    m1 = m1 / n;
    m2 = m2 / n;
    for ((d, &g), &h) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d = *d + rstd * (g - m1 - h * m2);
    }
}
