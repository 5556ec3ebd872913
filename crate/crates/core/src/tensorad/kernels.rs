//! Dense kernels shared by the forward and backward passes.

/// `c[m×n] = op(a)·op(b)` (or `+=` when `accumulate`), where `op` optionally
/// transposes a row-major operand. `a` is stored as `m×k` (or `k×m` when
/// transposed) and `b` as `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided variant of [`gemm`]: element `(i, j)` of an operand lives at
/// `i * row_stride + j * col_stride` of its slice.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    rsc: usize,
    accumulate: bool,
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(m > 0 && k > 0 && n > 0);
    assert!(last(m, k, rsa, csa) < a.len());
    assert!(last(k, n, rsb, csb) < b.len());
    assert!(last(m, n, rsc, 1) < c.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` term of the GELU approximation at `x`, via `1 - 2/(e^{2u} + 1)`:
/// about twice as fast as `f64::tanh`, absolute error near 1e-16, and
/// saturates correctly when `e^{2u}` overflows or underflows.
pub(crate) fn gelu_tanh(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    1.0 - 2.0 / (exp(2.0 * u) + 1.0)
}

/// Tanh approximation of GELU.
#[cfg(test)]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

/// GELU derivative given the precomputed `t = gelu_tanh(x)`.
pub(crate) fn gelu_grad_with(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    gelu_grad_with(x, gelu_tanh(x))
}

/// Numerically stable softmax of one slice, written into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - max;
    }
    exp_in_place(out);
    let total: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
}

const LOG2_E: f64 = std::f64::consts::LOG2_E;
// ln 2 split so that `k * LN2_HI` is exact for |k| < 2^11
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;
const EXP_LO: f64 = -708.0;
// ln(f64::MAX)
const EXP_HI: f64 = 709.782_712_893_384;

/// Branch-free `e^x` that the compiler can vectorize in loops. Relative
/// error is within a few ulp of `f64::exp`. Results below `e^-708` flush to
/// zero; overflow gives infinity as with `f64::exp`.
/// `e^x` of every element, using AVX2 when the CPU has it.
pub(crate) fn exp_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { exp_in_place_avx2(xs) };
        return;
    }
    xs.iter_mut().for_each(|x| *x = exp(*x));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn exp_in_place_avx2(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = exp(*x));
}

#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let xc = if x < EXP_LO { EXP_LO } else { x };
    let xc = if xc > EXP_HI { EXP_HI } else { xc };
    let shifted = xc * LOG2_E + ROUND_SHIFT;
    let k = shifted - ROUND_SHIFT;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 13: truncation error below 1e-17 for |r| <= ln2/2
    let p = 1.0 / 6_227_020_800.0;
    let p = p * r + 1.0 / 479_001_600.0;
    let p = p * r + 1.0 / 39_916_800.0;
    let p = p * r + 1.0 / 3_628_800.0;
    let p = p * r + 1.0 / 362_880.0;
    let p = p * r + 1.0 / 40_320.0;
    let p = p * r + 1.0 / 5_040.0;
    let p = p * r + 1.0 / 720.0;
    let p = p * r + 1.0 / 120.0;
    let p = p * r + 1.0 / 24.0;
    let p = p * r + 1.0 / 6.0;
    let p = p * r + 0.5;
    let p = p * r + 1.0;
    let p = p * r + 1.0;
    let ki = shifted.to_bits().wrapping_sub(ROUND_SHIFT.to_bits());
    // 2^(k-1) * 2 keeps the scale finite at k = 1024
    let scale = f64::from_bits(ki.wrapping_add(1022) << 52);
    let y = p * scale * 2.0;
    let y = if x < EXP_LO { 0.0 } else { y };
    let y = if x > EXP_HI { f64::INFINITY } else { y };
    // NaN fails both comparisons above; pass it through
    if x != x {
        x
    } else {
        y
    }
}
