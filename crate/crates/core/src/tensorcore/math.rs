//! Plain slice kernels shared by the graph ops and by gradient-free decoding.

/// `out = a · b` for row-major `a: m×k`, `b: k×n`. Each output element is
/// accumulated over `k` in ascending order regardless of `m`, so a row's
/// result does not depend on how many other rows are multiplied with it.
pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            axpy(av, &b[kk * n..(kk + 1) * n], orow);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(d, s)| *d += alpha * s);
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = logsumexp(row);
    row.iter_mut().for_each(|x| *x -= lse);
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    log_softmax_in_place(&mut out);
    out
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` addressed by `(seed, stream, index)`.
pub fn counter_uniform(seed: u64, stream: u64, index: u64) -> f64 {
    let h = splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index);
    (h >> 11) as f64 / (1u64 << 53) as f64
}
