//! Dense real-symmetric × complex matrix-vector kernels.
//!
//! Both code paths perform the same lane-wise multiply/add sequence, so
//! results are bit-identical whether or not AVX2 is available.

const LANES: usize = 8;

#[inline(always)]
fn dual_dot_generic(a: &[f64], xr: &[f64], xi: &[f64]) -> (f64, f64) {
    let mut sr = [0.0f64; LANES];
    let mut si = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cr = xr.chunks_exact(LANES);
    let ci = xi.chunks_exact(LANES);
    let (ta, tr, ti) = (ca.remainder(), cr.remainder(), ci.remainder());
    for ((a, r), i) in ca.zip(cr).zip(ci) {
        for l in 0..LANES {
            sr[l] += a[l] * r[l];
            si[l] += a[l] * i[l];
        }
    }
    let mut r = ((sr[0] + sr[4]) + (sr[2] + sr[6])) + ((sr[1] + sr[5]) + (sr[3] + sr[7]));
    let mut i = ((si[0] + si[4]) + (si[2] + si[6])) + ((si[1] + si[5]) + (si[3] + si[7]));
    for ((a, xr), xi) in ta.iter().zip(tr).zip(ti) {
        r += a * xr;
        i += a * xi;
    }
    (r, i)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn symv_avx2(
    m: &[f64],
    n: usize,
    coef: f64,
    xr: &[f64],
    xi: &[f64],
    yr: &mut [f64],
    yi: &mut [f64],
) {
    symv_body(m, n, coef, xr, xi, yr, yi)
}

#[inline(always)]
fn symv_body(
    m: &[f64],
    n: usize,
    coef: f64,
    xr: &[f64],
    xi: &[f64],
    yr: &mut [f64],
    yi: &mut [f64],
) {
    for (col, (r, i)) in m.chunks_exact(n).zip(yr.iter_mut().zip(yi.iter_mut())) {
        let (dr, di) = dual_dot_generic(col, xr, xi);
        *r += coef * dr;
        *i += coef * di;
    }
}

/// `y += coef · M x` for a symmetric `n × n` matrix `m` stored densely
/// (either major order) and complex `x = xr + i xi`.
pub fn symv_accumulate(
    m: &[f64],
    n: usize,
    coef: f64,
    xr: &[f64],
    xi: &[f64],
    yr: &mut [f64],
    yi: &mut [f64],
) {
    assert_eq!(m.len(), n * n);
    assert!(xr.len() == n && xi.len() == n && yr.len() == n && yi.len() == n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { symv_avx2(m, n, coef, xr, xi, yr, yi) };
            return;
        }
    }
    symv_body(m, n, coef, xr, xi, yr, yi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let n = 37;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = ((i * 31 + j * 17) % 23) as f64 / 7.0 - 1.5;
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let xr: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let xi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut yr = vec![1.0; n];
        let mut yi = vec![-1.0; n];
        symv_accumulate(&m, n, 0.5, &xr, &xi, &mut yr, &mut yi);
        for i in 0..n {
            let (mut r, mut im) = (0.0, 0.0);
            for j in 0..n {
                r += m[i * n + j] * xr[j];
                im += m[i * n + j] * xi[j];
            }
            assert!((yr[i] - (1.0 + 0.5 * r)).abs() < 1e-12);
            assert!((yi[i] - (-1.0 + 0.5 * im)).abs() < 1e-12);
        }
    }
}
