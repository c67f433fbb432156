//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written directly from the defining formulas with
//! nalgebra or plain loops, without calling into the library's numerics.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Spectrum and unit-norm lifted modes from the snapshot equations.
pub struct OracleDmd {
    pub mu: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub modes: Vec<Vec<Complex64>>,
}

/// Dense DMD: center both snapshot matrices by the mean of the first L-1
/// layers, truncate the SVD of the centered X1 at `rel_tol * sigma_1`, form
/// U^T X2c V S^-1, and lift each eigenvector through U.
pub fn dmd_oracle(layers: &[Vec<f64>], rel_tol: f64) -> OracleDmd {
    let l = layers.len();
    let d = layers[0].len();
    let n = l - 1;
    let mut mu = vec![0.0; d];
    for x in &layers[..n] {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let x1c = DMatrix::from_fn(d, n, |i, j| layers[j][i] - mu[i]);
    let x2c = DMatrix::from_fn(d, n, |i, j| layers[j + 1][i] - mu[i]);

    let (sing, u_all, v_all) = jacobi_svd(&x1c);
    let s1 = sing[0];
    let r = sing.iter().take_while(|&&s| s >= rel_tol * s1).count();
    let u = u_all.columns(0, r).into_owned();
    let v = v_all.columns(0, r).into_owned();
    let s_inv = DMatrix::from_fn(r, r, |i, j| if i == j { 1.0 / sing[i] } else { 0.0 });
    let a = u.transpose() * &x2c * &v * s_inv;

    let eig = a.clone().complex_eigenvalues();
    let ac: DMatrix<Complex<f64>> = a.map(|x| Complex::new(x, 0.0));
    let uc: DMatrix<Complex<f64>> = u.map(|x| Complex::new(x, 0.0));
    let mut eigenvalues = Vec::with_capacity(r);
    let mut modes = Vec::with_capacity(r);
    for lam in eig.iter() {
        let w = inverse_iteration(&ac, *lam);
        let phi = &uc * w;
        let nrm = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        eigenvalues.push(Complex64::new(lam.re, lam.im));
        modes.push(phi.iter().map(|c| Complex64::new(c.re / nrm, c.im / nrm)).collect());
    }
    OracleDmd {
        mu,
        eigenvalues,
        modes,
    }
}

/// One-sided Jacobi SVD: rotates column pairs of `a` until they are
/// mutually orthogonal. Returns singular values in descending order with
/// the matching left (`m x n`) and right (`n x n`) vectors.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += w[(i, p)] * w[(i, p)];
                    beta += w[(i, q)] * w[(i, q)];
                    gamma += w[(i, p)] * w[(i, q)];
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sing: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = DMatrix::from_fn(m, n, |i, k| {
        let j = order[k];
        if norms[j] > 0.0 {
            w[(i, j)] / norms[j]
        } else {
            0.0
        }
    });
    let vs = DMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    (sing, u, vs)
}

/// Eigenvector of `a` for the eigenvalue estimate `lam`, by a few steps of
/// inverse iteration with a slightly shifted `lam`.
fn inverse_iteration(a: &DMatrix<Complex<f64>>, lam: Complex<f64>) -> DVector<Complex<f64>> {
    let r = a.nrows();
    let shift = lam + Complex::new(1e-10 * (1.0 + lam.norm()), 0.0);
    let lu = (a - DMatrix::<Complex<f64>>::identity(r, r) * shift).lu();
    let mut x = DVector::from_fn(r, |i, _| Complex::new(1.0 + i as f64 * 0.37, 0.5 - i as f64 * 0.11));
    for _ in 0..4 {
        x = lu.solve(&x).expect("shifted matrix is invertible");
        let nrm = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        x /= Complex::new(nrm, 0.0);
    }
    x
}

/// Orders complex values by real part, then imaginary part.
pub fn sorted_spectrum(v: &[Complex64]) -> Vec<Complex64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    s
}

/// Pairs each value in `a` with its nearest unused value in `b`; returns
/// the index into `b` for every entry of `a` and the largest distance.
pub fn match_spectra(a: &[Complex64], b: &[Complex64]) -> (Vec<usize>, f64) {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut pairing = Vec::with_capacity(a.len());
    let mut worst = 0.0f64;
    for x in a {
        let (j, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        pairing.push(j);
        worst = worst.max(dist);
    }
    (pairing, worst)
}

/// `min_c ||a - c b||` over unit-modulus `c`, for unit vectors `a`, `b`.
pub fn phase_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let inner: Complex64 = b.iter().zip(a).map(|(x, y)| x.conj() * y).sum();
    let c = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - c * y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Direct-sum causal convolution: `out[t] = sum_{s<=t} k[t-s] x[s]`,
/// rows of length `d`.
pub fn brute_convolve(x: &[f64], t_len: usize, d: usize, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len {
        for s in 0..=t {
            let lag = t - s;
            if lag >= kernel.len() {
                continue;
            }
            for j in 0..d {
                out[t * d + j] += kernel[lag] * x[s * d + j];
            }
        }
    }
    out
}

/// Closed-form ridge on centered data: `(Xc^T Xc + lambda I)^-1 Xc^T yc`,
/// intercept `ybar - xbar . w`. `x` is row-major `t x d`.
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (t, d) = (x.len(), x[0].len());
    let xbar: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / t as f64).collect();
    let ybar = y.iter().sum::<f64>() / t as f64;
    let xc = DMatrix::from_fn(t, d, |i, j| x[i][j] - xbar[j]);
    let yc = DVector::from_fn(t, |i, _| y[i] - ybar);
    let gram = xc.transpose() * &xc + DMatrix::<f64>::identity(d, d) * lambda;
    let w = gram.lu().solve(&(xc.transpose() * yc)).unwrap();
    let w: Vec<f64> = w.iter().copied().collect();
    let b = ybar - dot(&xbar, &w);
    (w, b)
}

/// Pearson correlation squared, or 0 when either side is constant.
pub fn corr2(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab * sab / (saa * sbb)
    }
}

/// Pseudo-F from squared distances by direct pair sums:
/// `SS_T = (1/N) sum_{i<j} d^2`, `SS_W = sum_g (1/n_g) sum_{i<j in g} d^2`.
pub fn pseudo_f_direct(d: &dyn Fn(usize, usize) -> f64, n: usize, labels: &[usize]) -> f64 {
    let groups = labels.iter().max().unwrap() + 1;
    let mut ss_t = 0.0;
    let mut within = vec![0.0; groups];
    let mut sizes = vec![0usize; groups];
    for &l in labels {
        sizes[l] += 1;
    }
    for i in 0..n {
        for j in 0..i {
            let d2 = d(i, j).powi(2);
            ss_t += d2;
            if labels[i] == labels[j] {
                within[labels[i]] += d2;
            }
        }
    }
    ss_t /= n as f64;
    let ss_w: f64 = within.iter().zip(&sizes).map(|(w, &s)| w / s as f64).sum();
    let ss_b = ss_t - ss_w;
    (ss_b / (groups - 1) as f64) / (ss_w / (n - groups) as f64)
}

/// Every distinct assignment of the multiset `labels` to positions.
pub fn all_labelings(labels: &[usize]) -> Vec<Vec<usize>> {
    fn rec(counts: &mut Vec<usize>, cur: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for g in 0..counts.len() {
            if counts[g] > 0 {
                counts[g] -= 1;
                cur.push(g);
                rec(counts, cur, n, out);
                cur.pop();
                counts[g] += 1;
            }
        }
    }
    let groups = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0; groups];
    for &l in labels {
        counts[l] += 1;
    }
    let mut out = Vec::new();
    rec(&mut counts, &mut Vec::new(), labels.len(), &mut out);
    out
}

/// Mean silhouette straight from the definition; singletons score 0.
pub fn silhouette_direct(d: &dyn Fn(usize, usize) -> f64, n: usize, labels: &[usize]) -> f64 {
    let groups = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; groups];
        let mut counts = vec![0usize; groups];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..groups)
            .filter(|&g| g != own && counts[g] > 0)
            .map(|g| sums[g] / counts[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Textbook sums of squares for a balanced two-way layout
/// `y[a][b][rep]`: (SS_A, SS_B, SS_AB, SS_E).
pub fn balanced_anova_ss(y: &[Vec<Vec<f64>>]) -> (f64, f64, f64, f64) {
    let ka = y.len();
    let kb = y[0].len();
    let r = y[0][0].len();
    let n = (ka * kb * r) as f64;
    let grand = y.iter().flatten().flatten().sum::<f64>() / n;
    let cell = |a: usize, b: usize| y[a][b].iter().sum::<f64>() / r as f64;
    let ma: Vec<f64> = (0..ka).map(|a| (0..kb).map(|b| cell(a, b)).sum::<f64>() / kb as f64).collect();
    let mb: Vec<f64> = (0..kb).map(|b| (0..ka).map(|a| cell(a, b)).sum::<f64>() / ka as f64).collect();
    let ss_a = (kb * r) as f64 * ma.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (ka * r) as f64 * mb.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let c = cell(a, b);
            ss_ab += r as f64 * (c - ma[a] - mb[b] + grand).powi(2);
            ss_e += y[a][b].iter().map(|v| (v - c).powi(2)).sum::<f64>();
        }
    }
    (ss_a, ss_b, ss_ab, ss_e)
}
