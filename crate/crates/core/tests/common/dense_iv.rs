//! Dense dummy-variable IV used as an oracle for the within estimator.

use nalgebra::{DMatrix, DVector};

pub struct DenseIv {
    pub coefficient: f64,
    pub clustered_se: f64,
}

/// Weighted just-identified IV of `y` on `[x, D]` with instruments `[z, D]`,
/// where `D` stacks one dummy per level of every factor. Collinear dummies
/// are handled by replacing `D` with an orthonormal basis of its weighted
/// column space (Gram-Schmidt). Cluster-robust variance uses the same finite-sample
/// factor with `K = 1 + rank(D)`.
pub fn dense_iv(y: &[f64], x: &[f64], z: &[f64], factors: &[Vec<usize>], clusters: &[usize], w: &[f64]) -> DenseIv {
    let n = y.len();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let levels: Vec<usize> = factors.iter().map(|f| f.iter().max().unwrap() + 1).collect();
    let total: usize = levels.iter().sum();
    let mut d = DMatrix::zeros(n, total);
    let mut off = 0;
    for (f, l) in factors.iter().zip(&levels) {
        for i in 0..n {
            d[(i, off + f[i])] = sw[i];
        }
        off += l;
    }
    // orthonormal basis of the dummy column space; dependent columns drop out
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..total {
        let col = d.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            basis.push(v / norm);
        }
    }
    let r = basis.len();
    let k = 1 + r;
    let xt = DMatrix::from_fn(n, k, |i, j| if j == 0 { sw[i] * x[i] } else { basis[j - 1][i] });
    let zt = DMatrix::from_fn(n, k, |i, j| if j == 0 { sw[i] * z[i] } else { basis[j - 1][i] });
    let yt = DVector::from_fn(n, |i, _| sw[i] * y[i]);
    let a = zt.transpose() * &xt;
    let a_inv = a.clone().try_inverse().expect("instrument matrix is singular");
    let beta = &a_inv * (zt.transpose() * &yt);
    let resid = &yt - &xt * &beta;
    let g = clusters.iter().max().unwrap() + 1;
    let mut meat = DMatrix::zeros(k, k);
    for c in 0..g {
        let mut s = DVector::zeros(k);
        for i in (0..n).filter(|&i| clusters[i] == c) {
            s += zt.row(i).transpose() * resid[i];
        }
        meat += &s * s.transpose();
    }
    let (gf, nf, kf) = (g as f64, n as f64, k as f64);
    let factor = gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    let v = &a_inv * meat * a_inv.transpose() * factor;
    DenseIv {
        coefficient: beta[0],
        clustered_se: v[(0, 0)].max(0.0).sqrt(),
    }
}
