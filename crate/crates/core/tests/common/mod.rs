//! Brute-force reference implementations used by the integration tests.
//! Nothing here calls into the library's numeric kernels.
#![allow(dead_code)]

use asap_core::AttentionStack;

pub type Mat = Vec<Vec<f64>>;

/// Head-averaged, row-renormalized layer maps straight from the raw `f32` payload.
pub fn layer_maps(stack: &AttentionStack) -> Vec<Mat> {
    let (l, h, n) = (stack.layers(), stack.heads(), stack.tokens());
    let raw = stack.raw_attention();
    let mut maps = Vec::new();
    for layer in 0..l {
        let mut m = vec![vec![0.0; n]; n];
        for head in 0..h {
            let base = (layer * h + head) * n * n;
            for i in 0..n {
                let row = &raw[base + i * n..base + (i + 1) * n];
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                for j in 0..n {
                    m[i][j] += row[j] as f64 / s / h as f64;
                }
            }
        }
        for row in m.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        maps.push(m);
    }
    maps
}

pub fn lazy(a: &Mat, alpha: f64) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = alpha * a[i][j] + if i == j { 1.0 - alpha } else { 0.0 };
        }
    }
    out
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn column_sum(p: &Mat, j: usize) -> f64 {
    p.iter().map(|row| row[j]).sum()
}

pub fn max_patch_column(p: &Mat) -> (usize, f64) {
    let mut best = (1, column_sum(p, 1));
    for j in 2..p.len() {
        let c = column_sum(p, j);
        if c > best.1 {
            best = (j, c);
        }
    }
    best
}

/// Every cumulative product `P(1)..P(L)` by direct repeated multiplication.
pub fn products(maps: &[Mat], alpha: f64) -> Vec<Mat> {
    let mut out: Vec<Mat> = Vec::new();
    for a in maps {
        let lz = lazy(a, alpha);
        let next = match out.last() {
            Some(prev) => matmul(prev, &lz),
            None => lz,
        };
        out.push(next);
    }
    out
}

/// First 1-based depth whose max patch column sum exceeds `tau`.
pub fn trigger_depth(products: &[Mat], tau: f64) -> Option<usize> {
    products
        .iter()
        .position(|p| max_patch_column(p).1 > tau)
        .map(|t| t + 1)
}

pub fn cls_argmax(p: &Mat) -> usize {
    let mut best = 1;
    for j in 2..p.len() {
        if p[0][j] > p[0][best] {
            best = j;
        }
    }
    best
}

/// Unweighted row distance of every patch token to `s`.
pub fn distances(p: &Mat, s: usize) -> Vec<f64> {
    (1..p.len())
        .map(|i| {
            let mut acc = 0.0;
            for (a, b) in p[i].iter().zip(&p[s]) {
                acc += (a - b) * (a - b);
            }
            acc.sqrt()
        })
        .collect()
}

/// Column-mean stationary estimate, floored at 1e-12 and renormalized.
pub fn phi(p: &Mat) -> Vec<f64> {
    let n = p.len();
    let mut v: Vec<f64> = (0..n)
        .map(|j| (column_sum(p, j) / n as f64).max(1e-12))
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn weighted_distances(p: &Mat, s: usize, phi: &[f64]) -> Vec<f64> {
    (1..p.len())
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..p.len() {
                let d = p[i][j] - p[s][j];
                acc += d * d / phi[j];
            }
            acc.sqrt()
        })
        .collect()
}

/// Pearson correlation of average ranks, computed the textbook way.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut r = vec![0.0; n];
        for i in 0..n {
            let less = x.iter().filter(|&&y| y < x[i]).count() as f64;
            let equal = x.iter().filter(|&&y| y == x[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma).powi(2);
        sbb += (rb[i] - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn to_mat(p: &asap_core::TransitionMatrix) -> Mat {
    (0..p.n()).map(|i| p.row(i).to_vec()).collect()
}
