// Forward and vector-Jacobian kernels on flat row-major slices.
//
// Every output element is produced by exactly one thread in a fixed summation order,
// so results do not depend on the rayon pool size.

use rayon::prelude::*;

use super::Real;

const PAR_THRESHOLD: usize = 1 << 15;

/// out[m×n] = a[m×k] · b[k×n]
pub(crate) fn matmul_2d<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [T])| {
        out_row.iter_mut().for_each(|o| *o = T::zero());
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// da[m×k] += dout[m×n] · b[k×n]ᵀ
pub(crate) fn matmul_grad_a<T: Real>(
    dout: &[T],
    b: &[T],
    da: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    let row = |(i, da_row): (usize, &mut [T])| {
        let g_row = &dout[i * n..(i + 1) * n];
        for (p, d) in da_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&g, &bv) in g_row.iter().zip(b_row) {
                acc = acc + g * bv;
            }
            *d = *d + acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        da.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        da.chunks_mut(k).enumerate().for_each(row);
    }
}

/// db[k×n] += a[m×k]ᵀ · dout[m×n]
pub(crate) fn matmul_grad_b<T: Real>(
    a: &[T],
    dout: &[T],
    db: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    let row = |(p, db_row): (usize, &mut [T])| {
        for i in 0..m {
            let av = a[i * k + p];
            let g_row = &dout[i * n..(i + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(g_row) {
                *d = *d + av * g;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        db.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        db.chunks_mut(n).enumerate().for_each(row);
    }
}

/// Zero-padded 3×3 cross-correlation, channels-last.
pub(crate) struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvDims {
    fn tap(&self, y: usize, x: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let sy = (y + ky).checked_sub(1)?;
        let sx = (x + kx).checked_sub(1)?;
        (sy < self.h && sx < self.w).then_some((sy, sx))
    }
}

pub(crate) fn conv3x3<T: Real>(x: &[T], wt: &[T], bias: &[T], out: &mut [T], d: &ConvDims) {
    let (cin, cout) = (d.cin, d.cout);
    let row = |(y, out_row): (usize, &mut [T])| {
        for xx in 0..d.w {
            let acc = &mut out_row[xx * cout..(xx + 1) * cout];
            acc.copy_from_slice(bias);
            for ky in 0..3 {
                for kx in 0..3 {
                    let Some((sy, sx)) = d.tap(y, xx, ky, kx) else {
                        continue;
                    };
                    let src = &x[(sy * d.w + sx) * cin..(sy * d.w + sx + 1) * cin];
                    for (ci, &xv) in src.iter().enumerate() {
                        let w_off = ((ky * 3 + kx) * cin + ci) * cout;
                        for (a, &wv) in acc.iter_mut().zip(&wt[w_off..w_off + cout]) {
                            *a = *a + xv * wv;
                        }
                    }
                }
            }
        }
    };
    if d.h * d.w * 9 * cin * cout >= PAR_THRESHOLD {
        out.par_chunks_mut(d.w * cout).enumerate().for_each(row);
    } else {
        out.chunks_mut(d.w * cout).enumerate().for_each(row);
    }
}

pub(crate) fn conv3x3_grad_x<T: Real>(dout: &[T], wt: &[T], dx: &mut [T], d: &ConvDims) {
    let (cin, cout) = (d.cin, d.cout);
    // dx[sy, sx] collects dout[y, x] for every (y, x) whose tap (ky, kx) lands on it.
    let row = |(sy, dx_row): (usize, &mut [T])| {
        for sx in 0..d.w {
            let acc = &mut dx_row[sx * cin..(sx + 1) * cin];
            for ky in 0..3 {
                let Some(y) = (sy + 1).checked_sub(ky).filter(|&y| y < d.h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(x) = (sx + 1).checked_sub(kx).filter(|&x| x < d.w) else {
                        continue;
                    };
                    let g = &dout[(y * d.w + x) * cout..(y * d.w + x + 1) * cout];
                    for (ci, a) in acc.iter_mut().enumerate() {
                        let w_off = ((ky * 3 + kx) * cin + ci) * cout;
                        let mut s = T::zero();
                        for (&gv, &wv) in g.iter().zip(&wt[w_off..w_off + cout]) {
                            s = s + gv * wv;
                        }
                        *a = *a + s;
                    }
                }
            }
        }
    };
    if d.h * d.w * 9 * cin * cout >= PAR_THRESHOLD {
        dx.par_chunks_mut(d.w * cin).enumerate().for_each(row);
    } else {
        dx.chunks_mut(d.w * cin).enumerate().for_each(row);
    }
}

pub(crate) fn conv3x3_grad_w<T: Real>(x: &[T], dout: &[T], dw: &mut [T], d: &ConvDims) {
    let (cin, cout) = (d.cin, d.cout);
    // one row per (ky, kx, ci)
    let row = |(r, dw_row): (usize, &mut [T])| {
        let (tap, ci) = (r / cin, r % cin);
        let (ky, kx) = (tap / 3, tap % 3);
        for y in 0..d.h {
            for xx in 0..d.w {
                let Some((sy, sx)) = d.tap(y, xx, ky, kx) else {
                    continue;
                };
                let xv = x[(sy * d.w + sx) * cin + ci];
                let g = &dout[(y * d.w + xx) * cout..(y * d.w + xx + 1) * cout];
                for (a, &gv) in dw_row.iter_mut().zip(g) {
                    *a = *a + xv * gv;
                }
            }
        }
    };
    if d.h * d.w * 9 * cin * cout >= PAR_THRESHOLD {
        dw.par_chunks_mut(cout).enumerate().for_each(row);
    } else {
        dw.chunks_mut(cout).enumerate().for_each(row);
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax<T: Real>(x: &[T], out: &mut [T], (outer, len, inner): (usize, usize, usize)) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / sum;
            }
        }
    }
}

pub(crate) fn softmax_grad<T: Real>(
    y: &[T],
    dy: &[T],
    dx: &mut [T],
    (outer, len, inner): (usize, usize, usize),
) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot = dot + dy[at(j)] * y[at(j)];
            }
            for j in 0..len {
                dx[at(j)] = dx[at(j)] + y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
}

/// Normalizes rows of length `c`; returns (x̂, 1/σ per row).
pub(crate) fn layer_norm<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    out: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let c = gamma.len();
    let cf = T::from_usize(c).unwrap();
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / c);
    for ((row, xh), o) in x.chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
        let mean = row.iter().copied().sum::<T>() / cf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
        let r = T::one() / (var + eps).sqrt();
        for j in 0..c {
            xh[j] = (row[j] - mean) * r;
            o[j] = xh[j] * gamma[j] + beta[j];
        }
        rstd.push(r);
    }
    (xhat, rstd)
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}
