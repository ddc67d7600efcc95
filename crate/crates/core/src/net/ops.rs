//! Index rearrangements used by windowed attention. All of them are gathers, so they
//! move values without arithmetic and round trips are bit-exact.

use crate::tensor::{Real, Result, Tape, Tensor, TensorError, Var};

fn hwc(tape: &Tape<impl Real>, x: Var, op: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(TensorError::Contract(format!("{op} expects H×W×C, got {s:?}"))),
    }
}

/// Gather indices taking H×W×C features to `[windows, m², C]`, windows and tokens row-major.
pub fn partition_index(h: usize, w: usize, c: usize, m: usize) -> Vec<usize> {
    let (nh, nw) = (h / m, w / m);
    let mut idx = Vec::with_capacity(h * w * c);
    for wy in 0..nh {
        for wx in 0..nw {
            for ty in 0..m {
                for tx in 0..m {
                    let base = ((wy * m + ty) * w + wx * m + tx) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    idx
}

pub fn window_partition<T: Real>(tape: &mut Tape<T>, x: Var, m: usize) -> Result<Var> {
    let (h, w, c) = hwc(tape, x, "window_partition")?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(TensorError::Contract(format!(
            "window_partition: {h}x{w} not divisible by window {m}"
        )));
    }
    let idx = partition_index(h, w, c, m);
    tape.gather(x, idx, &[(h / m) * (w / m), m * m, c])
}

pub fn window_reverse<T: Real>(tape: &mut Tape<T>, windows: Var, h: usize, w: usize, m: usize) -> Result<Var> {
    let s = tape.shape(windows).to_vec();
    let ok = s.len() == 3 && m > 0 && h % m == 0 && w % m == 0 && s[0] == (h / m) * (w / m) && s[1] == m * m;
    if !ok {
        return Err(TensorError::Shape { op: "window_reverse", lhs: s, rhs: vec![h, w, m] });
    }
    let c = s[2];
    let fwd = partition_index(h, w, c, m);
    let mut inv = vec![0; fwd.len()];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src] = i;
    }
    tape.gather(windows, inv, &[h, w, c])
}

/// Toroidal roll: the value at `(y, x)` moves to `((y+dy) mod H, (x+dx) mod W)`.
pub fn cyclic_shift<T: Real>(tape: &mut Tape<T>, x: Var, dy: isize, dx: isize) -> Result<Var> {
    let (h, w, c) = hwc(tape, x, "cyclic_shift")?;
    let mut idx = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
        for xx in 0..w {
            let sx = (xx as isize - dx).rem_euclid(w as isize) as usize;
            let base = (sy * w + sx) * c;
            idx.extend(base..base + c);
        }
    }
    tape.gather(x, idx, &[h, w, c])
}

/// Mirror index without edge repetition (`n−2, n−3, …` after the last sample), periodic for long pads.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads the bottom and right edges by `ph` rows and `pw` columns.
pub fn reflect_pad<T: Real>(tape: &mut Tape<T>, x: Var, ph: usize, pw: usize) -> Result<Var> {
    let (h, w, c) = hwc(tape, x, "reflect_pad")?;
    if ph == 0 && pw == 0 {
        return Ok(x);
    }
    let (oh, ow) = (h + ph, w + pw);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        let sy = reflect_index(y, h);
        for xx in 0..ow {
            let base = (sy * w + reflect_index(xx, w)) * c;
            idx.extend(base..base + c);
        }
    }
    tape.gather(x, idx, &[oh, ow, c])
}

/// Top-left `h`×`w` window.
pub fn crop<T: Real>(tape: &mut Tape<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let (ih, iw, c) = hwc(tape, x, "crop")?;
    if h > ih || w > iw {
        return Err(TensorError::Contract(format!("crop {h}x{w} exceeds {ih}x{iw}")));
    }
    if (h, w) == (ih, iw) {
        return Ok(x);
    }
    let mut idx = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let base = y * iw * c;
        idx.extend(base..base + w * c);
    }
    tape.gather(x, idx, &[h, w, c])
}

/// For each ordered token pair `(a, b)` of an m×m window, the entry of the
/// `(2m−1)²` bias table addressed by their displacement.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let t = m * m;
    let side = 2 * m - 1;
    let mut idx = Vec::with_capacity(t * t);
    for a in 0..t {
        let (ay, ax) = (a / m, a % m);
        for b in 0..t {
            let (by, bx) = (b / m, b % m);
            idx.push((ay + m - 1 - by) * side + (ax + m - 1 - bx));
        }
    }
    idx
}

/// Expands a `[heads, (2m−1)²]` table into the `[heads, m², m²]` bias added to scores.
pub fn relative_bias<T: Real>(tape: &mut Tape<T>, table: Var, m: usize) -> Result<Var> {
    let side2 = (2 * m - 1) * (2 * m - 1);
    let heads = match *tape.shape(table) {
        [n, s] if s == side2 => n,
        ref s => {
            return Err(TensorError::Shape { op: "relative_bias", lhs: s.to_vec(), rhs: vec![side2] })
        }
    };
    let rpi = relative_position_index(m);
    let idx = (0..heads).flat_map(|n| rpi.iter().map(move |&r| n * side2 + r)).collect();
    tape.gather(table, idx, &[heads, m * m, m * m])
}

/// Score offsets for shifted windows: 0 between tokens from the same region of the
/// rolled image, −100 otherwise. Shape `[windows, 1, m², m²]`.
pub fn shift_mask<T: Real>(h: usize, w: usize, m: usize, sy: usize, sx: usize) -> Tensor<T> {
    let region = |v: usize, n: usize, s: usize| -> usize {
        if s == 0 || v < n - m {
            0
        } else if v < n - s {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (h / m, w / m);
    let t = m * m;
    let mut data = Vec::with_capacity(nh * nw * t * t);
    let neg = T::from_f64_lossy(-100.0);
    for wy in 0..nh {
        for wx in 0..nw {
            let ids: Vec<usize> = (0..t)
                .map(|k| {
                    let (y, x) = (wy * m + k / m, wx * m + k % m);
                    region(y, h, sy) * 3 + region(x, w, sx)
                })
                .collect();
            for a in 0..t {
                for b in 0..t {
                    data.push(if ids[a] == ids[b] { T::zero() } else { neg });
                }
            }
        }
    }
    Tensor::new(vec![nh * nw, 1, t, t], data).expect("mask dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(h: usize, w: usize) -> Tensor<f64> {
        Tensor::new(vec![h, w, 1], (0..h * w).map(|i| ((i / w) * 100 + i % w) as f64).collect()).unwrap()
    }

    #[test]
    fn single_window_is_flatten() {
        let mut t = Tape::new();
        let x = t.constant(coords(4, 4));
        let p = window_partition(&mut t, x, 4).unwrap();
        assert_eq!(t.shape(p), &[1, 16, 1]);
        assert_eq!(t.value(p).data(), t.value(x).data());
    }

    #[test]
    fn top_left_window() {
        let mut t = Tape::new();
        let x = t.constant(coords(16, 16));
        let p = window_partition(&mut t, x, 8).unwrap();
        assert_eq!(t.shape(p), &[4, 64, 1]);
        let first: Vec<f64> = t.value(p).data()[..64].to_vec();
        let want: Vec<f64> = (0..8).flat_map(|y| (0..8).map(move |x| (y * 100 + x) as f64)).collect();
        assert_eq!(first, want);
        // second window in row-major order starts at column 8
        assert_eq!(t.value(p).data()[64], 8.0);
        assert!(window_partition(&mut t, x, 5).is_err());
        assert!(window_reverse(&mut t, p, 16, 16, 4).is_err());
    }

    #[test]
    fn shift_corners() {
        let mut t = Tape::new();
        let x = t.constant(coords(4, 4));
        let s = cyclic_shift(&mut t, x, 2, 2).unwrap();
        let v = t.value(s).data();
        assert_eq!(v[0], 202.0);
        assert_eq!(v[3], 201.0);
        assert_eq!(v[15], 101.0);
        assert_eq!(v[2 * 4 + 2], 0.0);
        let z = cyclic_shift(&mut t, x, 0, 0).unwrap();
        assert_eq!(t.value(z), t.value(x));
    }

    #[test]
    fn reflect_pad_and_crop() {
        assert_eq!((0..7).map(|i| reflect_index(i, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(5, 1), 0);
        let mut t = Tape::new();
        let x = t.constant(coords(3, 2));
        let p = reflect_pad(&mut t, x, 1, 2).unwrap();
        assert_eq!(t.shape(p), &[4, 4, 1]);
        assert_eq!(t.value(p).data()[..4], [0.0, 1.0, 0.0, 1.0]);
        assert_eq!(t.value(p).data()[12..], [100.0, 101.0, 100.0, 101.0]);
        let c = crop(&mut t, p, 3, 2).unwrap();
        assert_eq!(t.value(c), t.value(x));
    }

    #[test]
    fn relative_index_range_and_center() {
        let m = 3;
        let idx = relative_position_index(m);
        assert_eq!(idx.len(), 81);
        assert!(idx.iter().all(|&i| i < 25));
        // zero displacement maps to the table center for every token
        for a in 0..9 {
            assert_eq!(idx[a * 9 + a], 12);
        }
    }

    #[test]
    fn mask_regions() {
        let mask = shift_mask::<f64>(8, 8, 4, 2, 2);
        assert_eq!(mask.shape(), &[4, 1, 16, 16]);
        // the top-left window lies entirely in one region
        assert!(mask.data()[..256].iter().all(|&v| v == 0.0));
        // the bottom-right window mixes four regions
        let last = &mask.data()[3 * 256..];
        assert_eq!(last[0], 0.0);
        assert_eq!(last[3], -100.0);
        let unshifted = shift_mask::<f64>(8, 8, 4, 0, 0);
        assert!(unshifted.data().iter().all(|&v| v == 0.0));
    }
}
