//! `3x3x3` convolution with zero padding 1 and stride 1 over a `T x H x W`
//! grid, channel-first layout `[C, T, H, W]`.

use num_traits::Float;

use crate::tensor::GridShape;

pub const TAPS: usize = 27;

/// Offset `(dt, dh, dw)` of kernel tap `k` in `[0, 27)`.
fn tap_offset(k: usize) -> [isize; 3] {
    [(k / 9) as isize - 1, ((k / 3) % 3) as isize - 1, (k % 3) as isize - 1]
}

/// Output index range along one axis for which `i + off` stays in bounds.
fn valid_range(len: usize, off: isize) -> std::ops::Range<usize> {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off.max(0)).max(0) as usize;
    lo..hi.max(lo)
}

/// Visits every (output row, input row) pair of contiguous `w` runs that tap
/// `k` connects: `f(out_offset, in_offset, run_len)` within one channel plane.
fn for_each_run(grid: GridShape, k: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [dt, dh, dw] = tap_offset(k);
    let tr = valid_range(grid.t, dt);
    let hr = valid_range(grid.h, dh);
    let wr = valid_range(grid.w, dw);
    if wr.is_empty() {
        return;
    }
    let run = wr.end - wr.start;
    for t in tr {
        let ti = (t as isize + dt) as usize;
        for h in hr.clone() {
            let hi = (h as isize + dh) as usize;
            let out = grid.index(t, h, wr.start);
            let inp = grid.index(ti, hi, (wr.start as isize + dw) as usize);
            f(out, inp, run);
        }
    }
}

/// `y[o] = b[o] + sum_i sum_k W[o,i,k] * shift_k(x[i])`.
pub fn forward<F: Float>(
    x: &[F],
    c_in: usize,
    grid: GridShape,
    kernel: &[F],
    bias: &[F],
    c_out: usize,
) -> Vec<F> {
    let n = grid.cells();
    debug_assert_eq!(x.len(), c_in * n);
    debug_assert_eq!(kernel.len(), c_out * c_in * TAPS);
    let mut y = vec![F::zero(); c_out * n];
    for o in 0..c_out {
        let yo = &mut y[o * n..(o + 1) * n];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c_in {
            let xi = &x[i * n..(i + 1) * n];
            let wk = &kernel[(o * c_in + i) * TAPS..(o * c_in + i + 1) * TAPS];
            for (k, &w) in wk.iter().enumerate() {
                if w == F::zero() {
                    continue;
                }
                for_each_run(grid, k, |out, inp, run| {
                    for (yv, &xv) in yo[out..out + run].iter_mut().zip(&xi[inp..inp + run]) {
                        *yv = *yv + w * xv;
                    }
                });
            }
        }
    }
    y
}

pub struct ConvGrads<F> {
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
    /// Gradient w.r.t. the input, when requested.
    pub input: Option<Vec<F>>,
}

/// Reverse pass of [`forward`] given `dy = dL/dy`.
pub fn backward<F: Float>(
    x: &[F],
    c_in: usize,
    grid: GridShape,
    kernel: &[F],
    c_out: usize,
    dy: &[F],
    want_input: bool,
) -> ConvGrads<F> {
    let n = grid.cells();
    let mut dk = vec![F::zero(); kernel.len()];
    let mut db = vec![F::zero(); c_out];
    let mut dx = want_input.then(|| vec![F::zero(); c_in * n]);
    for o in 0..c_out {
        let dyo = &dy[o * n..(o + 1) * n];
        db[o] = dyo.iter().fold(F::zero(), |a, &v| a + v);
        for i in 0..c_in {
            let xi = &x[i * n..(i + 1) * n];
            let base = (o * c_in + i) * TAPS;
            for k in 0..TAPS {
                let mut acc = F::zero();
                for_each_run(grid, k, |out, inp, run| {
                    for (&g, &xv) in dyo[out..out + run].iter().zip(&xi[inp..inp + run]) {
                        acc = acc + g * xv;
                    }
                });
                dk[base + k] = acc;
                if let Some(dx) = dx.as_mut() {
                    let w = kernel[base + k];
                    if w == F::zero() {
                        continue;
                    }
                    let dxi = &mut dx[i * n..(i + 1) * n];
                    for_each_run(grid, k, |out, inp, run| {
                        for (d, &g) in dxi[inp..inp + run].iter_mut().zip(&dyo[out..out + run]) {
                            *d = *d + w * g;
                        }
                    });
                }
            }
        }
    }
    ConvGrads {
        kernel: dk,
        bias: db,
        input: dx,
    }
}
