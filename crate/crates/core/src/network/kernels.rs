//! Batch kernels for the parametric layers.
//!
//! Every output element is a binary64 reduction in ascending term order,
//! matching [`crate::qtensor::dot`]; loops are arranged so the independent
//! axis is innermost. `SHIFT` selects exponent-shift products, which callers
//! only enable when the second operand of every product is zero or a power
//! of two.

use crate::qtensor::{shift_term, OpCounts};

#[inline(always)]
fn prod<const SHIFT: bool>(a: f64, b: f64) -> f64 {
    if SHIFT {
        shift_term(a, b)
    } else {
        a * b
    }
}

/// `acc[j] += prod(w[j], x)` for all `j`.
#[inline(always)]
fn axpy<const SHIFT: bool>(acc: &mut [f64], w: &[f64], x: f64) {
    if SHIFT && x == 0.0 {
        return;
    }
    for (a, &wj) in acc.iter_mut().zip(w) {
        *a += prod::<SHIFT>(wj, x);
    }
}

fn nnz(v: &[f64]) -> u64 {
    v.iter().filter(|x| **x != 0.0).count() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Patch length `c * k * k`.
    pub fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn source(&self, pos: usize, kk: usize) -> Option<usize> {
        let (oy, ox) = (pos / self.ow, pos % self.ow);
        let ci = kk / (self.k * self.k);
        let r = kk % (self.k * self.k);
        let (ky, kx) = (r / self.k, r % self.k);
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some(ci * self.h * self.w + iy as usize * self.w + ix as usize)
        }
    }

    /// Number of in-bounds patch entries per output position.
    pub fn in_bounds(&self) -> Vec<u64> {
        (0..self.positions())
            .map(|p| (0..self.patch()).filter(|&kk| self.source(p, kk).is_some()).count() as u64)
            .collect()
    }

    /// Patch source table, row-major `[pos][kk]`, `usize::MAX` for padding.
    pub fn index_table(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.positions() * self.patch());
        for p in 0..self.positions() {
            for kk in 0..self.patch() {
                t.push(self.source(p, kk).unwrap_or(usize::MAX));
            }
        }
        t
    }
}

/// Patch matrix of one image, layout `[pos][kk]`.
pub fn im2row(img: &[f64], table: &[usize], out: &mut [f64]) {
    for (o, &src) in out.iter_mut().zip(table) {
        *o = if src == usize::MAX { 0.0 } else { img[src] };
    }
}

pub fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// `out[n][co][pos] = sum_kk w[co][kk] * rows[n][pos][kk] + b[co]`.
pub fn conv_forward(
    g: &ConvGeom,
    rows: &[f64],
    n: usize,
    weights: &[f64],
    biases: &[f64],
    shift: bool,
    counts: &mut OpCounts,
) -> Vec<f64> {
    let (kp, np) = (g.patch(), g.positions());
    let wt = transpose(weights, g.oc, kp);
    let mut out = vec![0.0; n * g.oc * np];
    let mut acc = vec![0.0; g.oc];
    for img in 0..n {
        let r = &rows[img * np * kp..(img + 1) * np * kp];
        let o = &mut out[img * g.oc * np..(img + 1) * g.oc * np];
        for p in 0..np {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let patch = &r[p * kp..(p + 1) * kp];
            for (kk, &x) in patch.iter().enumerate() {
                let wrow = &wt[kk * g.oc..(kk + 1) * g.oc];
                if shift {
                    axpy::<true>(&mut acc, wrow, x);
                } else {
                    axpy::<false>(&mut acc, wrow, x);
                }
            }
            for co in 0..g.oc {
                o[co * np + p] = acc[co] + biases[co];
            }
        }
    }
    let outs = (n * g.oc * np) as u64;
    if shift {
        counts.shift += g.oc as u64 * nnz(&rows[..n * np * kp]);
    } else {
        counts.mul += outs * kp as u64;
    }
    counts.add += outs * (kp as u64 - 1) + outs;
    out
}

/// Weight and bias gradients of a convolution, summed over the batch in
/// `(image, position)` order.
pub fn conv_param_grads(
    g: &ConvGeom,
    rows: &[f64],
    delta: &[f64],
    n: usize,
    shift: bool,
    counts: &mut OpCounts,
) -> (Vec<f64>, Vec<f64>) {
    let (kp, np) = (g.patch(), g.positions());
    let mut dw = vec![0.0; g.oc * kp];
    let mut db = vec![0.0; g.oc];
    for co in 0..g.oc {
        let drow = &mut dw[co * kp..(co + 1) * kp];
        for img in 0..n {
            let r = &rows[img * np * kp..(img + 1) * np * kp];
            let d = &delta[(img * g.oc + co) * np..(img * g.oc + co + 1) * np];
            for p in 0..np {
                let dv = d[p];
                let patch = &r[p * kp..(p + 1) * kp];
                if shift {
                    axpy::<true>(drow, patch, dv);
                } else {
                    axpy::<false>(drow, patch, dv);
                }
                db[co] += dv;
            }
        }
    }
    let terms = (n * np) as u64;
    if shift {
        counts.shift += kp as u64 * nnz(&delta[..n * g.oc * np]);
    } else {
        counts.mul += (g.oc * kp) as u64 * terms;
    }
    counts.add += (g.oc * kp) as u64 * (terms - 1) + g.oc as u64 * (terms - 1);
    (dw, db)
}

/// Error propagated to the convolution input.
#[allow(clippy::too_many_arguments)]
pub fn conv_input_grad(
    g: &ConvGeom,
    table: &[usize],
    inb: &[u64],
    weights: &[f64],
    delta: &[f64],
    n: usize,
    shift: bool,
    counts: &mut OpCounts,
) -> Vec<f64> {
    let (kp, np) = (g.patch(), g.positions());
    let isz = g.c * g.h * g.w;
    let mut dx = vec![0.0; n * isz];
    let mut acc = vec![0.0; kp];
    let mut terms = 0u64;
    for img in 0..n {
        let d = &delta[img * g.oc * np..(img + 1) * g.oc * np];
        let x = &mut dx[img * isz..(img + 1) * isz];
        for p in 0..np {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for co in 0..g.oc {
                let dv = d[co * np + p];
                let wrow = &weights[co * kp..(co + 1) * kp];
                if shift {
                    if dv != 0.0 {
                        terms += inb[p];
                    }
                    axpy::<true>(&mut acc, wrow, dv);
                } else {
                    axpy::<false>(&mut acc, wrow, dv);
                }
            }
            for (kk, &src) in table[p * kp..(p + 1) * kp].iter().enumerate() {
                if src != usize::MAX {
                    x[src] += acc[kk];
                }
            }
        }
    }
    let v: u64 = inb.iter().sum::<u64>() * n as u64;
    if shift {
        counts.shift += terms;
    } else {
        counts.mul += v * g.oc as u64;
    }
    counts.add += v * g.oc as u64;
    dx
}

/// `out[n][o] = sum_i w[o][i] * x[n][i] (+ b[o])`.
pub fn fc_forward(
    x: &[f64],
    n: usize,
    inputs: usize,
    weights: &[f64],
    biases: Option<&[f64]>,
    shift: bool,
    counts: &mut OpCounts,
) -> Vec<f64> {
    let outputs = weights.len() / inputs;
    let wt = transpose(weights, outputs, inputs);
    let mut out = vec![0.0; n * outputs];
    for img in 0..n {
        let acc = &mut out[img * outputs..(img + 1) * outputs];
        for (i, &xv) in x[img * inputs..(img + 1) * inputs].iter().enumerate() {
            let wrow = &wt[i * outputs..(i + 1) * outputs];
            if shift {
                axpy::<true>(acc, wrow, xv);
            } else {
                axpy::<false>(acc, wrow, xv);
            }
        }
        if let Some(b) = biases {
            for (a, bv) in acc.iter_mut().zip(b) {
                *a += bv;
            }
        }
    }
    let outs = (n * outputs) as u64;
    if shift {
        counts.shift += outputs as u64 * nnz(&x[..n * inputs]);
    } else {
        counts.mul += outs * inputs as u64;
    }
    counts.add += outs * (inputs as u64 - 1) + if biases.is_some() { outs } else { 0 };
    out
}

pub fn fc_param_grads(
    x: &[f64],
    delta: &[f64],
    n: usize,
    inputs: usize,
    outputs: usize,
    shift: bool,
    counts: &mut OpCounts,
) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; outputs * inputs];
    let mut db = vec![0.0; outputs];
    for img in 0..n {
        let xr = &x[img * inputs..(img + 1) * inputs];
        for o in 0..outputs {
            let dv = delta[img * outputs + o];
            let drow = &mut dw[o * inputs..(o + 1) * inputs];
            if shift {
                axpy::<true>(drow, xr, dv);
            } else {
                axpy::<false>(drow, xr, dv);
            }
            db[o] += dv;
        }
    }
    let nn = n as u64;
    if shift {
        counts.shift += inputs as u64 * nnz(&delta[..n * outputs]);
    } else {
        counts.mul += (outputs * inputs) as u64 * nn;
    }
    counts.add += (outputs * inputs) as u64 * (nn - 1) + outputs as u64 * (nn - 1);
    (dw, db)
}

pub fn fc_input_grad(
    weights: &[f64],
    delta: &[f64],
    n: usize,
    inputs: usize,
    outputs: usize,
    shift: bool,
    counts: &mut OpCounts,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * inputs];
    for img in 0..n {
        let acc = &mut dx[img * inputs..(img + 1) * inputs];
        for o in 0..outputs {
            let dv = delta[img * outputs + o];
            let wrow = &weights[o * inputs..(o + 1) * inputs];
            if shift {
                axpy::<true>(acc, wrow, dv);
            } else {
                axpy::<false>(acc, wrow, dv);
            }
        }
    }
    let cells = (n * inputs) as u64;
    if shift {
        counts.shift += inputs as u64 * nnz(&delta[..n * outputs]);
    } else {
        counts.mul += cells * outputs as u64;
    }
    counts.add += cells * (outputs as u64 - 1);
    dx
}

/// Max pooling; returns values and the flat input index of each maximum.
/// The first maximum in row-major window order wins.
pub fn pool_forward(
    x: &[f64],
    n: usize,
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
    k: usize,
    stride: usize,
    counts: &mut OpCounts,
) -> (Vec<f64>, Vec<u32>) {
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    counts.cmp += out.len() as u64 * (k * k - 1) as u64;
    (out, arg)
}

pub fn pool_backward(delta: &[f64], arg: &[u32], input_len: usize, counts: &mut OpCounts) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (d, &a) in delta.iter().zip(arg) {
        dx[a as usize] += d;
    }
    counts.add += delta.len() as u64;
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, img: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.oc * g.oh * g.ow];
        for co in 0..g.oc {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = 0.0;
                    for ci in 0..g.c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                let v = if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    0.0
                                } else {
                                    img[ci * g.h * g.w + iy as usize * g.w + ix as usize]
                                };
                                s += w[((co * g.c + ci) * g.k + ky) * g.k + kx] * v;
                            }
                        }
                    }
                    out[(co * g.oh + oy) * g.ow + ox] = s + b[co];
                }
            }
        }
        out
    }

    fn geom() -> ConvGeom {
        ConvGeom {
            c: 2,
            h: 5,
            w: 4,
            oc: 3,
            k: 3,
            stride: 1,
            pad: 1,
            oh: 5,
            ow: 4,
        }
    }

    #[test]
    fn conv_matches_naive_loop() {
        let g = geom();
        let img: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 8.0 - 0.5).collect();
        let w: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 / 64.0 - 0.1).collect();
        let b = vec![0.25, -0.5, 0.0];
        let t = g.index_table();
        let mut rows = vec![0.0; g.positions() * g.patch()];
        im2row(&img, &t, &mut rows);
        let mut c = OpCounts::default();
        let out = conv_forward(&g, &rows, 1, &w, &b, false, &mut c);
        assert_eq!(out, naive_conv(&g, &img, &w, &b));
        assert_eq!(c.mul, (3 * 20 * 18) as u64);
    }

    #[test]
    fn pool_first_max_wins() {
        let x = vec![1.0, 1.0, 1.0, 1.0];
        let mut c = OpCounts::default();
        let (v, a) = pool_forward(&x, 1, (1, 2, 2), (1, 1), 2, 2, &mut c);
        assert_eq!((v[0], a[0]), (1.0, 0));
        assert_eq!(c.cmp, 3);
        let (_, a) = pool_forward(&[0.0, 2.0, 2.0, 1.0], 1, (1, 2, 2), (1, 1), 2, 2, &mut c);
        assert_eq!(a[0], 1);
    }

    #[test]
    fn fc_counts() {
        let mut c = OpCounts::default();
        let out = fc_forward(&[1.0, 2.0, 3.0], 1, 3, &[0.5, 0.25, 0.125], None, false, &mut c);
        assert_eq!(out, vec![0.5 + 0.5 + 0.375]);
        assert_eq!((c.mul, c.add), (3, 2));
    }
}
