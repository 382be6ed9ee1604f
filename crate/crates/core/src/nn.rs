//! Dense-layer and recurrent-cell kernels over flat parameter storage.
//!
//! Layers hold offsets into a shared `&[f64]` so that a whole network is a
//! single vector for gradient checks, checkpoints and component swaps.

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!("matrix data has {} entries, expected {rows}×{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Config("ragged matrix rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `y = W x + b` with `W` stored row-major as `n_out × n_in` at `w`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: Option<usize>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    #[inline]
    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.n_in * self.n_out]
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b.map_or(0.0, |b| p[b + o]);
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo = acc;
        }
    }

    /// Adds `W x` (no bias) for a column slice `[col0, col0 + x.len())` of `W`.
    pub fn forward_columns(&self, p: &[f64], col0: usize, x: &[f64], y: &mut [f64]) {
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in + col0..o * self.n_in + col0 + x.len()];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo += acc;
        }
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy`, and optionally `dx += Wᵀ dy`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        self.backward_columns(p, 0, x, dy, g, dx);
        if let Some(b) = self.b {
            for (gb, d) in g[b..b + self.n_out].iter_mut().zip(dy) {
                *gb += d;
            }
        }
    }

    /// Like `backward` for a column slice of `W`, without the bias term.
    pub fn backward_columns(
        &self,
        p: &[f64],
        col0: usize,
        x: &[f64],
        dy: &[f64],
        g: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let n = x.len();
        {
            let gw = &mut g[self.w..self.w + self.n_in * self.n_out];
            for (o, d) in dy.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.n_in + col0..o * self.n_in + col0 + n];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += d * xi;
                }
            }
        }
        if let Some(dx) = dx {
            let w = self.weights(p);
            for (o, d) in dy.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * self.n_in + col0..o * self.n_in + col0 + n];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Turns `dy` (gradient w.r.t. `y = tanh(a)`) into the gradient w.r.t. `a`.
#[inline]
pub(crate) fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (d, yv) in dy.iter_mut().zip(y) {
        *d *= 1.0 - yv * yv;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward cache of one recurrent step.
#[derive(Clone, Debug)]
pub(crate) enum CellStep {
    Elman {
        h: Vec<f64>,
    },
    /// Activated gates `i, f, g, o`, the cell, `tanh(c)` and the output.
    Lstm {
        gates: Vec<f64>,
        c: Vec<f64>,
        tc: Vec<f64>,
        h: Vec<f64>,
    },
}

impl CellStep {
    pub fn output(&self) -> &[f64] {
        match self {
            CellStep::Elman { h } | CellStep::Lstm { h, .. } => h,
        }
    }

    pub fn cell(&self) -> Option<&[f64]> {
        match self {
            CellStep::Elman { .. } => None,
            CellStep::Lstm { c, .. } => Some(c),
        }
    }
}

/// A recurrent cell: `input` carries the bias, `recurrent` has none.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RecurrentCell {
    pub input: Dense,
    pub recurrent: Dense,
    pub hidden: usize,
    pub lstm: bool,
}

impl RecurrentCell {
    /// One step from `(h_prev, c_prev)`; `None` means the zero state.
    pub fn step(&self, p: &[f64], x: &[f64], prev: Option<&CellStep>) -> CellStep {
        let width = self.recurrent.n_out;
        let mut a = vec![0.0; width];
        self.input.forward(p, x, &mut a);
        if let Some(prev) = prev {
            let mut r = vec![0.0; width];
            self.recurrent.forward(p, prev.output(), &mut r);
            for (ai, ri) in a.iter_mut().zip(&r) {
                *ai += ri;
            }
        }
        if !self.lstm {
            tanh_in_place(&mut a);
            return CellStep::Elman { h: a };
        }
        let n = self.hidden;
        for k in 0..n {
            a[k] = sigmoid(a[k]);
            a[n + k] = sigmoid(a[n + k]);
            a[2 * n + k] = a[2 * n + k].tanh();
            a[3 * n + k] = sigmoid(a[3 * n + k]);
        }
        let mut c = vec![0.0; n];
        let mut tc = vec![0.0; n];
        let mut h = vec![0.0; n];
        let c_prev = prev.and_then(CellStep::cell);
        for k in 0..n {
            let cp = c_prev.map_or(0.0, |c| c[k]);
            c[k] = a[n + k] * cp + a[k] * a[2 * n + k];
            tc[k] = c[k].tanh();
            h[k] = a[3 * n + k] * tc[k];
        }
        CellStep::Lstm { gates: a, c, tc, h }
    }

    /// Backward through one step.
    ///
    /// `dh` / `dc` are the incoming gradients w.r.t. this step's output and
    /// cell. Returns the gradients flowing to the previous `(h, c)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_step(
        &self,
        p: &[f64],
        x: &[f64],
        prev: Option<&CellStep>,
        cur: &CellStep,
        dh: &[f64],
        dc: Option<&[f64]>,
        g: &mut [f64],
        dx: &mut [f64],
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let n = self.hidden;
        let mut dpre = vec![0.0; self.recurrent.n_out];
        let mut dc_prev = None;
        match cur {
            CellStep::Elman { h } => {
                dpre.copy_from_slice(dh);
                tanh_backward(h, &mut dpre);
            }
            CellStep::Lstm { gates, tc, .. } => {
                let c_prev = prev.and_then(CellStep::cell);
                let mut dcp = vec![0.0; n];
                for k in 0..n {
                    let (i, f, gg, o) = (gates[k], gates[n + k], gates[2 * n + k], gates[3 * n + k]);
                    let dck = dh[k] * o * (1.0 - tc[k] * tc[k]) + dc.map_or(0.0, |d| d[k]);
                    let cp = c_prev.map_or(0.0, |c| c[k]);
                    dpre[k] = dck * gg * i * (1.0 - i);
                    dpre[n + k] = dck * cp * f * (1.0 - f);
                    dpre[2 * n + k] = dck * i * (1.0 - gg * gg);
                    dpre[3 * n + k] = dh[k] * tc[k] * o * (1.0 - o);
                    dcp[k] = dck * f;
                }
                dc_prev = Some(dcp);
            }
        }
        self.input.backward(p, x, &dpre, g, Some(dx));
        let mut dh_prev = vec![0.0; n];
        if let Some(prev) = prev {
            self.recurrent.backward(p, prev.output(), &dpre, g, Some(&mut dh_prev));
        }
        (dh_prev, dc_prev)
    }
}

/// Fills `dst` with uniform draws from `[-scale, scale]`.
pub(crate) fn init_uniform<R: Rng>(rng: &mut R, dst: &mut [f64], scale: f64) {
    for x in dst {
        *x = if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_and_backward() {
        // W = [[1,2],[3,4],[5,6]], b = [0.5,-1,2]
        let p = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -1.0, 2.0];
        let d = Dense { w: 0, b: Some(6), n_in: 2, n_out: 3 };
        let mut y = vec![0.0; 3];
        d.forward(&p, &[1.0, -1.0], &mut y);
        assert_eq!(y, vec![-0.5, -2.0, 1.0]);
        let mut g = vec![0.0; 9];
        let mut dx = vec![0.0; 2];
        d.backward(&p, &[1.0, -1.0], &[1.0, 0.0, 2.0], &mut g, Some(&mut dx));
        assert_eq!(dx, vec![11.0, 14.0]);
        assert_eq!(g, vec![1.0, -1.0, 0.0, 0.0, 2.0, -2.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn column_split_equals_full_product() {
        let p: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.3).collect();
        let d = Dense { w: 0, b: None, n_in: 4, n_out: 3 };
        let x = [0.3, -0.2, 0.9, 1.1];
        let mut full = vec![0.0; 3];
        d.forward(&p, &x, &mut full);
        let mut split = vec![0.0; 3];
        d.forward_columns(&p, 0, &x[..1], &mut split);
        d.forward_columns(&p, 1, &x[1..], &mut split);
        for (a, b) in full.iter().zip(&split) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
