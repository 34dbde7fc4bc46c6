//! The reverse pass: gradients of a scalar with respect to every watched leaf.

use super::ops::{gelu_grad, gemm_into, Op};
use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradient of the loss for every node that participated in its computation.
pub struct Gradients<S> {
    tape_id: u64,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a tensor watched on the originating tape.
    ///
    /// Watched tensors that did not contribute to the loss get a zero
    /// gradient of their own length; unwatched tensors get `None`.
    pub fn get(&self, t: &Tensor<S>) -> Option<Vec<S>> {
        let node = t.node()?;
        assert_eq!(node.tape, self.tape_id, "gradients from a different tape");
        Some(match &self.grads[node.index] {
            Some(g) => g.clone(),
            None => vec![S::zero(); t.len()],
        })
    }
}

impl<S: Scalar> Tape<S> {
    /// Runs reverse-mode accumulation from a scalar loss.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        if loss.len() != 1 {
            return Err(Error::NotScalar(loss.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<S>>> = vec![None; nodes.len()];
        let root = match loss.node() {
            Some(n) => n.index,
            // loss not on this tape (nothing was tracked): no gradients flow
            None => {
                return Ok(Gradients {
                    tape_id: self.tape_id(),
                    grads,
                })
            }
        };
        grads[root] = Some(vec![S::one()]);

        for idx in (0..=root).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let keep = matches!(nodes[idx].op, Op::Leaf);
            match &nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k, n) = (a.rows, a.cols, b.cols);
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, m * k);
                        gemm_into(m, n, k, S::one(), &g, false, &b.data, true, S::one(), buf);
                    }
                    if let Some(ib) = b.node {
                        let buf = slot(&mut grads, ib, k * n);
                        gemm_into(k, m, n, S::one(), &a.data, true, &g, false, S::one(), buf);
                    }
                }
                Op::Transpose { a } => {
                    if let Some(ia) = a.node {
                        let (m, n) = (a.rows, a.cols);
                        let buf = slot(&mut grads, ia, m * n);
                        for i in 0..n {
                            for j in 0..m {
                                buf[j * n + i] += g[i * m + j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for id in [a, b].into_iter().flatten() {
                        add_into(slot(&mut grads, *id, g.len()), &g);
                    }
                }
                Op::Sub { a, b } => {
                    if let Some(ia) = *a {
                        add_into(slot(&mut grads, ia, g.len()), &g);
                    }
                    if let Some(ib) = *b {
                        let buf = slot(&mut grads, ib, g.len());
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o -= gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, g.len());
                        for ((o, &gi), &bi) in buf.iter_mut().zip(&g).zip(b.data.iter()) {
                            *o += gi * bi;
                        }
                    }
                    if let Some(ib) = b.node {
                        let buf = slot(&mut grads, ib, g.len());
                        for ((o, &gi), &ai) in buf.iter_mut().zip(&g).zip(a.data.iter()) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::Div { a, b } => {
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, g.len());
                        for ((o, &gi), &bi) in buf.iter_mut().zip(&g).zip(b.data.iter()) {
                            *o += gi / bi;
                        }
                    }
                    if let Some(ib) = b.node {
                        let buf = slot(&mut grads, ib, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            let bi = b.data[i];
                            *o -= gi * a.data[i] / (bi * bi);
                        }
                    }
                }
                Op::Scale { a, c } => {
                    if let Some(ia) = *a {
                        let c = *c;
                        let buf = slot(&mut grads, ia, g.len());
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += gi * c;
                        }
                    }
                }
                Op::AddScalar { a } => {
                    if let Some(ia) = *a {
                        add_into(slot(&mut grads, ia, g.len()), &g);
                    }
                }
                Op::AddRow { a, r, rows, cols } => {
                    if let Some(ia) = *a {
                        add_into(slot(&mut grads, ia, g.len()), &g);
                    }
                    if let Some(ir) = *r {
                        let buf = slot(&mut grads, ir, *cols);
                        for i in 0..*rows {
                            for j in 0..*cols {
                                buf[j] += g[i * cols + j];
                            }
                        }
                    }
                }
                Op::MulRow { a, r } => {
                    let (m, n) = (a.rows, a.cols);
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, m * n);
                        for i in 0..m {
                            for j in 0..n {
                                buf[i * n + j] += g[i * n + j] * r.data[j];
                            }
                        }
                    }
                    if let Some(ir) = r.node {
                        let buf = slot(&mut grads, ir, n);
                        for i in 0..m {
                            for j in 0..n {
                                buf[j] += g[i * n + j] * a.data[i * n + j];
                            }
                        }
                    }
                }
                Op::MulCol { a, c } => {
                    let (m, n) = (a.rows, a.cols);
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, m * n);
                        for i in 0..m {
                            for j in 0..n {
                                buf[i * n + j] += g[i * n + j] * c.data[i];
                            }
                        }
                    }
                    if let Some(ic) = c.node {
                        let buf = slot(&mut grads, ic, m);
                        for i in 0..m {
                            for j in 0..n {
                                buf[i] += g[i * n + j] * a.data[i * n + j];
                            }
                        }
                    }
                }
                Op::DivCol { a, c } => {
                    let (m, n) = (a.rows, a.cols);
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, m * n);
                        for i in 0..m {
                            for j in 0..n {
                                buf[i * n + j] += g[i * n + j] / c.data[i];
                            }
                        }
                    }
                    if let Some(ic) = c.node {
                        let buf = slot(&mut grads, ic, m);
                        for i in 0..m {
                            let ci = c.data[i];
                            for j in 0..n {
                                buf[i] -= g[i * n + j] * a.data[i * n + j] / (ci * ci);
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let mut row0 = 0;
                        for (node, r, c) in parts {
                            if let Some(ip) = node {
                                let buf = slot(&mut grads, *ip, r * c);
                                add_into(buf, &g[row0 * c..(row0 + r) * c]);
                            }
                            row0 += r;
                        }
                    } else {
                        let total_cols: usize = parts.iter().map(|(_, _, c)| c).sum();
                        let mut col0 = 0;
                        for (node, r, c) in parts {
                            if let Some(ip) = node {
                                let buf = slot(&mut grads, *ip, r * c);
                                for i in 0..*r {
                                    for j in 0..*c {
                                        buf[i * c + j] += g[i * total_cols + col0 + j];
                                    }
                                }
                            }
                            col0 += c;
                        }
                    }
                }
                Op::Slice {
                    a,
                    axis,
                    start,
                    out_rows,
                    out_cols,
                } => {
                    if let Some(ia) = a.node {
                        let (m, n) = (a.rows, a.cols);
                        let buf = slot(&mut grads, ia, m * n);
                        if *axis == 0 {
                            add_into(&mut buf[start * n..(start + out_rows) * n], &g);
                        } else {
                            for i in 0..*out_rows {
                                for j in 0..*out_cols {
                                    buf[i * n + start + j] += g[i * out_cols + j];
                                }
                            }
                        }
                    }
                }
                Op::Relu { a, out } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            if out[i] > S::zero() {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::Gelu { a } => {
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            *o += gi * gelu_grad(a.data[i]);
                        }
                    }
                }
                Op::Sigmoid { a, out } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            let y = out[i];
                            *o += gi * y * (S::one() - y);
                        }
                    }
                }
                Op::Exp { a, out } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            *o += gi * out[i];
                        }
                    }
                }
                Op::Log { a } => {
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            *o += gi / a.data[i];
                        }
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    if let Some(ia) = a.node {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            let x = a.data[i];
                            if x > *lo && x < *hi {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::Softmax {
                    a,
                    axis,
                    out,
                    rows,
                    cols,
                } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, g.len());
                        let (outer, inner, os, is) = if *axis == 1 {
                            (*rows, *cols, *cols, 1)
                        } else {
                            (*cols, *rows, 1, *cols)
                        };
                        for o in 0..outer {
                            let mut dot = S::zero();
                            for i in 0..inner {
                                let p = o * os + i * is;
                                dot += g[p] * out[p];
                            }
                            for i in 0..inner {
                                let p = o * os + i * is;
                                buf[p] += out[p] * (g[p] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    a,
                    normed,
                    inv_std,
                    rows,
                    cols,
                } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, rows * cols);
                        let n_s = S::real(*cols as f64);
                        for i in 0..*rows {
                            let row = i * cols;
                            let mut g_mean = S::zero();
                            let mut gx_mean = S::zero();
                            for j in 0..*cols {
                                g_mean += g[row + j];
                                gx_mean += g[row + j] * normed[row + j];
                            }
                            g_mean /= n_s;
                            gx_mean /= n_s;
                            for j in 0..*cols {
                                buf[row + j] +=
                                    inv_std[i] * (g[row + j] - g_mean - normed[row + j] * gx_mean);
                            }
                        }
                    }
                }
                Op::Dropout { a, mask } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, g.len());
                        for (i, (o, &gi)) in buf.iter_mut().zip(&g).enumerate() {
                            *o += gi * mask[i];
                        }
                    }
                }
                Op::L2Norm { a, out } => {
                    if let Some(ia) = a.node {
                        let (m, n) = (a.rows, a.cols);
                        let buf = slot(&mut grads, ia, m * n);
                        for i in 0..m {
                            let scale = g[i] / out[i];
                            for j in 0..n {
                                buf[i * n + j] += scale * a.data[i * n + j];
                            }
                        }
                    }
                }
                Op::Cosine { a, b } => {
                    let (m, n) = (a.rows, a.cols);
                    for i in 0..m {
                        let ar = &a.data[i * n..(i + 1) * n];
                        let br = &b.data[i * n..(i + 1) * n];
                        let dot: S = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
                        let na2: S = ar.iter().map(|&x| x * x).sum();
                        let nb2: S = br.iter().map(|&y| y * y).sum();
                        let (na_, nb_) = (na2.sqrt(), nb2.sqrt());
                        let denom = na_ * nb_;
                        let cos = dot / denom;
                        if let Some(ia) = a.node {
                            let buf = slot(&mut grads, ia, m * n);
                            for j in 0..n {
                                buf[i * n + j] += g[i] * (br[j] / denom - cos * ar[j] / na2);
                            }
                        }
                        if let Some(ib) = b.node {
                            let buf = slot(&mut grads, ib, m * n);
                            for j in 0..n {
                                buf[i * n + j] += g[i] * (ar[j] / denom - cos * br[j] / nb2);
                            }
                        }
                    }
                }
                Op::Sum { a, len } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, *len);
                        for o in buf.iter_mut() {
                            *o += g[0];
                        }
                    }
                }
                Op::Mean { a, len } => {
                    if let Some(ia) = *a {
                        let share = g[0] / S::real(*len as f64);
                        let buf = slot(&mut grads, ia, *len);
                        for o in buf.iter_mut() {
                            *o += share;
                        }
                    }
                }
                Op::SumCols { a, rows, cols } => {
                    if let Some(ia) = *a {
                        let buf = slot(&mut grads, ia, rows * cols);
                        for i in 0..*rows {
                            for j in 0..*cols {
                                buf[i * cols + j] += g[i];
                            }
                        }
                    }
                }
            }
            if keep {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            tape_id: self.tape_id(),
            grads,
        })
    }

    fn tape_id(&self) -> u64 {
        self.id
    }
}

fn slot<S: Scalar>(grads: &mut [Option<Vec<S>>], id: usize, len: usize) -> &mut Vec<S> {
    let entry = &mut grads[id];
    if entry.is_none() {
        *entry = Some(vec![S::zero(); len]);
    }
    entry.as_mut().unwrap()
}

fn add_into<S: Scalar>(out: &mut [S], g: &[S]) {
    for (o, &gi) in out.iter_mut().zip(g) {
        *o += gi;
    }
}
