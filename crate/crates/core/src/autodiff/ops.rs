//! Forward implementations of the differentiable primitives.
//!
//! Every op validates shapes, computes the forward value, rejects non-finite
//! outputs, and records what backward needs (input node ids plus whichever
//! buffers the gradient rule reads).

use super::{require_2d, same_shape, Arg, Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use std::rc::Rc;

#[derive(Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Matmul {
        a: Arg<S>,
        b: Arg<S>,
    },
    Transpose {
        a: Arg<S>,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
    },
    Mul {
        a: Arg<S>,
        b: Arg<S>,
    },
    Div {
        a: Arg<S>,
        b: Arg<S>,
    },
    Scale {
        a: Option<usize>,
        c: S,
    },
    AddScalar {
        a: Option<usize>,
    },
    AddRow {
        a: Option<usize>,
        r: Option<usize>,
        rows: usize,
        cols: usize,
    },
    MulRow {
        a: Arg<S>,
        r: Arg<S>,
    },
    MulCol {
        a: Arg<S>,
        c: Arg<S>,
    },
    DivCol {
        a: Arg<S>,
        c: Arg<S>,
    },
    Concat {
        parts: Vec<(Option<usize>, usize, usize)>,
        axis: usize,
    },
    Slice {
        a: Arg<S>,
        axis: usize,
        start: usize,
        out_rows: usize,
        out_cols: usize,
    },
    Relu {
        a: Option<usize>,
        out: Rc<Vec<S>>,
    },
    Gelu {
        a: Arg<S>,
    },
    Sigmoid {
        a: Option<usize>,
        out: Rc<Vec<S>>,
    },
    Exp {
        a: Option<usize>,
        out: Rc<Vec<S>>,
    },
    Log {
        a: Arg<S>,
    },
    Clamp {
        a: Arg<S>,
        lo: S,
        hi: S,
    },
    Softmax {
        a: Option<usize>,
        axis: usize,
        out: Rc<Vec<S>>,
        rows: usize,
        cols: usize,
    },
    LayerNorm {
        a: Option<usize>,
        normed: Rc<Vec<S>>,
        inv_std: Vec<S>,
        rows: usize,
        cols: usize,
    },
    Dropout {
        a: Option<usize>,
        mask: Rc<Vec<S>>,
    },
    L2Norm {
        a: Arg<S>,
        out: Rc<Vec<S>>,
    },
    Cosine {
        a: Arg<S>,
        b: Arg<S>,
    },
    Sum {
        a: Option<usize>,
        len: usize,
    },
    Mean {
        a: Option<usize>,
        len: usize,
    },
    SumCols {
        a: Option<usize>,
        rows: usize,
        cols: usize,
    },
}

/// `c = alpha * A·B + beta * c` where either operand may be read transposed.
pub(crate) fn gemm_into<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    a_t: bool,
    b: &[S],
    b_t: bool,
    beta: S,
    c: &mut [S],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        S::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<S: Scalar> Tape<S> {
    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = require_2d("matmul", a)?;
        let (k2, n) = require_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", a.shape(), b.shape()),
            });
        }
        let mut out = vec![S::zero(); m * n];
        gemm_into(m, k, n, S::one(), a.data(), false, b.data(), false, S::zero(), &mut out);
        let tracked = a.node_on(self).is_some() || b.node_on(self).is_some();
        self.output(
            "matmul",
            vec![m, n],
            out,
            || Op::Matmul {
                a: a.arg(self),
                b: b.arg(self),
            },
            tracked,
        )
    }

    pub fn transpose(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("transpose", a)?;
        let ad = a.data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let tracked = a.node_on(self).is_some();
        self.output("transpose", vec![n, m], out, || Op::Transpose { a: a.arg(self) }, tracked)
    }

    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let (na, nb) = (a.node_on(self), b.node_on(self));
        self.output("add", a.shape().to_vec(), out, || Op::Add { a: na, b: nb }, na.is_some() || nb.is_some())
    }

    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let (na, nb) = (a.node_on(self), b.node_on(self));
        self.output("sub", a.shape().to_vec(), out, || Op::Sub { a: na, b: nb }, na.is_some() || nb.is_some())
    }

    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let tracked = a.node_on(self).is_some() || b.node_on(self).is_some();
        self.output(
            "mul",
            a.shape().to_vec(),
            out,
            || Op::Mul {
                a: a.arg(self),
                b: b.arg(self),
            },
            tracked,
        )
    }

    pub fn div(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("div", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
        let tracked = a.node_on(self).is_some() || b.node_on(self).is_some();
        self.output(
            "div",
            a.shape().to_vec(),
            out,
            || Op::Div {
                a: a.arg(self),
                b: b.arg(self),
            },
            tracked,
        )
    }

    pub fn scale(&self, a: &Tensor<S>, c: f64) -> Result<Tensor<S>> {
        let c = S::real(c);
        let out = a.data().iter().map(|&x| x * c).collect();
        let na = a.node_on(self);
        self.output("scale", a.shape().to_vec(), out, || Op::Scale { a: na, c }, na.is_some())
    }

    pub fn neg(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: &Tensor<S>, c: f64) -> Result<Tensor<S>> {
        let c = S::real(c);
        let out = a.data().iter().map(|&x| x + c).collect();
        let na = a.node_on(self);
        self.output("add_scalar", a.shape().to_vec(), out, || Op::AddScalar { a: na }, na.is_some())
    }

    /// Adds a length-n row vector to every row of an (m, n) matrix.
    pub fn add_row(&self, a: &Tensor<S>, r: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("add_row", a)?;
        if r.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                detail: format!("matrix {:?} vs row {:?}", a.shape(), r.shape()),
            });
        }
        let (ad, rd) = (a.data(), r.data());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] + rd[j]);
            }
        }
        let (na, nr) = (a.node_on(self), r.node_on(self));
        self.output(
            "add_row",
            vec![m, n],
            out,
            || Op::AddRow { a: na, r: nr, rows: m, cols: n },
            na.is_some() || nr.is_some(),
        )
    }

    /// Multiplies every row of an (m, n) matrix elementwise by a length-n row.
    pub fn mul_row(&self, a: &Tensor<S>, r: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("mul_row", a)?;
        if r.len() != n {
            return Err(Error::ShapeMismatch {
                op: "mul_row",
                detail: format!("matrix {:?} vs row {:?}", a.shape(), r.shape()),
            });
        }
        let (ad, rd) = (a.data(), r.data());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] * rd[j]);
            }
        }
        let tracked = a.node_on(self).is_some() || r.node_on(self).is_some();
        self.output(
            "mul_row",
            vec![m, n],
            out,
            || Op::MulRow {
                a: a.arg(self),
                r: r.arg(self),
            },
            tracked,
        )
    }

    /// Scales row i of an (m, n) matrix by the i-th entry of a column vector.
    pub fn mul_col(&self, a: &Tensor<S>, c: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("mul_col", a)?;
        if c.len() != m {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                detail: format!("matrix {:?} vs column {:?}", a.shape(), c.shape()),
            });
        }
        let (ad, cd) = (a.data(), c.data());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] * cd[i]);
            }
        }
        let tracked = a.node_on(self).is_some() || c.node_on(self).is_some();
        self.output(
            "mul_col",
            vec![m, n],
            out,
            || Op::MulCol {
                a: a.arg(self),
                c: c.arg(self),
            },
            tracked,
        )
    }

    /// Divides row i of an (m, n) matrix by the i-th entry of a column vector.
    pub fn div_col(&self, a: &Tensor<S>, c: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("div_col", a)?;
        if c.len() != m {
            return Err(Error::ShapeMismatch {
                op: "div_col",
                detail: format!("matrix {:?} vs column {:?}", a.shape(), c.shape()),
            });
        }
        let (ad, cd) = (a.data(), c.data());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] / cd[i]);
            }
        }
        let tracked = a.node_on(self).is_some() || c.node_on(self).is_some();
        self.output(
            "div_col",
            vec![m, n],
            out,
            || Op::DivCol {
                a: a.arg(self),
                c: c.arg(self),
            },
            tracked,
        )
    }

    /// Concatenates 2-D tensors along `axis` (0 = stack rows, 1 = widen rows).
    pub fn concat(&self, parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("{} parts, axis {axis}", parts.len()),
            });
        }
        let (r0, c0) = require_2d("concat", parts[0])?;
        let (mut rows, mut cols) = (r0, c0);
        for p in &parts[1..] {
            let (r, c) = require_2d("concat", p)?;
            if axis == 0 {
                if c != c0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        detail: format!("column counts differ: {c0} vs {c}"),
                    });
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        detail: format!("row counts differ: {r0} vs {r}"),
                    });
                }
                cols += c;
            }
        }
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for p in parts {
                out.extend_from_slice(p.data());
            }
        } else {
            for i in 0..rows {
                for p in parts {
                    let c = p.cols();
                    out.extend_from_slice(&p.data()[i * c..(i + 1) * c]);
                }
            }
        }
        let meta: Vec<(Option<usize>, usize, usize)> =
            parts.iter().map(|p| (p.node_on(self), p.rows(), p.cols())).collect();
        let tracked = meta.iter().any(|(n, _, _)| n.is_some());
        self.output("concat", vec![rows, cols], out, || Op::Concat { parts: meta, axis }, tracked)
    }

    /// Contiguous range `[start, end)` of rows (axis 0) or columns (axis 1).
    pub fn slice(&self, a: &Tensor<S>, axis: usize, start: usize, end: usize) -> Result<Tensor<S>> {
        let (m, n) = require_2d("slice", a)?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || start >= end || end > extent {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("axis {axis} range {start}..{end} of {:?}", a.shape()),
            });
        }
        let ad = a.data();
        let (out_rows, out_cols) = if axis == 0 { (end - start, n) } else { (m, end - start) };
        let mut out = Vec::with_capacity(out_rows * out_cols);
        if axis == 0 {
            out.extend_from_slice(&ad[start * n..end * n]);
        } else {
            for i in 0..m {
                out.extend_from_slice(&ad[i * n + start..i * n + end]);
            }
        }
        let tracked = a.node_on(self).is_some();
        self.output(
            "slice",
            vec![out_rows, out_cols],
            out,
            || Op::Slice {
                a: a.arg(self),
                axis,
                start,
                out_rows,
                out_cols,
            },
            tracked,
        )
    }

    pub fn relu(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = a.data().iter().map(|&x| if x > S::zero() { x } else { S::zero() }).collect();
        let na = a.node_on(self);
        let saved = Rc::new(out.clone());
        self.output("relu", a.shape().to_vec(), out, || Op::Relu { a: na, out: saved }, na.is_some())
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = a.data().iter().map(|&x| gelu_fwd(x)).collect();
        let tracked = a.node_on(self).is_some();
        self.output("gelu", a.shape().to_vec(), out, || Op::Gelu { a: a.arg(self) }, tracked)
    }

    pub fn sigmoid(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let one = S::one();
        let out: Vec<S> = a
            .data()
            .iter()
            .map(|&x| {
                // split by sign for numerical stability
                if x >= S::zero() {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            })
            .collect();
        let na = a.node_on(self);
        let saved = Rc::new(out.clone());
        self.output("sigmoid", a.shape().to_vec(), out, || Op::Sigmoid { a: na, out: saved }, na.is_some())
    }

    pub fn exp(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = a.data().iter().map(|&x| x.exp()).collect();
        let na = a.node_on(self);
        let saved = Rc::new(out.clone());
        self.output("exp", a.shape().to_vec(), out, || Op::Exp { a: na, out: saved }, na.is_some())
    }

    pub fn log(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = a.data().iter().map(|&x| x.ln()).collect();
        let tracked = a.node_on(self).is_some();
        self.output("log", a.shape().to_vec(), out, || Op::Log { a: a.arg(self) }, tracked)
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&self, a: &Tensor<S>, lo: f64, hi: f64) -> Result<Tensor<S>> {
        let (lo, hi) = (S::real(lo), S::real(hi));
        let out: Vec<S> = a.data().iter().map(|&x| x.max(lo).min(hi)).collect();
        let tracked = a.node_on(self).is_some();
        self.output(
            "clamp",
            a.shape().to_vec(),
            out,
            || Op::Clamp { a: a.arg(self), lo, hi },
            tracked,
        )
    }

    /// Softmax along rows (axis 1) or columns (axis 0) of a 2-D tensor;
    /// 1-D input is treated as one row.
    pub fn softmax(&self, a: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
        if axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                detail: format!("axis {axis}"),
            });
        }
        let (m, n) = (a.rows(), a.cols());
        let ad = a.data();
        let mut out = vec![S::zero(); m * n];
        let (outer, inner, os, is) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let mut mx = S::neg_infinity();
            for i in 0..inner {
                mx = mx.max(ad[o * os + i * is]);
            }
            let mut denom = S::zero();
            for i in 0..inner {
                let e = (ad[o * os + i * is] - mx).exp();
                out[o * os + i * is] = e;
                denom += e;
            }
            for i in 0..inner {
                out[o * os + i * is] /= denom;
            }
        }
        let na = a.node_on(self);
        let saved = Rc::new(out.clone());
        self.output(
            "softmax",
            a.shape().to_vec(),
            out,
            || Op::Softmax {
                a: na,
                axis,
                out: saved,
                rows: m,
                cols: n,
            },
            na.is_some(),
        )
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)` without affine
    /// terms; apply `mul_row`/`add_row` for a learned gain and bias.
    pub fn layer_norm(&self, a: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let (m, n) = require_2d("layer_norm", a)?;
        let eps = S::real(eps);
        let ad = a.data();
        let mut out = vec![S::zero(); m * n];
        let mut inv_std = vec![S::zero(); m];
        let n_s = S::real(n as f64);
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<S>() / n_s;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n_s;
            let inv = (var + eps).sqrt().recip();
            inv_std[i] = inv;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv;
            }
        }
        let na = a.node_on(self);
        let saved = Rc::new(out.clone());
        self.output(
            "layer_norm",
            vec![m, n],
            out,
            || Op::LayerNorm {
                a: na,
                normed: saved,
                inv_std,
                rows: m,
                cols: n,
            },
            na.is_some(),
        )
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1/(1-p)` so inference needs no rescaling. Identity when
    /// `train` is false or `p` is zero.
    pub fn dropout<R: Rng>(
        &self,
        a: &Tensor<S>,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "dropout probability",
                detail: format!("{p}"),
            });
        }
        if !train || p == 0.0 {
            return Ok(a.clone());
        }
        let keep = S::real(1.0 - p);
        let scale = keep.recip();
        let mask: Vec<S> = (0..a.len())
            .map(|_| if rng.random::<f64>() < p { S::zero() } else { scale })
            .collect();
        let out: Vec<S> = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let na = a.node_on(self);
        self.output(
            "dropout",
            a.shape().to_vec(),
            out,
            || Op::Dropout { a: na, mask: Rc::new(mask) },
            na.is_some(),
        )
    }

    /// Euclidean norm of each row: (m, n) -> (m, 1).
    pub fn l2_norm(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("l2_norm", a)?;
        let ad = a.data();
        let out: Vec<S> = (0..m)
            .map(|i| ad[i * n..(i + 1) * n].iter().map(|&x| x * x).sum::<S>().sqrt())
            .collect();
        let tracked = a.node_on(self).is_some();
        let saved = Rc::new(out.clone());
        self.output(
            "l2_norm",
            vec![m, 1],
            out,
            || Op::L2Norm { a: a.arg(self), out: saved },
            tracked,
        )
    }

    /// Row-wise cosine similarity of two equal-shape matrices: (m, n) -> (m, 1).
    pub fn cosine_similarity(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("cosine_similarity", a, b)?;
        let (m, n) = require_2d("cosine_similarity", a)?;
        let (ad, bd) = (a.data(), b.data());
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let (mut dot, mut na2, mut nb2) = (S::zero(), S::zero(), S::zero());
            for j in 0..n {
                let (x, y) = (ad[i * n + j], bd[i * n + j]);
                dot += x * y;
                na2 += x * x;
                nb2 += y * y;
            }
            out.push(dot / (na2.sqrt() * nb2.sqrt()));
        }
        let tracked = a.node_on(self).is_some() || b.node_on(self).is_some();
        self.output(
            "cosine_similarity",
            vec![m, 1],
            out,
            || Op::Cosine {
                a: a.arg(self),
                b: b.arg(self),
            },
            tracked,
        )
    }

    pub fn sum(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let s = a.data().iter().copied().sum::<S>();
        let na = a.node_on(self);
        let len = a.len();
        self.output("sum", vec![1], vec![s], || Op::Sum { a: na, len }, na.is_some())
    }

    pub fn mean(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let len = a.len();
        let s = a.data().iter().copied().sum::<S>() / S::real(len as f64);
        let na = a.node_on(self);
        self.output("mean", vec![1], vec![s], || Op::Mean { a: na, len }, na.is_some())
    }

    /// Row sums: (m, n) -> (m, 1).
    pub fn sum_cols(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = require_2d("sum_cols", a)?;
        let ad = a.data();
        let out: Vec<S> = (0..m).map(|i| ad[i * n..(i + 1) * n].iter().copied().sum()).collect();
        let na = a.node_on(self);
        self.output(
            "sum_cols",
            vec![m, 1],
            out,
            || Op::SumCols { a: na, rows: m, cols: n },
            na.is_some(),
        )
    }
}

pub(crate) fn gelu_fwd<S: Scalar>(x: S) -> S {
    let half = S::real(0.5);
    let c = S::real(0.7978845608028654); // sqrt(2/pi)
    let k = S::real(0.044715);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::real(0.5);
    let c = S::real(0.7978845608028654);
    let k = S::real(0.044715);
    let three = S::real(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * k * x * x)
}
