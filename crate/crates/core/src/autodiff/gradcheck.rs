//! Finite-difference verification of recorded gradients.

use super::{Tape, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Central-difference gradient of a scalar-valued tensor function.
pub fn numeric_gradient<S: Scalar>(
    f: &dyn Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
    x: &Tensor<S>,
    h: f64,
) -> Result<Vec<f64>> {
    let hs = S::real(h);
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut lo = x.clone();
        lo.data_mut()[i] -= hs;
        let mut hi = x.clone();
        hi.data_mut()[i] += hs;
        let tape = Tape::inference();
        let f_hi = f(&tape, &hi)?.scalar()?.as_f64();
        let f_lo = f(&tape, &lo)?.scalar()?.as_f64();
        grad.push((f_hi - f_lo) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest relative gap between analytic and numeric gradients, using
/// `|a - n| / max(1, |a|, |n|)` per component.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// True when the recorded gradient of `f` at `x` matches central differences
/// with step `h` to relative tolerance `tol`.
pub fn grad_check<S: Scalar>(
    f: impl Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
    x: &Tensor<S>,
    h: f64,
    tol: f64,
) -> Result<bool> {
    Ok(grad_check_error(&f, x, h)? <= tol)
}

/// Worst relative error of the recorded gradient of `f` at `x`.
pub fn grad_check_error<S: Scalar>(
    f: &impl Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
    x: &Tensor<S>,
    h: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let leaf = tape.watch(&x.clone().with_grad());
    let y = f(&tape, &leaf)?;
    let grads = tape.backward(&y)?;
    let analytic: Vec<f64> = grads
        .get(&leaf)
        .expect("watched leaf")
        .iter()
        .map(|g| g.as_f64())
        .collect();
    let numeric = numeric_gradient(&|t, v| f(t, v), x, h)?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Outcome of one primitive's finite-difference sweep.
#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub draws: usize,
    pub pass: bool,
}

fn uniform<S: Scalar>(rng: &mut ChaCha12Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::real(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Magnitude in [lo_abs, hi_abs] with random sign: keeps clear of zero.
fn away_from_zero<S: Scalar>(
    rng: &mut ChaCha12Rng,
    shape: &[usize],
    lo_abs: f64,
    hi_abs: f64,
) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n)
        .map(|_| {
            let mag = rng.random_range(lo_abs..hi_abs);
            S::real(if rng.random::<bool>() { mag } else { -mag })
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

type Fun<S> = Box<dyn Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>>>;

/// Runs `draws` random finite-difference checks for every differentiable
/// primitive and reports the worst relative error per primitive.
///
/// Inputs are drawn in [-1, 1]; kinked ops (relu, clamp) and singular ops
/// (div, log, norms) get inputs nudged away from their non-smooth points so
/// the central difference is meaningful. Dropout is checked with a mask that
/// is reseeded identically on every evaluation.
pub fn primitive_gradient_sweep<S: Scalar>(
    seed: u64,
    draws: usize,
    h: f64,
    tol: f64,
) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut results: Vec<PrimitiveCheck> = Vec::new();

    // reduce to a scalar through fixed random weights so sign errors cannot cancel
    fn weighted<S: Scalar>(t: &Tape<S>, out: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
        t.sum(&t.mul(out, w)?)
    }

    fn record<S: Scalar>(
        results: &mut Vec<PrimitiveCheck>,
        name: &'static str,
        x: Tensor<S>,
        f: Fun<S>,
        h: f64,
        tol: f64,
    ) -> Result<()> {
        let err = grad_check_error(&|t: &Tape<S>, v: &Tensor<S>| f(t, v), &x, h)?;
        match results.iter_mut().find(|r| r.name == name) {
            Some(r) => {
                r.max_rel_error = r.max_rel_error.max(err);
                r.draws += 1;
                r.pass = r.pass && err <= tol;
            }
            None => results.push(PrimitiveCheck {
                name,
                max_rel_error: err,
                draws: 1,
                pass: err <= tol,
            }),
        }
        Ok(())
    }

    for _ in 0..draws {
        let w45 = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
        let w41 = uniform::<S>(&mut rng, &[4, 1], -1.0, 1.0);

        // matmul, both operands
        {
            let b = uniform::<S>(&mut rng, &[4, 2], -1.0, 1.0);
            let w = uniform::<S>(&mut rng, &[3, 2], -1.0, 1.0);
            let x = uniform::<S>(&mut rng, &[3, 4], -1.0, 1.0);
            record(&mut results, "matmul", x, Box::new(move |t, v| weighted(t, &t.matmul(v, &b)?, &w)), h, tol)?;
            let a = uniform::<S>(&mut rng, &[3, 4], -1.0, 1.0);
            let w = uniform::<S>(&mut rng, &[3, 2], -1.0, 1.0);
            let x = uniform::<S>(&mut rng, &[4, 2], -1.0, 1.0);
            record(&mut results, "matmul", x, Box::new(move |t, v| weighted(t, &t.matmul(&a, v)?, &w)), h, tol)?;
        }
        {
            let w = uniform::<S>(&mut rng, &[5, 4], -1.0, 1.0);
            let x = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            record(&mut results, "transpose", x, Box::new(move |t, v| weighted(t, &t.transpose(v)?, &w)), h, tol)?;
        }
        // elementwise binary ops, both operands
        for which in 0..4usize {
            let name = ["add", "sub", "mul", "div"][which];
            let other = if which == 3 {
                away_from_zero::<S>(&mut rng, &[4, 5], 0.3, 1.3)
            } else {
                uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0)
            };
            let w = w45.clone();
            let f: Fun<S> = match which {
                0 => Box::new(move |t, v| weighted(t, &t.add(v, &other)?, &w)),
                1 => Box::new(move |t, v| weighted(t, &t.sub(v, &other)?, &w)),
                2 => Box::new(move |t, v| weighted(t, &t.mul(v, &other)?, &w)),
                _ => Box::new(move |t, v| weighted(t, &t.div(v, &other)?, &w)),
            };
            record(&mut results, name, uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), f, h, tol)?;

            let first = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            let w = w45.clone();
            let f2: Fun<S> = match which {
                0 => Box::new(move |t, v| weighted(t, &t.add(&first, v)?, &w)),
                1 => Box::new(move |t, v| weighted(t, &t.sub(&first, v)?, &w)),
                2 => Box::new(move |t, v| weighted(t, &t.mul(&first, v)?, &w)),
                _ => Box::new(move |t, v| weighted(t, &t.div(&first, v)?, &w)),
            };
            let x2 = if which == 3 {
                away_from_zero::<S>(&mut rng, &[4, 5], 0.3, 1.3)
            } else {
                uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0)
            };
            record(&mut results, name, x2, f2, h, tol)?;
        }
        {
            let w = w45.clone();
            record(&mut results, "scale", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.scale(v, -1.7)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "add_scalar", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.add_scalar(v, 0.9)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "neg", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.neg(v)?, &w)), h, tol)?;
        }
        // broadcasting ops, both operands
        {
            let r = uniform::<S>(&mut rng, &[5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "add_row", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.add_row(v, &r)?, &w)), h, tol)?;
            let a = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "add_row", uniform::<S>(&mut rng, &[5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.add_row(&a, v)?, &w)), h, tol)?;

            let r = uniform::<S>(&mut rng, &[5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "mul_row", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.mul_row(v, &r)?, &w)), h, tol)?;
            let a = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "mul_row", uniform::<S>(&mut rng, &[5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.mul_row(&a, v)?, &w)), h, tol)?;

            let c = uniform::<S>(&mut rng, &[4, 1], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "mul_col", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.mul_col(v, &c)?, &w)), h, tol)?;
            let a = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "mul_col", uniform::<S>(&mut rng, &[4, 1], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.mul_col(&a, v)?, &w)), h, tol)?;

            let c = away_from_zero::<S>(&mut rng, &[4, 1], 0.3, 1.3);
            let w = w45.clone();
            record(&mut results, "div_col", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.div_col(v, &c)?, &w)), h, tol)?;
            let a = uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "div_col", away_from_zero::<S>(&mut rng, &[4, 1], 0.3, 1.3), Box::new(move |t, v| weighted(t, &t.div_col(&a, v)?, &w)), h, tol)?;
        }
        // structural ops
        {
            let p = uniform::<S>(&mut rng, &[2, 4], -1.0, 1.0);
            let w = uniform::<S>(&mut rng, &[3, 4], -1.0, 1.0);
            record(&mut results, "concat_rows", uniform::<S>(&mut rng, &[1, 4], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.concat(&[&p, v], 0)?, &w)), h, tol)?;
            let p = uniform::<S>(&mut rng, &[4, 2], -1.0, 1.0);
            let w = w45.clone();
            record(&mut results, "concat_cols", uniform::<S>(&mut rng, &[4, 3], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.concat(&[&p, v], 1)?, &w)), h, tol)?;
            let w = uniform::<S>(&mut rng, &[2, 6], -1.0, 1.0);
            record(&mut results, "slice_rows", uniform::<S>(&mut rng, &[4, 6], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.slice(v, 0, 1, 3)?, &w)), h, tol)?;
            let w = uniform::<S>(&mut rng, &[4, 3], -1.0, 1.0);
            record(&mut results, "slice_cols", uniform::<S>(&mut rng, &[4, 6], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.slice(v, 1, 2, 5)?, &w)), h, tol)?;
        }
        // nonlinearities
        {
            let w = w45.clone();
            record(&mut results, "relu", away_from_zero::<S>(&mut rng, &[4, 5], 0.05, 1.0), Box::new(move |t, v| weighted(t, &t.relu(v)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "gelu", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.gelu(v)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "sigmoid", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.sigmoid(v)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "exp", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.exp(v)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "log", uniform::<S>(&mut rng, &[4, 5], 0.2, 1.2), Box::new(move |t, v| weighted(t, &t.log(v)?, &w)), h, tol)?;
            // clamp band +-0.6; samples either inside [-0.52, 0.52] or outside [0.65, 0.68]
            let data: Vec<S> = (0..20)
                .map(|_| {
                    let mag: f64 = rng.random_range(0.0..0.55);
                    let mag = if mag > 0.52 { mag + 0.13 } else { mag };
                    S::real(if rng.random::<bool>() { mag } else { -mag })
                })
                .collect();
            let x = Tensor::from_vec(&[4, 5], data).unwrap();
            let w = w45.clone();
            record(&mut results, "clamp", x, Box::new(move |t, v| weighted(t, &t.clamp(v, -0.6, 0.6)?, &w)), h, tol)?;
        }
        // normalizations and reductions
        {
            let w = w45.clone();
            record(&mut results, "softmax_rows", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.softmax(v, 1)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "softmax_cols", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.softmax(v, 0)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "layer_norm", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.layer_norm(v, 1e-5)?, &w)), h, tol)?;
            let w = w45.clone();
            record(&mut results, "dropout", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| {
                let mut mask_rng = ChaCha12Rng::seed_from_u64(11);
                weighted(t, &t.dropout(v, 0.4, true, &mut mask_rng)?, &w)
            }), h, tol)?;

            let w = w41.clone();
            record(&mut results, "l2_norm", away_from_zero::<S>(&mut rng, &[4, 5], 0.2, 1.0), Box::new(move |t, v| weighted(t, &t.l2_norm(v)?, &w)), h, tol)?;
            let b = away_from_zero::<S>(&mut rng, &[4, 5], 0.2, 1.0);
            let w = w41.clone();
            record(&mut results, "cosine_similarity", away_from_zero::<S>(&mut rng, &[4, 5], 0.2, 1.0), Box::new(move |t, v| weighted(t, &t.cosine_similarity(v, &b)?, &w)), h, tol)?;
            let a = away_from_zero::<S>(&mut rng, &[4, 5], 0.2, 1.0);
            let w = w41.clone();
            record(&mut results, "cosine_similarity", away_from_zero::<S>(&mut rng, &[4, 5], 0.2, 1.0), Box::new(move |t, v| weighted(t, &t.cosine_similarity(&a, v)?, &w)), h, tol)?;

            record(&mut results, "sum", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| t.sum(v)), h, tol)?;
            record(&mut results, "mean", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| t.mean(v)), h, tol)?;
            let w = w41.clone();
            record(&mut results, "sum_cols", uniform::<S>(&mut rng, &[4, 5], -1.0, 1.0), Box::new(move |t, v| weighted(t, &t.sum_cols(v)?, &w)), h, tol)?;
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_passes() {
        let x = Tensor::<f64>::from_vec(&[8], vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.5, -0.4, 0.8]).unwrap();
        let ok = grad_check(
            |t: &Tape<f64>, v: &Tensor<f64>| t.sum(&t.mul(v, v)?),
            &x,
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn doubled_gradient_is_rejected() {
        // analytic gradient off by 2x must fail the comparison
        let analytic = [2.0, 4.0, 6.0];
        let numeric = [1.0, 2.0, 3.0];
        assert!(max_rel_error(&analytic, &numeric) > 1e-4);
    }

    #[test]
    fn cosine_against_fixed_vector_passes() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![0.9, -0.3, 0.4, 0.7]).unwrap();
        let fixed = Tensor::<f64>::from_vec(&[1, 4], vec![0.2, 0.8, -0.5, 0.1]).unwrap();
        let ok = grad_check(
            move |t: &Tape<f64>, v: &Tensor<f64>| t.sum(&t.cosine_similarity(v, &fixed)?),
            &x,
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn every_primitive_passes_finite_differences() {
        let checks = primitive_gradient_sweep::<f64>(42, 20, 1e-3, 1e-4).unwrap();
        assert!(checks.len() >= 25, "expected full primitive coverage, got {}", checks.len());
        for c in &checks {
            assert!(c.draws >= 20, "{} only ran {} draws", c.name, c.draws);
            assert!(c.pass, "{} failed: max rel error {:.3e}", c.name, c.max_rel_error);
        }
    }
}
