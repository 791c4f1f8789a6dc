use rand::Rng;

use super::param::Param;
use crate::error::{Error, Result};
use crate::Scalar;

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn tanh<F: Scalar>(x: F) -> F {
    x.tanh()
}

/// d sigmoid / dx written in terms of the output `s`.
#[inline]
pub fn dsigmoid_from_output<F: Scalar>(s: F) -> F {
    s * (F::one() - s)
}

/// d tanh / dx written in terms of the output `t`.
#[inline]
pub fn dtanh_from_output<F: Scalar>(t: F) -> F {
    F::one() - t * t
}

/// Guarded Bernoulli log-probability of `outcome` under keep-probability `p`.
///
/// `p` is clamped to `[floor, 1 - floor]` first. Returns the log-probability
/// and its derivative with respect to the logit that produced `p`; the
/// derivative is zero wherever the clamp is active.
#[inline]
pub fn bernoulli_log<F: Scalar>(p: F, outcome: bool) -> (F, F) {
    let floor = F::prob_floor();
    let hi = F::one() - floor;
    let clamped = p < floor || p > hi;
    let pc = p.max(floor).min(hi);
    let (lp, dz) = if outcome {
        (pc.ln(), F::one() - pc)
    } else {
        ((F::one() - pc).ln(), -pc)
    };
    (lp, if clamped { F::zero() } else { dz })
}

pub fn hadamard<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

pub fn concat<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `out += W x` for row-major `W` of shape `rows × cols`.
#[inline]
pub fn matvec_add<F: Scalar>(w: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = F::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_t_add<F: Scalar>(w: &[F], rows: usize, cols: usize, dy: &[F], dx: &mut [F]) {
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g.is_zero() {
            continue;
        }
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += a * g;
        }
    }
}

/// `G += dy xᵀ`.
#[inline]
pub fn outer_add<F: Scalar>(grad: &mut [F], cols: usize, dy: &[F], x: &[F]) {
    debug_assert_eq!(x.len(), cols);
    for (&g, row) in dy.iter().zip(grad.chunks_exact_mut(cols)) {
        if g.is_zero() {
            continue;
        }
        for (r, &xv) in row.iter_mut().zip(x) {
            *r += g * xv;
        }
    }
}

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Scalar> Affine<F> {
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Affine {
            weight: Param::zeros(format!("{name}.weight"), output, input),
            bias: Param::zeros(format!("{name}.bias"), output, 1),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Affine {
            weight: Param::uniform(format!("{name}.weight"), output, input, scale, rng),
            bias: Param::uniform(format!("{name}.bias"), output, 1, scale, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "affine input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut y = self.bias.values.clone();
        matvec_add(&self.weight.values, self.output_dim(), self.input_dim(), x, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dL/dx`.
    pub fn backward(&mut self, x: &[F], dy: &[F]) -> Vec<F> {
        let (rows, cols) = (self.output_dim(), self.input_dim());
        outer_add(&mut self.weight.grad, cols, dy, x);
        for (g, &d) in self.bias.grad.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![F::zero(); cols];
        matvec_t_add(&self.weight.values, rows, cols, dy, &mut dx);
        dx
    }

    pub fn params(&self) -> [&Param<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::{grad_check, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_known_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(10.0f64) - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!(sigmoid(-800.0f64).is_finite());
        assert!(sigmoid(800.0f64).is_finite());
    }

    #[test]
    fn bernoulli_log_clamps() {
        let (lp, dz) = bernoulli_log(1.0f64, true);
        assert!(lp <= 0.0 && lp > -1e-11);
        assert_eq!(dz, 0.0);
        let (lp, _) = bernoulli_log(1.0f64, false);
        assert!((lp - (1e-12f64).ln()).abs() < 1e-3);
        let (lp, dz) = bernoulli_log(0.25f64, false);
        assert!((lp - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(dz, -0.25);
    }

    fn check_scalar_fn(f: fn(f64) -> f64, df: fn(f64) -> f64, at: &[f64]) {
        for &x in at {
            let mut store = vec![Param::from_values("p", 1, 1, vec![x])];
            let rep = grad_check(
                &mut store,
                |s: &mut Vec<Param<f64>>| {
                    let v = s[0].values[0];
                    s[0].grad[0] += df(v);
                    Ok(f(v))
                },
                1e-5,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-6, "x={x} err={}", rep.max_rel_error);
        }
    }

    #[test]
    fn sigmoid_and_tanh_pass_grad_check() {
        let pts = [-3.0, -0.7, 0.0, 0.4, 2.5];
        check_scalar_fn(sigmoid, |x| dsigmoid_from_output(sigmoid(x)), &pts);
        check_scalar_fn(tanh, |x| dtanh_from_output(tanh(x)), &pts);
    }

    #[test]
    fn affine_hadamard_concat_pass_grad_check() {
        // loss = Σ_j c_j · (concat(W a + b, a) ⊙ e)_j with fixed c, e
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let aff = Affine::<f64>::uniform("aff", 3, 4, 1.0, &mut rng);
        let a = Param::uniform("a", 3, 1, 1.0, &mut rng);
        let e: Vec<f64> = (0..7).map(|i| 0.3 * i as f64 - 1.0).collect();
        let c: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let mut store = vec![aff.weight, aff.bias, a];
        let rep = grad_check(
            &mut store,
            |s: &mut Vec<Param<f64>>| {
                let mut aff = Affine {
                    weight: s[0].clone(),
                    bias: s[1].clone(),
                };
                let x = s[2].values.clone();
                let y = aff.forward(&x)?;
                let z = hadamard(&concat(&y, &x), &e);
                let loss: f64 = z.iter().zip(&c).map(|(a, b)| a * b).sum();
                let dz: Vec<f64> = c.iter().zip(&e).map(|(a, b)| a * b).collect();
                let mut dx = aff.backward(&x, &dz[..4]);
                for (d, &g) in dx.iter_mut().zip(&dz[4..]) {
                    *d += g;
                }
                for (g, v) in s[0].grad.iter_mut().zip(&aff.weight.grad) {
                    *g += *v;
                }
                for (g, v) in s[1].grad.iter_mut().zip(&aff.bias.grad) {
                    *g += *v;
                }
                for (g, v) in s[2].grad.iter_mut().zip(&dx) {
                    *g += *v;
                }
                Ok(loss)
            },
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        assert_eq!(rep.checked, store.num_values());
    }

    proptest::proptest! {
        #[test]
        fn sigmoid_tanh_open_ranges(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            proptest::prop_assert!(s > 0.0 && s < 1.0);
            let t = tanh(x * 0.5);
            proptest::prop_assert!(t > -1.0 && t < 1.0);
        }
    }
}
