use rand::Rng;

use super::ops::{dsigmoid_from_output, dtanh_from_output, matvec_add, matvec_t_add, outer_add, sigmoid};
use super::param::Param;
use crate::error::{Error, Result};
use crate::Scalar;

/// Hidden and cell vectors of a long short-term memory unit.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedCellState<F> {
    pub hidden: Vec<F>,
    pub cell: Vec<F>,
}

impl<F: Scalar> GatedCellState<F> {
    pub fn zeros(hidden: usize) -> Self {
        GatedCellState {
            hidden: vec![F::zero(); hidden],
            cell: vec![F::zero(); hidden],
        }
    }
}

/// Long short-term memory cell.
///
/// `weight` is `4H × (I + H)` acting on `[input ; hidden]`, `bias` is `4H × 1`.
/// Row blocks are ordered input gate, forget gate, candidate, output gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedCell<F> {
    pub input: usize,
    pub hidden: usize,
    pub weight: Param<F>,
    pub bias: Param<F>,
}

/// Forward intermediates needed by [`GatedCell::backward`].
#[derive(Clone, Debug)]
pub struct CellCache<F> {
    xh: Vec<F>,
    cell_prev: Vec<F>,
    // i | f | g | o, each of length H, post-activation
    gates: Vec<F>,
    tanh_cell: Vec<F>,
}

/// Gradients flowing out of one backward step.
#[derive(Clone, Debug)]
pub struct CellGrads<F> {
    pub input: Vec<F>,
    pub hidden: Vec<F>,
    pub cell: Vec<F>,
}

impl<F: Scalar> GatedCell<F> {
    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        GatedCell {
            input,
            hidden,
            weight: Param::zeros(format!("{name}.weight"), 4 * hidden, input + hidden),
            bias: Param::zeros(format!("{name}.bias"), 4 * hidden, 1),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        GatedCell {
            input,
            hidden,
            weight: Param::uniform(format!("{name}.weight"), 4 * hidden, input + hidden, scale, rng),
            bias: Param::uniform(format!("{name}.bias"), 4 * hidden, 1, scale, rng),
        }
    }

    fn check(&self, state: &GatedCellState<F>, x: &[F]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Dimension {
                context: "gated cell input",
                expected: self.input,
                got: x.len(),
            });
        }
        if state.hidden.len() != self.hidden || state.cell.len() != self.hidden {
            return Err(Error::Dimension {
                context: "gated cell state",
                expected: self.hidden,
                got: state.hidden.len().max(state.cell.len()),
            });
        }
        Ok(())
    }

    pub fn step(&self, state: &GatedCellState<F>, x: &[F]) -> Result<GatedCellState<F>> {
        self.forward(state, x).map(|(s, _)| s)
    }

    pub fn forward(
        &self,
        state: &GatedCellState<F>,
        x: &[F],
    ) -> Result<(GatedCellState<F>, CellCache<F>)> {
        self.check(state, x)?;
        let h = self.hidden;
        let mut xh = Vec::with_capacity(self.input + h);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&state.hidden);

        let mut gates = self.bias.values.clone();
        matvec_add(&self.weight.values, 4 * h, self.input + h, &xh, &mut gates);
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * h..3 * h).contains(&k) {
                z.tanh()
            } else {
                sigmoid(*z)
            };
        }

        let (i, rest) = gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);
        let mut cell = Vec::with_capacity(h);
        let mut tanh_cell = Vec::with_capacity(h);
        let mut hidden = Vec::with_capacity(h);
        for k in 0..h {
            let c = f[k] * state.cell[k] + i[k] * g[k];
            let tc = c.tanh();
            cell.push(c);
            tanh_cell.push(tc);
            hidden.push(o[k] * tc);
        }
        let cache = CellCache {
            xh,
            cell_prev: state.cell.clone(),
            gates,
            tanh_cell,
        };
        Ok((GatedCellState { hidden, cell }, cache))
    }

    /// Backpropagates `d_hidden`/`d_cell` (gradients w.r.t. this step's outputs)
    /// through one step, accumulating into `weight.grad` and `bias.grad`.
    pub fn backward(&mut self, cache: &CellCache<F>, d_hidden: &[F], d_cell: &[F]) -> CellGrads<F> {
        let h = self.hidden;
        let (i, rest) = cache.gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);

        let mut dpre = vec![F::zero(); 4 * h];
        let mut d_cell_prev = vec![F::zero(); h];
        for k in 0..h {
            let tc = cache.tanh_cell[k];
            let dc = d_cell[k] + d_hidden[k] * o[k] * dtanh_from_output(tc);
            dpre[k] = dc * g[k] * dsigmoid_from_output(i[k]);
            dpre[h + k] = dc * cache.cell_prev[k] * dsigmoid_from_output(f[k]);
            dpre[2 * h + k] = dc * i[k] * dtanh_from_output(g[k]);
            dpre[3 * h + k] = d_hidden[k] * tc * dsigmoid_from_output(o[k]);
            d_cell_prev[k] = dc * f[k];
        }

        let cols = self.input + h;
        outer_add(&mut self.weight.grad, cols, &dpre, &cache.xh);
        for (b, &d) in self.bias.grad.iter_mut().zip(&dpre) {
            *b += d;
        }
        let mut dxh = vec![F::zero(); cols];
        matvec_t_add(&self.weight.values, 4 * h, cols, &dpre, &mut dxh);
        let d_hidden_prev = dxh.split_off(self.input);
        CellGrads {
            input: dxh,
            hidden: d_hidden_prev,
            cell: d_cell_prev,
        }
    }

    pub fn params(&self) -> [&Param<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
