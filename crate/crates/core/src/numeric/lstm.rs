//! LSTM cell with gates stacked as `[i | f | o | g]` along the column axis:
//!
//! ```text
//! i = σ(x W_i + h U_i + b_i)    f = σ(x W_f + h U_f + b_f)
//! o = σ(x W_o + h U_o + b_o)    g = tanh(x W_g + h U_g + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{init_uniform, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers `{prefix}.W`, `{prefix}.U` and `{prefix}.b`. The forget
    /// gate bias starts at 1.
    pub fn register<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{prefix}.W"), init_uniform(rng, &[input, 4 * hidden], input));
        let u = store.add(format!("{prefix}.U"), init_uniform(rng, &[hidden, 4 * hidden], hidden));
        let mut bias = vec![F::zero(); 4 * hidden];
        for x in &mut bias[hidden..2 * hidden] {
            *x = F::one();
        }
        let b = store.add(format!("{prefix}.b"), Tensor::new(vec![4 * hidden], bias).expect("bias dims"));
        LstmParams { w, u, b, input, hidden }
    }

    /// Looks the three tensors up by name and checks their shapes.
    pub fn lookup<F: Scalar>(store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .find(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Format(format!("missing parameter {prefix}.{suffix}")))
        };
        let (w, u, b) = (find("W")?, find("U")?, find("b")?);
        let wd = store.get(w).value.dims().to_vec();
        let hidden = store.get(u).value.dims()[0];
        if wd.len() != 2 || wd[1] != 4 * hidden || store.get(u).value.dims() != [hidden, 4 * hidden] || store.get(b).value.len() != 4 * hidden {
            return Err(Error::Format(format!("inconsistent LSTM shapes under {prefix}")));
        }
        Ok(LstmParams {
            w,
            u,
            b,
            input: wd[0],
            hidden,
        })
    }

    pub fn bind<'a, F: Scalar>(&self, g: &mut Graph<'a, F>, store: &'a ParamStore<F>) -> Result<BoundLstm> {
        Ok(BoundLstm {
            w: g.param(store, self.w)?,
            u: g.param(store, self.u)?,
            b: g.param(store, self.b)?,
            hidden: self.hidden,
        })
    }
}

/// LSTM weights as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM step over a batch: `x` is `B x input`, `h` and `c` are `B x hidden`.
pub fn lstm_cell<F: Scalar>(g: &mut Graph<'_, F>, p: &BoundLstm, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hd = p.hidden;
    let xw = g.matmul(x, p.w)?;
    let hu = g.matmul(h, p.u)?;
    let z = g.add(xw, hu)?;
    let z = g.add_bias(z, p.b)?;
    let zi = g.slice_cols(z, 0, hd)?;
    let zf = g.slice_cols(z, hd, hd)?;
    let zo = g.slice_cols(z, 2 * hd, hd)?;
    let zg = g.slice_cols(z, 3 * hd, hd)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let gg = g.tanh(zg)?;
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next)?;
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs an LSTM over `inputs` (one `B x input` node per position) from zero
/// state. `lengths[b]` gives the valid prefix of row `b`; past it the state
/// is carried through unchanged. Outputs are indexed by input position in
/// both directions.
pub fn run_lstm<F: Scalar>(
    g: &mut Graph<'_, F>,
    p: &BoundLstm,
    inputs: &[Var],
    lengths: &[usize],
    reverse: bool,
) -> Result<Vec<Var>> {
    let batch = lengths.len();
    let steps = inputs.len();
    let mut h = g.constant(Tensor::zeros(&[batch, p.hidden]))?;
    let mut c = g.constant(Tensor::zeros(&[batch, p.hidden]))?;
    let mut outputs = vec![h; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let (hn, cn) = lstm_cell(g, p, inputs[t], h, c)?;
        if lengths.iter().all(|&n| t < n) {
            h = hn;
            c = cn;
        } else {
            let keep: Vec<F> = lengths.iter().map(|&n| if t < n { F::one() } else { F::zero() }).collect();
            let hold: Vec<F> = keep.iter().map(|&k| F::one() - k).collect();
            let keep = g.constant(Tensor::new(vec![batch, 1], keep)?)?;
            let hold = g.constant(Tensor::new(vec![batch, 1], hold)?)?;
            h = masked_update(g, hn, h, keep, hold)?;
            c = masked_update(g, cn, c, keep, hold)?;
        }
        outputs[t] = h;
    }
    Ok(outputs)
}

fn masked_update<F: Scalar>(g: &mut Graph<'_, F>, new: Var, old: Var, keep: Var, hold: Var) -> Result<Var> {
    let a = g.scale_rows(new, keep)?;
    let b = g.scale_rows(old, hold)?;
    g.add(a, b)
}

/// Forward and backward passes concatenated per position (`B x 2·hidden`).
pub fn run_bilstm<F: Scalar>(
    g: &mut Graph<'_, F>,
    fwd: &BoundLstm,
    bwd: &BoundLstm,
    inputs: &[Var],
    lengths: &[usize],
) -> Result<Vec<Var>> {
    let f = run_lstm(g, fwd, inputs, lengths, false)?;
    let b = run_lstm(g, bwd, inputs, lengths, true)?;
    f.into_iter().zip(b).map(|(f, b)| g.concat(&[f, b], 1)).collect()
}
