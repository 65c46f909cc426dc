//! Composite layers built from graph primitives.

use crate::error::Result;
use crate::scalar::Scalar;

use super::graph::{Graph, Var};

/// `x · w + b` with `w: in×out` and `b: 1×out`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Graph handles of one LSTM layer. Gate order in the fused weight
/// columns is input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `in×4H`
    pub w_ih: Var,
    /// `H×4H`
    pub w_hh: Var,
    /// `1×4H`
    pub bias: Var,
}

/// One LSTM step on `1×in` input `x` with `1×H` states.
pub fn lstm_cell<T: Scalar>(g: &mut Graph<T>, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let xi = g.matmul(x, p.w_ih)?;
    lstm_cell_projected(g, xi, h_prev, c_prev, p)
}

/// LSTM step where the input projection `x · w_ih` is already computed.
/// Running the input projection for a whole sequence as one matmul is
/// much cheaper than one row at a time.
pub fn lstm_cell_projected<T: Scalar>(
    g: &mut Graph<T>,
    x_proj: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let hid = g.value(h_prev).cols();
    let hh = g.matmul(h_prev, p.w_hh)?;
    let pre = g.add(x_proj, hh)?;
    let pre = g.add_row(pre, p.bias)?;
    let i = g.slice_cols(pre, 0, hid)?;
    let f = g.slice_cols(pre, hid, hid)?;
    let cand = g.slice_cols(pre, 2 * hid, hid)?;
    let o = g.slice_cols(pre, 3 * hid, hid)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}
