use super::{ParamId, ParameterStore, Tape, Var};
use crate::error::{Error, Result};

/// Weights of one LSTM cell. Gate rows are stacked in the order input,
/// forget, candidate, output: `input` is `[4h, d_in]`, `hidden` is
/// `[4h, h]`, `bias` is `[4h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub input: ParamId,
    pub hidden: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    pub fn hidden_dim(&self, store: &ParameterStore) -> usize {
        store.get(self.hidden).cols()
    }

    pub fn input_dim(&self, store: &ParameterStore) -> usize {
        store.get(self.input).cols()
    }

    /// One cell update `(x, h, c) -> (h', c')`.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let store = tape.store();
        let hd = self.hidden_dim(store);
        if store.get(self.hidden).rows() != 4 * hd
            || store.get(self.input).rows() != 4 * hd
            || store.get(self.bias).len() != 4 * hd
        {
            return Err(Error::Shape {
                op: "lstm_step",
                detail: format!("gate weights must have 4 * {hd} rows"),
            });
        }
        if tape.dim(h) != hd || tape.dim(c) != hd {
            return Err(Error::Shape {
                op: "lstm_step",
                detail: format!("state of {}/{} for hidden size {hd}", tape.dim(h), tape.dim(c)),
            });
        }
        let wx = tape.matvec(self.input, x)?;
        let wh = tape.matvec(self.hidden, h)?;
        let b = tape.param(self.bias)?;
        let pre = tape.add(wx, wh)?;
        let gates = tape.add(pre, b)?;
        let i = tape.slice(gates, 0, hd)?;
        let f = tape.slice(gates, hd, hd)?;
        let g = tape.slice(gates, 2 * hd, hd)?;
        let o = tape.slice(gates, 3 * hd, hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let kept = tape.mul(f, c)?;
        let written = tape.mul(i, g)?;
        let c_next = tape.add(kept, written)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
