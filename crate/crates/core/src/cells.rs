//! Recurrent cells (LSTM, GRU) and dense layers, expressed as tape graphs.
//!
//! Parameters live outside the tape in plain structs; each forward pass
//! registers them as leaves, unrolls the recurrence, and the caller reads
//! gradients back out of [`crate::tape::Gradients`] in leaf order.

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{NumericError, Tensor};

/// Named mutable access to a model's flat parameter table.
///
/// Ordering is part of the contract: leaf registration, gradient extraction,
/// optimizer state and checkpoints all rely on it.
pub trait NamedParams {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

/// Dense layer `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            w: uniform(rng, &[output, input], bound),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> DenseVars {
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let wt = tape.transpose(w);
        DenseVars { w, wt, b }
    }
}

impl NamedParams for Dense {
    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub wt: Var,
    pub b: Var,
}

impl DenseVars {
    /// Apply to a `[batch, in]` matrix.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericError> {
        let xw = tape.matmul(x, self.wt)?;
        tape.add_row(xw, self.b)
    }

    pub fn leaves(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }
}

/// LSTM cell parameters: input, forget, cell-candidate and output gates,
/// each `[H, D_in + H]` with a length-`H` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_g: Tensor,
    pub b_o: Tensor,
    pub hidden: usize,
    pub input: usize,
}

impl LstmCellParams {
    /// Uniform ±1/√fan_in weights; forget-gate bias starts at 1.0.
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let fan_in = input + hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        LstmCellParams {
            w_i: uniform(rng, &[hidden, fan_in], bound),
            w_f: uniform(rng, &[hidden, fan_in], bound),
            w_g: uniform(rng, &[hidden, fan_in], bound),
            w_o: uniform(rng, &[hidden, fan_in], bound),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::filled(&[hidden], 1.0),
            b_g: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            hidden,
            input,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let fan_in = input + hidden;
        LstmCellParams {
            w_i: Tensor::zeros(&[hidden, fan_in]),
            w_f: Tensor::zeros(&[hidden, fan_in]),
            w_g: Tensor::zeros(&[hidden, fan_in]),
            w_o: Tensor::zeros(&[hidden, fan_in]),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_g: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            hidden,
            input,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> LstmVars {
        let w = [
            tape.leaf(self.w_i.clone()),
            tape.leaf(self.w_f.clone()),
            tape.leaf(self.w_g.clone()),
            tape.leaf(self.w_o.clone()),
        ];
        let b = [
            tape.leaf(self.b_i.clone()),
            tape.leaf(self.b_f.clone()),
            tape.leaf(self.b_g.clone()),
            tape.leaf(self.b_o.clone()),
        ];
        let wt = [
            tape.transpose(w[0]),
            tape.transpose(w[1]),
            tape.transpose(w[2]),
            tape.transpose(w[3]),
        ];
        LstmVars { w, wt, b }
    }
}

impl NamedParams for LstmCellParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_g".into(), &self.w_g),
            ("w_o".into(), &self.w_o),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_g".into(), &self.b_g),
            ("b_o".into(), &self.b_o),
        ]
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_i".into(), &mut self.w_i),
            ("w_f".into(), &mut self.w_f),
            ("w_g".into(), &mut self.w_g),
            ("w_o".into(), &mut self.w_o),
            ("b_i".into(), &mut self.b_i),
            ("b_f".into(), &mut self.b_f),
            ("b_g".into(), &mut self.b_g),
            ("b_o".into(), &mut self.b_o),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub wt: [Var; 4],
    pub b: [Var; 4],
}

impl LstmVars {
    /// One step of the canonical i,f,g,o recurrence over a `[B, D]` frame.
    pub fn step(
        &self,
        tape: &mut Tape,
        x_t: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), NumericError> {
        let xh = tape.concat_cols(x_t, h_prev)?;
        let mut gates = [xh; 4];
        for k in 0..4 {
            let pre = tape.matmul(xh, self.wt[k])?;
            gates[k] = tape.add_row(pre, self.b[k])?;
        }
        let i = tape.sigmoid(gates[0]);
        let f = tape.sigmoid(gates[1]);
        let g = tape.tanh(gates[2]);
        let o = tape.sigmoid(gates[3]);
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }

    pub fn leaves(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.w.to_vec();
        v.extend_from_slice(&self.b);
        v
    }
}

/// GRU cell parameters: reset, update and candidate blocks, each
/// `[H, D_in + H]` with a length-`H` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_r: Tensor,
    pub w_u: Tensor,
    pub w_n: Tensor,
    pub b_r: Tensor,
    pub b_u: Tensor,
    pub b_n: Tensor,
    pub hidden: usize,
    pub input: usize,
}

impl GruCellParams {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let fan_in = input + hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        GruCellParams {
            w_r: uniform(rng, &[hidden, fan_in], bound),
            w_u: uniform(rng, &[hidden, fan_in], bound),
            w_n: uniform(rng, &[hidden, fan_in], bound),
            b_r: Tensor::zeros(&[hidden]),
            b_u: Tensor::zeros(&[hidden]),
            b_n: Tensor::zeros(&[hidden]),
            hidden,
            input,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let fan_in = input + hidden;
        GruCellParams {
            w_r: Tensor::zeros(&[hidden, fan_in]),
            w_u: Tensor::zeros(&[hidden, fan_in]),
            w_n: Tensor::zeros(&[hidden, fan_in]),
            b_r: Tensor::zeros(&[hidden]),
            b_u: Tensor::zeros(&[hidden]),
            b_n: Tensor::zeros(&[hidden]),
            hidden,
            input,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> GruVars {
        let w = [
            tape.leaf(self.w_r.clone()),
            tape.leaf(self.w_u.clone()),
            tape.leaf(self.w_n.clone()),
        ];
        let b = [
            tape.leaf(self.b_r.clone()),
            tape.leaf(self.b_u.clone()),
            tape.leaf(self.b_n.clone()),
        ];
        let wt = [
            tape.transpose(w[0]),
            tape.transpose(w[1]),
            tape.transpose(w[2]),
        ];
        GruVars { w, wt, b }
    }
}

impl NamedParams for GruCellParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_r".into(), &self.w_r),
            ("w_u".into(), &self.w_u),
            ("w_n".into(), &self.w_n),
            ("b_r".into(), &self.b_r),
            ("b_u".into(), &self.b_u),
            ("b_n".into(), &self.b_n),
        ]
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_r".into(), &mut self.w_r),
            ("w_u".into(), &mut self.w_u),
            ("w_n".into(), &mut self.w_n),
            ("b_r".into(), &mut self.b_r),
            ("b_u".into(), &mut self.b_u),
            ("b_n".into(), &mut self.b_n),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w: [Var; 3],
    pub wt: [Var; 3],
    pub b: [Var; 3],
}

impl GruVars {
    /// Reset/update recurrence: h' = u⊙h + (1−u)⊙tanh(W_n·[x, r⊙h] + b_n).
    pub fn step(&self, tape: &mut Tape, x_t: Var, h_prev: Var) -> Result<Var, NumericError> {
        let xh = tape.concat_cols(x_t, h_prev)?;
        let r_pre = tape.matmul(xh, self.wt[0])?;
        let r_pre = tape.add_row(r_pre, self.b[0])?;
        let r = tape.sigmoid(r_pre);
        let u_pre = tape.matmul(xh, self.wt[1])?;
        let u_pre = tape.add_row(u_pre, self.b[1])?;
        let u = tape.sigmoid(u_pre);
        let rh = tape.mul(r, h_prev)?;
        let xrh = tape.concat_cols(x_t, rh)?;
        let n_pre = tape.matmul(xrh, self.wt[2])?;
        let n_pre = tape.add_row(n_pre, self.b[2])?;
        let n = tape.tanh(n_pre);
        // (1 − u)
        let neg_u = tape.scale(u, -1.0);
        let one_minus_u = tape.add_scalar(neg_u, 1.0);
        let uh = tape.mul(u, h_prev)?;
        let un = tape.mul(one_minus_u, n)?;
        tape.add(uh, un)
    }

    pub fn leaves(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.w.to_vec();
        v.extend_from_slice(&self.b);
        v
    }
}
