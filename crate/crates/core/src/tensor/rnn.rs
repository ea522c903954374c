//! Recurrent building blocks expressed as graph operations.

use rand::Rng;

use super::{Graph, ParameterSet, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

impl Direction {
    pub fn count(self) -> usize {
        match self {
            Direction::Bidirectional => 2,
            _ => 1,
        }
    }
}

/// Affine map `x · W + b` with parameters `{prefix}.w` (in × out) and `{prefix}.b` (1 × out).
#[derive(Debug, Clone)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.to_owned(),
            input,
            output,
        }
    }

    pub fn init(&self, ps: &mut ParameterSet, rng: &mut impl Rng) -> Result<(), TensorError> {
        let s = 1.0 / (self.input as f64).sqrt();
        ps.insert_uniform(&format!("{}.w", self.prefix), self.input, self.output, s, rng)?;
        ps.insert(&format!("{}.b", self.prefix), Tensor::zeros(&[1, self.output]))
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParameterSet, x: Var) -> Result<Var, TensorError> {
        let w = g.param(ps, &format!("{}.w", self.prefix))?;
        let b = g.param(ps, &format!("{}.b", self.prefix))?;
        check_width(g, x, self.input, &self.prefix)?;
        let xw = g.matmul(x, w);
        Ok(g.add_row(xw, b))
    }
}

fn check_width(g: &Graph, x: Var, expected: usize, what: &str) -> Result<(), TensorError> {
    let got = g.value(x).cols();
    if got != expected {
        return Err(TensorError::Shape(format!(
            "{what}: input width {got}, expected {expected}"
        )));
    }
    Ok(())
}

/// GRU cell with gate order (reset, update, candidate):
///
/// ```text
/// r = σ(x W_r + b_r + h U_r + c_r)
/// u = σ(x W_u + b_u + h U_u + c_u)
/// n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_owned(),
            input,
            hidden,
        }
    }

    pub fn init(&self, ps: &mut ParameterSet, rng: &mut impl Rng) -> Result<(), TensorError> {
        let s = 1.0 / (self.hidden as f64).sqrt();
        let h3 = 3 * self.hidden;
        ps.insert_uniform(&format!("{}.wx", self.prefix), self.input, h3, s, rng)?;
        ps.insert_uniform(&format!("{}.wh", self.prefix), self.hidden, h3, s, rng)?;
        ps.insert_uniform(&format!("{}.bx", self.prefix), 1, h3, s, rng)?;
        ps.insert_uniform(&format!("{}.bh", self.prefix), 1, h3, s, rng)
    }

    fn check_params(&self, ps: &ParameterSet) -> Result<(), TensorError> {
        let h3 = 3 * self.hidden;
        for (suffix, rows, cols) in [
            ("wx", self.input, h3),
            ("wh", self.hidden, h3),
            ("bx", 1, h3),
            ("bh", 1, h3),
        ] {
            let name = format!("{}.{suffix}", self.prefix);
            let t = ps
                .get(&name)
                .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if t.rows() != rows || t.cols() != cols {
                return Err(TensorError::Shape(format!(
                    "{name}: {:?} but cell declares {rows}x{cols}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Input half of the gate pre-activations, `x W + b`; can be computed for all steps at once.
    pub fn input_gates(&self, g: &mut Graph, ps: &ParameterSet, x: Var) -> Result<Var, TensorError> {
        check_width(g, x, self.input, &self.prefix)?;
        let wx = g.param(ps, &format!("{}.wx", self.prefix))?;
        let bx = g.param(ps, &format!("{}.bx", self.prefix))?;
        let xw = g.matmul(x, wx);
        Ok(g.add_row(xw, bx))
    }

    pub fn step_with_gates(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        gx: Var,
        h: Var,
    ) -> Result<Var, TensorError> {
        let hd = self.hidden;
        let wh = g.param(ps, &format!("{}.wh", self.prefix))?;
        let bh = g.param(ps, &format!("{}.bh", self.prefix))?;
        let hw = g.matmul(h, wh);
        let gh = g.add_row(hw, bh);
        let gx_ru = g.slice_cols(gx, 0, 2 * hd);
        let gh_ru = g.slice_cols(gh, 0, 2 * hd);
        let ru_pre = g.add(gx_ru, gh_ru);
        let ru = g.sigmoid(ru_pre);
        let r = g.slice_cols(ru, 0, hd);
        let u = g.slice_cols(ru, hd, hd);
        let gx_n = g.slice_cols(gx, 2 * hd, hd);
        let gh_n = g.slice_cols(gh, 2 * hd, hd);
        let rgh = g.mul(r, gh_n);
        let n_pre = g.add(gx_n, rgh);
        let n = g.tanh(n_pre);
        let diff = g.sub(h, n);
        let ud = g.mul(u, diff);
        Ok(g.add(n, ud))
    }

    pub fn step(&self, g: &mut Graph, ps: &ParameterSet, x: Var, h: Var) -> Result<Var, TensorError> {
        let gx = self.input_gates(g, ps, x)?;
        self.step_with_gates(g, ps, gx, h)
    }

    /// Runs over `xs` (one `batch × input` node per step). Rows whose `masks[t]` is 0 carry
    /// their state through unchanged. Outputs are returned in input time order.
    pub fn run(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        xs: &[Var],
        masks: &[Vec<f64>],
        h0: Var,
        reverse: bool,
    ) -> Result<Vec<Var>, TensorError> {
        self.check_params(ps)?;
        let steps = xs.len();
        let mut out = vec![h0; steps];
        let mut h = h0;
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let next = self.step(g, ps, xs[t], h)?;
            h = if masks[t].iter().all(|&m| m == 1.0) {
                next
            } else {
                g.blend_rows(next, h, &masks[t])
            };
            out[t] = h;
        }
        Ok(out)
    }
}

/// LSTM cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_owned(),
            input,
            hidden,
        }
    }

    pub fn init(&self, ps: &mut ParameterSet, rng: &mut impl Rng) -> Result<(), TensorError> {
        let s = 1.0 / (self.hidden as f64).sqrt();
        let h4 = 4 * self.hidden;
        ps.insert_uniform(&format!("{}.wx", self.prefix), self.input, h4, s, rng)?;
        ps.insert_uniform(&format!("{}.wh", self.prefix), self.hidden, h4, s, rng)?;
        // Forget-gate bias starts at 1.
        let mut b = vec![0.0; h4];
        for v in &mut b[self.hidden..2 * self.hidden] {
            *v = 1.0;
        }
        ps.insert(&format!("{}.b", self.prefix), Tensor::row(b))
    }

    /// One step; returns `(h', c')`.
    pub fn step(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), TensorError> {
        check_width(g, x, self.input, &self.prefix)?;
        let hd = self.hidden;
        let wx = g.param(ps, &format!("{}.wx", self.prefix))?;
        let wh = g.param(ps, &format!("{}.wh", self.prefix))?;
        let b = g.param(ps, &format!("{}.b", self.prefix))?;
        let xw = g.matmul(x, wx);
        let hw = g.matmul(h, wh);
        let s = g.add(xw, hw);
        let pre = g.add_row(s, b);
        let ifo_pre_i = g.slice_cols(pre, 0, 2 * hd);
        let if_gates = g.sigmoid(ifo_pre_i);
        let i = g.slice_cols(if_gates, 0, hd);
        let f = g.slice_cols(if_gates, hd, hd);
        let cand_pre = g.slice_cols(pre, 2 * hd, hd);
        let cand = g.tanh(cand_pre);
        let o_pre = g.slice_cols(pre, 3 * hd, hd);
        let o = g.sigmoid(o_pre);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c_next = g.add(fc, ic);
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc);
        Ok((h_next, c_next))
    }

    /// Masked run over a sequence; returns the hidden state at each step in input order.
    pub fn run(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        xs: &[Var],
        masks: &[Vec<f64>],
        reverse: bool,
    ) -> Result<Vec<Var>, TensorError> {
        let rows = xs.first().map_or(0, |&x| g.value(x).rows());
        let zero = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let (mut h, mut c) = (zero, zero);
        let steps = xs.len();
        let mut out = vec![zero; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let (hn, cn) = self.step(g, ps, xs[t], h, c)?;
            if masks[t].iter().all(|&m| m == 1.0) {
                h = hn;
                c = cn;
            } else {
                h = g.blend_rows(hn, h, &masks[t]);
                c = g.blend_rows(cn, c, &masks[t]);
            }
            out[t] = h;
        }
        Ok(out)
    }
}

/// Token-id rows padded to equal length, viewed time-major for recurrent layers.
#[derive(Debug, Clone)]
pub struct TimeMajor {
    /// `ids[t][b]`
    pub ids: Vec<Vec<usize>>,
    /// `masks[t][b]` is 1.0 where row `b` has a real token at step `t`.
    pub masks: Vec<Vec<f64>>,
}

impl TimeMajor {
    /// Builds from per-row token sequences, padding with `pad`.
    pub fn from_rows(rows: &[Vec<u32>], pad: u32) -> Self {
        let steps = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![Vec::with_capacity(rows.len()); steps];
        let mut masks = vec![Vec::with_capacity(rows.len()); steps];
        for t in 0..steps {
            for r in rows {
                match r.get(t) {
                    Some(&tok) => {
                        ids[t].push(tok as usize);
                        masks[t].push(1.0);
                    }
                    None => {
                        ids[t].push(pad as usize);
                        masks[t].push(0.0);
                    }
                }
            }
        }
        Self { ids, masks }
    }

    pub fn steps(&self) -> usize {
        self.ids.len()
    }
}

/// Embeds `tokens` and runs a one- or two-directional GRU; the output at each step is the
/// concatenation `[forward, backward]` with width `hidden × directions`.
pub fn gru_forward(
    g: &mut Graph,
    ps: &ParameterSet,
    embedding: &str,
    forward: &GruCell,
    backward: Option<&GruCell>,
    tokens: &TimeMajor,
    direction: Direction,
) -> Result<Vec<Var>, TensorError> {
    let table = g.param(ps, embedding)?;
    let vocab = g.value(table).rows();
    if let Some(bad) = tokens.ids.iter().flatten().find(|&&t| t >= vocab) {
        return Err(TensorError::Shape(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let xs: Vec<Var> = tokens.ids.iter().map(|ids| g.gather_rows(table, ids)).collect();
    let rows = tokens.ids.first().map_or(0, Vec::len);
    let run = |g: &mut Graph, cell: &GruCell, reverse: bool| -> Result<Vec<Var>, TensorError> {
        let h0 = g.constant(Tensor::zeros(&[rows, cell.hidden]));
        cell.run(g, ps, &xs, &tokens.masks, h0, reverse)
    };
    match direction {
        Direction::Forward => run(g, forward, false),
        Direction::Backward => run(g, forward, true),
        Direction::Bidirectional => {
            let back = backward.ok_or_else(|| {
                TensorError::Shape("bidirectional GRU needs a backward cell".into())
            })?;
            let f = run(g, forward, false)?;
            let b = run(g, back, true)?;
            Ok(f.iter().zip(&b).map(|(&x, &y)| g.concat_cols(&[x, y])).collect())
        }
    }
}
