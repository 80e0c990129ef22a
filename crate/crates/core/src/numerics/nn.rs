use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::gaussian_matrix;
use super::optim::Param;
use super::tape::{Activation, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Small feed-forward network: a single affine map, or one hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Net {
    Linear {
        w: Param,
        b: Param,
    },
    Mlp {
        w1: Param,
        b1: Param,
        w2: Param,
        b2: Param,
        act: Activation,
    },
}

impl Net {
    pub fn linear<R: Rng>(prefix: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let std = (1.0 / input.max(1) as f64).sqrt();
        Net::Linear {
            w: Param::new(format!("{prefix}.w"), gaussian_matrix(input, output, std, rng)),
            b: Param::new(format!("{prefix}.b"), Tensor::zeros(&[output])),
        }
    }

    pub fn linear_from(prefix: &str, w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape().len() != 2 || b.len() != w.cols() {
            return Err(Error::dim("linear_from", w.shape(), b.shape()));
        }
        Ok(Net::Linear {
            w: Param::new(format!("{prefix}.w"), w),
            b: Param::new(format!("{prefix}.b"), b),
        })
    }

    pub fn mlp<R: Rng>(
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let s1 = (1.0 / input.max(1) as f64).sqrt();
        let s2 = (1.0 / hidden.max(1) as f64).sqrt();
        Net::Mlp {
            w1: Param::new(format!("{prefix}.w1"), gaussian_matrix(input, hidden, s1, rng)),
            b1: Param::new(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: Param::new(format!("{prefix}.w2"), gaussian_matrix(hidden, output, s2, rng)),
            b2: Param::new(format!("{prefix}.b2"), Tensor::zeros(&[output])),
            act,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Net::Linear { w, .. } => w.value.rows(),
            Net::Mlp { w1, .. } => w1.value.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Net::Linear { w, .. } => w.value.cols(),
            Net::Mlp { w2, .. } => w2.value.cols(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Net::Linear { w, b } => vec![w, b],
            Net::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Net::Linear { w, b } => vec![w, b],
            Net::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    /// Places the parameters on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundNet> {
        let vars = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect::<Result<Vec<_>>>()?;
        let act = match self {
            Net::Linear { .. } => None,
            Net::Mlp { act, .. } => Some(*act),
        };
        Ok(BoundNet { vars, act })
    }

    /// Binds caller-owned leaves, given in [`Net::params`] order.
    pub fn bind_vars(&self, tape: &Tape, vars: &[Var]) -> Result<BoundNet> {
        let params = self.params();
        if vars.len() != params.len() {
            return Err(Error::Contract(format!("{} vars for {} parameters", vars.len(), params.len())));
        }
        for (p, &v) in params.iter().zip(vars) {
            if tape.value(v).shape() != p.value.shape() {
                return Err(Error::dim("bind_vars", tape.value(v).shape(), p.value.shape()));
            }
        }
        let act = match self {
            Net::Linear { .. } => None,
            Net::Mlp { act, .. } => Some(*act),
        };
        Ok(BoundNet { vars: vars.to_vec(), act })
    }

    /// Untracked forward pass over a batch of rows.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let y = bound.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// A [`Net`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundNet {
    vars: Vec<Var>,
    act: Option<Activation>,
}

impl BoundNet {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.act {
            None => tape.affine(x, self.vars[0], self.vars[1]),
            Some(act) => {
                let h = tape.affine(x, self.vars[0], self.vars[1])?;
                let h = tape.act(h, act)?;
                tape.affine(h, self.vars[2], self.vars[3])
            }
        }
    }
}

/// Gradients of bound leaves in binding order; unreached leaves get zeros.
pub fn collect_grads(tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect()
}
