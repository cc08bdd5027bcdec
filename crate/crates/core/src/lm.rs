//! LSTM language model over tied embeddings.
//!
//! One step: `x = E[token]`, gates `W_x x + W_h h + b` split as
//! input/forget/output/candidate, then `f_LM = E (W_out h' + b_out)`.

use crate::autodiff::NodeId;
use crate::error::{NocError, Result};
use crate::params::{uniform, Forward, ParamId, ParamSet};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::training::{minimise, PretrainConfig, TrainingLog};
use crate::vocab::{BOS_ID, EOS_ID};

/// Half-width of the uniform weight initialisation.
pub const LM_INIT: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmParams {
    pub embedding: ParamId,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub dim: usize,
    pub hidden: usize,
}

/// Hidden and cell vectors carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState<T> {
    pub hidden: Tensor<T>,
    pub cell: Tensor<T>,
}

impl<T: Real> LmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LmState { hidden: Tensor::zeros(&[hidden]), cell: Tensor::zeros(&[hidden]) }
    }
}

/// Graph handles for an [`LmState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateNodes {
    pub hidden: NodeId,
    pub cell: NodeId,
}

impl LmParams {
    /// Registers LSTM weights around an existing embedding parameter.
    /// With `rng = None` every weight, including the forget bias, is zero.
    pub fn register<T: Real>(
        params: &mut ParamSet<T>,
        embedding: ParamId,
        hidden: usize,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Self {
        let dim = params.get(embedding).cols();
        let (w_input, w_hidden, w_out, bias) = match rng {
            Some(mut r) => {
                let mut bias = Tensor::zeros(&[4 * hidden]);
                bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = T::lit(FORGET_BIAS));
                (
                    uniform(&mut r, &[4 * hidden, dim], LM_INIT),
                    uniform(&mut r, &[4 * hidden, hidden], LM_INIT),
                    uniform(&mut r, &[dim, hidden], LM_INIT),
                    bias,
                )
            }
            None => (
                Tensor::zeros(&[4 * hidden, dim]),
                Tensor::zeros(&[4 * hidden, hidden]),
                Tensor::zeros(&[dim, hidden]),
                Tensor::zeros(&[4 * hidden]),
            ),
        };
        LmParams {
            embedding,
            w_input: params.insert("lm.w_input", w_input),
            w_hidden: params.insert("lm.w_hidden", w_hidden),
            bias: params.insert("lm.bias", bias),
            w_out: params.insert("lm.w_out", w_out),
            b_out: params.insert("lm.b_out", Tensor::zeros(&[dim])),
            dim,
            hidden,
        }
    }

    /// Parameters owned by the language model (excluding the shared embedding).
    pub fn own_ids(&self) -> [ParamId; 5] {
        [self.w_input, self.w_hidden, self.bias, self.w_out, self.b_out]
    }

    pub fn vocab_size<T: Real>(&self, params: &ParamSet<T>) -> usize {
        params.get(self.embedding).rows()
    }

    pub fn zero_state<T: Real>(&self, f: &mut Forward<T>) -> StateNodes {
        StateNodes { hidden: f.input(Tensor::zeros(&[self.hidden])), cell: f.input(Tensor::zeros(&[self.hidden])) }
    }

    pub fn state_nodes<T: Real>(&self, f: &mut Forward<T>, state: &LmState<T>) -> Result<StateNodes> {
        if state.hidden.shape() != [self.hidden] || state.cell.shape() != [self.hidden] {
            return Err(NocError::Dimension(format!(
                "state must have hidden size {}, got {:?}/{:?}",
                self.hidden,
                state.hidden.shape(),
                state.cell.shape()
            )));
        }
        Ok(StateNodes { hidden: f.input(state.hidden.clone()), cell: f.input(state.cell.clone()) })
    }

    /// One recurrence step on `token`; returns the new state and `f_LM`.
    pub fn step<T: Real>(&self, f: &mut Forward<T>, state: StateNodes, token: usize) -> Result<(StateNodes, NodeId)> {
        let h = self.hidden;
        let e = f.bind(self.embedding);
        let wx = f.bind(self.w_input);
        let wh = f.bind(self.w_hidden);
        let b = f.bind(self.bias);
        let wo = f.bind(self.w_out);
        let bo = f.bind(self.b_out);
        let g = &mut f.graph;

        let x = g.row(e, token)?;
        let zx = g.matvec(wx, x)?;
        let zh = g.matvec(wh, state.hidden)?;
        let z = g.add_n(&[zx, zh, b])?;
        let i_pre = g.slice(z, 0, h)?;
        let f_pre = g.slice(z, h, h)?;
        let o_pre = g.slice(z, 2 * h, h)?;
        let c_pre = g.slice(z, 3 * h, h)?;
        let ig = g.sigmoid(i_pre);
        let fg = g.sigmoid(f_pre);
        let og = g.sigmoid(o_pre);
        let cand = g.tanh(c_pre);
        let keep = g.mul(fg, state.cell)?;
        let write = g.mul(ig, cand)?;
        let cell = g.add(keep, write)?;
        let ct = g.tanh(cell);
        let hidden = g.mul(og, ct)?;
        let u = g.matvec(wo, hidden)?;
        let u = g.add(u, bo)?;
        let logits = g.matvec(e, u)?;
        Ok((StateNodes { hidden, cell }, logits))
    }

    /// Teacher-forced negative log-likelihood of `sentence` (BOS prepended,
    /// EOS appended as final target). `bias`, when given, is added to the
    /// logits at every step.
    pub fn sentence_nll<T: Real>(&self, f: &mut Forward<T>, sentence: &[usize], bias: Option<NodeId>) -> Result<NodeId> {
        if sentence.is_empty() {
            return Err(NocError::Argument("sentence must contain at least one token".into()));
        }
        let mut state = self.zero_state(f);
        let mut terms = Vec::with_capacity(sentence.len() + 1);
        let mut prev = BOS_ID;
        for &target in sentence.iter().chain(std::iter::once(&EOS_ID)) {
            let (next, lm_logits) = self.step(f, state, prev)?;
            let logits = match bias {
                Some(b) => f.graph.add(lm_logits, b)?,
                None => lm_logits,
            };
            let lp = f.graph.log_softmax(logits)?;
            terms.push(f.graph.pick(lp, target)?);
            state = next;
            prev = target;
        }
        let total = f.graph.add_n(&terms)?;
        Ok(f.graph.scale(total, -T::one()))
    }
}

/// Single step on concrete tensors.
pub fn lm_step<T: Real>(
    params: &ParamSet<T>,
    lm: &LmParams,
    state: &LmState<T>,
    token: usize,
) -> Result<(LmState<T>, Tensor<T>)> {
    let mut f = Forward::new(params);
    let s = lm.state_nodes(&mut f, state)?;
    let (next, logits) = lm.step(&mut f, s, token)?;
    Ok((
        LmState { hidden: f.value(next.hidden).clone(), cell: f.value(next.cell).clone() },
        f.value(logits).clone(),
    ))
}

pub fn lm_loss<T: Real>(params: &ParamSet<T>, lm: &LmParams, sentence: &[usize]) -> Result<T> {
    let mut f = Forward::new(params);
    let loss = lm.sentence_nll(&mut f, sentence, None)?;
    Ok(f.value(loss).item())
}

/// Standalone language-model training on unpaired sentences.
pub fn lm_pretrain<T: Real>(
    params: &mut ParamSet<T>,
    lm: &LmParams,
    corpus: &[Vec<usize>],
    cfg: &PretrainConfig,
) -> Result<TrainingLog> {
    if corpus.iter().any(Vec::is_empty) {
        return Err(NocError::Argument("corpus contains an empty sentence".into()));
    }
    minimise(params, corpus.len(), 0x4c4d, cfg, |f, i| lm.sentence_nll(f, &corpus[i], None))
}

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
