//! Caption generation: greedy, beam and sample-and-rank decoding over the
//! fused next-word distribution.
//!
//! BOS and UNK are never emitted: their logits are masked to `-inf` before
//! normalisation, and every reported log-probability is taken under that
//! masked distribution.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::NodeId;
use crate::error::{NocError, Result};
use crate::lm::StateNodes;
use crate::model::NocModel;
use crate::params::Forward;
use crate::scalar::Real;
use crate::vision::ImageFeatures;
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMethod {
    Greedy,
    Beam(usize),
    Sample(usize),
}

impl fmt::Display for DecodeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMethod::Greedy => write!(f, "greedy"),
            DecodeMethod::Beam(k) => write!(f, "beam:{k}"),
            DecodeMethod::Sample(n) => write!(f, "sample:{n}"),
        }
    }
}

impl FromStr for DecodeMethod {
    type Err = NocError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || NocError::Argument(format!("unknown decoding method `{s}` (use greedy, beam:K or sample:N)"));
        let count = |v: &str| v.parse::<usize>().ok().filter(|&k| k >= 1).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "greedy" => Ok(DecodeMethod::Greedy),
            Some(("beam", k)) => Ok(DecodeMethod::Beam(count(k)?)),
            Some(("sample", n)) => Ok(DecodeMethod::Sample(count(n)?)),
            _ => Err(bad()),
        }
    }
}

/// Which sample wins in sample-and-rank decoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSelection {
    #[default]
    HighestLogProb,
    LowestLogProb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Generated ids, ending in EOS unless truncated at the length limit.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub method: DecodeMethod,
}

impl DecodeResult {
    /// Caption words, without the terminating EOS.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn text(&self, vocab: &Vocabulary) -> Vec<String> {
        self.words().iter().map(|&i| vocab.token(i).unwrap_or_default().to_string()).collect()
    }
}

fn masked_log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let allowed = |i: usize| i != BOS_ID && i != UNK_ID;
    let m = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    let z: T = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &v)| (v - m).exp())
        .sum();
    let lz = m + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if allowed(i) { (v - lz).as_f64() } else { f64::NEG_INFINITY })
        .collect()
}

/// Incremental fused decoding for one image on a single graph.
pub struct Session<'m, T> {
    model: &'m NocModel<T>,
    f: Forward<'m, T>,
    f_im: NodeId,
}

impl<'m, T: Real> Session<'m, T> {
    pub fn new(model: &'m NocModel<T>, image: &ImageFeatures<T>) -> Result<Self> {
        let mut f = Forward::new(&model.params);
        let f_im = model.vision.activations(&mut f, image)?;
        Ok(Session { model, f, f_im })
    }

    pub fn start(&mut self) -> StateNodes {
        self.model.lm.zero_state(&mut self.f)
    }

    /// Feeds `prev` and returns the new state with masked next-word log-probabilities.
    pub fn advance(&mut self, state: StateNodes, prev: usize) -> Result<(StateNodes, Vec<f64>)> {
        let (next, f_cm) = self.model.fused_step(&mut self.f, state, prev, self.f_im)?;
        Ok((next, masked_log_softmax(self.f.value(f_cm).data())))
    }
}

fn check_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(NocError::Argument("max_len must be at least 1".into()));
    }
    Ok(())
}

fn argmax_f64(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<T: Real>(model: &NocModel<T>, image: &ImageFeatures<T>, max_len: usize) -> Result<DecodeResult> {
    check_len(max_len)?;
    let mut s = Session::new(model, image)?;
    let mut state = s.start();
    let mut prev = BOS_ID;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let (next, lp) = s.advance(state, prev)?;
        let tok = argmax_f64(&lp);
        log_prob += lp[tok];
        tokens.push(tok);
        if tok == EOS_ID {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(DecodeResult { tokens, log_prob, method: DecodeMethod::Greedy })
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Option<StateNodes>,
}

impl Hypothesis {
    fn finished(&self, max_len: usize) -> bool {
        self.tokens.last() == Some(&EOS_ID) || self.tokens.len() >= max_len
    }
}

/// Higher log-probability first; lexicographically smaller ids on ties.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn beam_decode<T: Real>(model: &NocModel<T>, image: &ImageFeatures<T>, width: usize, max_len: usize) -> Result<DecodeResult> {
    check_len(max_len)?;
    if width == 0 {
        return Err(NocError::Argument("beam width must be at least 1".into()));
    }
    let mut s = Session::new(model, image)?;
    let start = s.start();
    let mut beam = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, state: Some(start) }];
    while beam.iter().any(|h| !h.finished(max_len)) {
        let mut candidates = Vec::new();
        for h in beam {
            if h.finished(max_len) {
                candidates.push(h);
                continue;
            }
            let prev = h.tokens.last().copied().unwrap_or(BOS_ID);
            let (next, lp) = s.advance(h.state.expect("unfinished hypothesis keeps its state"), prev)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis { tokens, log_prob: h.log_prob + l, state: Some(next) });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        beam = candidates;
    }
    beam.sort_by(rank);
    let best = beam.swap_remove(0);
    Ok(DecodeResult { tokens: best.tokens, log_prob: best.log_prob, method: DecodeMethod::Beam(width) })
}

/// Draws `n` ancestral samples at temperature 1.
pub fn sample_candidates<T: Real>(
    model: &NocModel<T>,
    image: &ImageFeatures<T>,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<DecodeResult>> {
    check_len(max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Session::new(model, image)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut state = s.start();
        let mut prev = BOS_ID;
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        while tokens.len() < max_len {
            let (next, lp) = s.advance(state, prev)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = EOS_ID;
            let mut last_allowed = EOS_ID;
            let mut picked = false;
            for (i, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                last_allowed = i;
                acc += l.exp();
                if u < acc {
                    tok = i;
                    picked = true;
                    break;
                }
            }
            if !picked {
                // rounding left u above the accumulated mass
                tok = last_allowed;
            }
            log_prob += lp[tok];
            tokens.push(tok);
            if tok == EOS_ID {
                break;
            }
            state = next;
            prev = tok;
        }
        out.push(DecodeResult { tokens, log_prob, method: DecodeMethod::Sample(n) });
    }
    Ok(out)
}

/// Samples `n` captions and keeps one by log-probability.
pub fn sample_rank_decode<T: Real>(
    model: &NocModel<T>,
    image: &ImageFeatures<T>,
    n: usize,
    max_len: usize,
    seed: u64,
    selection: SampleSelection,
) -> Result<DecodeResult> {
    if n == 0 {
        return Err(NocError::Argument("need at least one sample".into()));
    }
    let candidates = sample_candidates(model, image, n, max_len, seed)?;
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let better = match selection {
            SampleSelection::HighestLogProb => c.log_prob > candidates[best].log_prob,
            SampleSelection::LowestLogProb => c.log_prob < candidates[best].log_prob,
        };
        if better {
            best = i;
        }
    }
    Ok(candidates.into_iter().nth(best).expect("n >= 1"))
}

/// Log-probability of `tokens` under the masked fused distribution.
pub fn score_tokens<T: Real>(model: &NocModel<T>, image: &ImageFeatures<T>, tokens: &[usize]) -> Result<f64> {
    let mut s = Session::new(model, image)?;
    let mut state = s.start();
    let mut prev = BOS_ID;
    let mut total = 0.0;
    for &t in tokens {
        let (next, lp) = s.advance(state, prev)?;
        let l = *lp.get(t).ok_or(NocError::Index { index: t, size: lp.len() })?;
        total += l;
        state = next;
        prev = t;
    }
    Ok(total)
}

pub fn decode<T: Real>(
    model: &NocModel<T>,
    image: &ImageFeatures<T>,
    method: DecodeMethod,
    max_len: usize,
    seed: u64,
) -> Result<DecodeResult> {
    match method {
        DecodeMethod::Greedy => greedy_decode(model, image, max_len),
        DecodeMethod::Beam(k) => beam_decode(model, image, k, max_len),
        DecodeMethod::Sample(n) => sample_rank_decode(model, image, n, max_len, seed, SampleSelection::default()),
    }
}
