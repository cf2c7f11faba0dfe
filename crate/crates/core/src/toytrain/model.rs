//! Encoder, stateless one-token decoder and additive joiner:
//! `logits[t][u] = W tanh(f_t + g_u) + b` with `f_t = A x_t + c` and
//! `g_u = E[y_{u-1}]` (`E[blank]` for `u = 0`).

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::Features;
use super::TrainError;
use crate::rng::{seeded, Rng};
use crate::tensor::{GradTensor, LogitTensor, Tensor3};
use crate::vocab::{TokenId, Transcript, BLANK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// `hidden_dim x feature_dim`, row-major.
    pub encoder_weight: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    /// `vocab_size x hidden_dim`; row `k` is the context vector after token `k`.
    pub decoder_embed: Vec<f64>,
    /// `vocab_size x hidden_dim`.
    pub joiner_weight: Vec<f64>,
    pub joiner_bias: Vec<f64>,
}

impl ToyModelParams {
    pub fn zeros(feature_dim: usize, hidden_dim: usize, vocab_size: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim,
            vocab_size,
            encoder_weight: vec![0.0; hidden_dim * feature_dim],
            encoder_bias: vec![0.0; hidden_dim],
            decoder_embed: vec![0.0; vocab_size * hidden_dim],
            joiner_weight: vec![0.0; vocab_size * hidden_dim],
            joiner_bias: vec![0.0; vocab_size],
        }
    }

    /// Gaussian init scaled by fan-in; biases start at zero.
    pub fn init(feature_dim: usize, hidden_dim: usize, vocab_size: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut p = Self::zeros(feature_dim, hidden_dim, vocab_size);
        fill(&mut p.encoder_weight, 1.0 / (feature_dim as f64).sqrt(), &mut rng);
        fill(&mut p.decoder_embed, 0.5, &mut rng);
        fill(&mut p.joiner_weight, 1.0 / (hidden_dim as f64).sqrt(), &mut rng);
        p
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            &self.encoder_weight,
            &self.encoder_bias,
            &self.decoder_embed,
            &self.joiner_weight,
            &self.joiner_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.encoder_weight,
            &mut self.encoder_bias,
            &mut self.decoder_embed,
            &mut self.joiner_weight,
            &mut self.joiner_bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn check_shapes(&self) -> Result<(), TrainError> {
        let (d, h, v) = (self.feature_dim, self.hidden_dim, self.vocab_size);
        let expected = [h * d, h, v * h, v * h, v];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.len() != e {
                return Err(TrainError::ShapeMismatch(format!(
                    "parameter tensor has {} entries, expected {e}",
                    t.len()
                )));
            }
        }
        Ok(())
    }

    /// Encoder output for every frame, `T x H`.
    pub(crate) fn encode(&self, x: &Features) -> Vec<f64> {
        let (d, h) = (self.feature_dim, self.hidden_dim);
        let mut out = Vec::with_capacity(x.frames() * h);
        for t in 0..x.frames() {
            let frame = x.frame(t);
            for j in 0..h {
                let w = &self.encoder_weight[j * d..(j + 1) * d];
                out.push(self.encoder_bias[j] + dot(w, frame));
            }
        }
        out
    }

    pub(crate) fn embed(&self, context: TokenId) -> &[f64] {
        let h = self.hidden_dim;
        &self.decoder_embed[context as usize * h..(context as usize + 1) * h]
    }

    /// Joiner output for one (encoder, decoder) pair; writes the hidden
    /// activation into `hidden` and the logits into `logits`.
    pub(crate) fn join(&self, enc: &[f64], dec: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let h = self.hidden_dim;
        for ((hv, e), g) in hidden.iter_mut().zip(enc).zip(dec) {
            *hv = (e + g).tanh();
        }
        for (k, z) in logits.iter_mut().enumerate() {
            *z = self.joiner_bias[k] + dot(&self.joiner_weight[k * h..(k + 1) * h], hidden);
        }
    }
}

fn fill(v: &mut [f64], std: f64, rng: &mut Rng) {
    let n = Normal::new(0.0, std).expect("positive std");
    for x in v {
        *x = n.sample(rng);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Decoder context for every transcript position: blank, then `y[0..U]`.
fn contexts(y: &Transcript) -> Vec<TokenId> {
    std::iter::once(BLANK).chain(y.iter().copied()).collect()
}

/// Activations kept for the backward pass.
pub(crate) struct ForwardCache {
    hidden: Vec<f64>,
}

pub fn forward(params: &ToyModelParams, x: &Features, y: &Transcript) -> Result<LogitTensor, TrainError> {
    Ok(forward_cached(params, x, y)?.0)
}

pub(crate) fn forward_cached(
    params: &ToyModelParams,
    x: &Features,
    y: &Transcript,
) -> Result<(LogitTensor, ForwardCache), TrainError> {
    params.check_shapes()?;
    if x.dim() != params.feature_dim {
        return Err(TrainError::ShapeMismatch(format!(
            "features have dimension {}, model expects {}",
            x.dim(),
            params.feature_dim
        )));
    }
    if let Some(&bad) = y.iter().find(|&&k| k as usize >= params.vocab_size) {
        return Err(TrainError::ShapeMismatch(format!("token {bad} outside model vocabulary")));
    }
    let (frames, positions, h, v) = (x.frames(), y.len() + 1, params.hidden_dim, params.vocab_size);
    let enc = params.encode(x);
    let ctx = contexts(y);
    let mut logits = Tensor3::zeros(frames, positions, v);
    let mut hidden = vec![0.0; frames * positions * h];
    for t in 0..frames {
        for (u, &c) in ctx.iter().enumerate() {
            let cell = t * positions + u;
            params.join(
                &enc[t * h..(t + 1) * h],
                params.embed(c),
                &mut hidden[cell * h..(cell + 1) * h],
                &mut logits.as_mut_slice()[cell * v..(cell + 1) * v],
            );
        }
    }
    let logits = LogitTensor::new(logits).map_err(|_| TrainError::NonFiniteLogits)?;
    Ok((logits, ForwardCache { hidden }))
}

/// Back-propagates `d loss / d logits` into parameter gradients.
pub(crate) fn backward(
    params: &ToyModelParams,
    x: &Features,
    y: &Transcript,
    cache: &ForwardCache,
    dlogits: &GradTensor,
) -> ToyModelParams {
    let (d, h, v) = (params.feature_dim, params.hidden_dim, params.vocab_size);
    let (frames, positions) = (x.frames(), y.len() + 1);
    let ctx = contexts(y);
    let mut grad = ToyModelParams::zeros(d, h, v);
    let mut d_enc = vec![0.0; frames * h];
    let mut d_pre = vec![0.0; h];
    for t in 0..frames {
        for (u, &c) in ctx.iter().enumerate() {
            let dz = dlogits.row(t, u);
            if dz.iter().all(|&g| g == 0.0) {
                continue;
            }
            let cell = t * positions + u;
            let hid = &cache.hidden[cell * h..(cell + 1) * h];
            d_pre.iter_mut().for_each(|x| *x = 0.0);
            for (k, &g) in dz.iter().enumerate() {
                grad.joiner_bias[k] += g;
                let w = &params.joiner_weight[k * h..(k + 1) * h];
                let gw = &mut grad.joiner_weight[k * h..(k + 1) * h];
                for j in 0..h {
                    gw[j] += g * hid[j];
                    d_pre[j] += g * w[j];
                }
            }
            for j in 0..h {
                d_pre[j] *= 1.0 - hid[j] * hid[j];
            }
            let de = &mut d_enc[t * h..(t + 1) * h];
            let dg = &mut grad.decoder_embed[c as usize * h..(c as usize + 1) * h];
            for j in 0..h {
                de[j] += d_pre[j];
                dg[j] += d_pre[j];
            }
        }
    }
    for t in 0..frames {
        let frame = x.frame(t);
        for j in 0..h {
            let g = d_enc[t * h + j];
            if g == 0.0 {
                continue;
            }
            grad.encoder_bias[j] += g;
            let gw = &mut grad.encoder_weight[j * d..(j + 1) * d];
            for (w, xv) in gw.iter_mut().zip(frame) {
                *w += g * xv;
            }
        }
    }
    grad
}

/// Frame-synchronous greedy search. At each frame the argmax symbol is
/// emitted (and becomes the context) until blank wins or the per-frame cap
/// is reached. Ties go to the lowest id, so blank wins exact ties.
pub fn greedy_decode(params: &ToyModelParams, x: &Features, max_symbols_per_frame: usize) -> Transcript {
    let (h, v) = (params.hidden_dim, params.vocab_size);
    let enc = params.encode(x);
    let mut hidden = vec![0.0; h];
    let mut logits = vec![0.0; v];
    let mut out = Vec::new();
    let mut context = BLANK;
    for t in 0..x.frames() {
        let mut emitted = 0;
        while emitted < max_symbols_per_frame {
            params.join(&enc[t * h..(t + 1) * h], params.embed(context), &mut hidden, &mut logits);
            let best = argmax(&logits);
            if best == BLANK as usize {
                break;
            }
            out.push(best as TokenId);
            context = best as TokenId;
            emitted += 1;
        }
    }
    Transcript::new(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::PenaltyConfig;
    use crate::loss::{loss, Criterion};

    fn features(t: usize, d: usize, seed: u64) -> Features {
        let mut rng = seeded(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        Features::new(d, (0..t * d).map(|_| n.sample(&mut rng)).collect())
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let p = ToyModelParams::zeros(4, 3, 5);
        let z = forward(&p, &features(2, 4, 0), &Transcript::new(vec![2])).unwrap();
        assert_eq!(z.shape(), (2, 2, 5));
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let p = ToyModelParams::zeros(4, 3, 5);
        assert!(forward(&p, &features(2, 3, 0), &Transcript::default()).is_err());
        assert!(forward(&p, &features(2, 4, 0), &Transcript::new(vec![5])).is_err());
    }

    #[test]
    fn blank_only_model_decodes_nothing() {
        let mut p = ToyModelParams::init(4, 3, 5, 1);
        p.joiner_weight.iter_mut().for_each(|w| *w = 0.0);
        p.joiner_bias[0] = 5.0;
        assert!(greedy_decode(&p, &features(6, 4, 2), 3).is_empty());
    }

    #[test]
    fn decode_cap_is_honoured() {
        let mut p = ToyModelParams::init(4, 3, 5, 1);
        p.joiner_weight.iter_mut().for_each(|w| *w = 0.0);
        p.joiner_bias[2] = 5.0;
        let out = greedy_decode(&p, &features(6, 4, 2), 2);
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|&k| k == 2));
    }

    /// Central differences on every parameter of a tiny model, through the
    /// full forward pass and both losses.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (d, h, v) = (3, 4, 4);
        let x = features(3, d, 5);
        let y = Transcript::new(vec![1, 3]);
        for criterion in [Criterion::Rnnt, Criterion::Wst] {
            let pen = PenaltyConfig::default();
            let p = ToyModelParams::init(d, h, v, 9);
            let (z, cache) = forward_cached(&p, &x, &y).unwrap();
            let out = loss(&z, &y, criterion, &pen).unwrap();
            let analytic = backward(&p, &x, &y, &cache, &out.grad);
            let eval = |q: &ToyModelParams| loss(&forward(q, &x, &y).unwrap(), &y, criterion, &pen).unwrap().loss;
            let step = 1e-5;
            for ti in 0..5 {
                for i in 0..p.tensors()[ti].len() {
                    let mut plus = p.clone();
                    plus.tensors_mut()[ti][i] += step;
                    let mut minus = p.clone();
                    minus.tensors_mut()[ti][i] -= step;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                    let a = analytic.tensors()[ti][i];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        rel <= 1e-3 || (a - numeric).abs() < 1e-9,
                        "{criterion} tensor {ti}[{i}]: analytic {a} numeric {numeric}"
                    );
                }
            }
        }
    }
}
