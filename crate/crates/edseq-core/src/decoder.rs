//! Tracing-attention decoder: preliminary attention over encoder rows, a
//! one-hot trace mask with dynamic teacher forcing, context vectors, and
//! recurrent label generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::LstmCell;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::substream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Loss names used for gradient barriers.
pub const LOSS_GEN: &str = "gen";
pub const LOSS_ATT: &str = "att";
pub const LOSS_BOL: &str = "bol";

/// How the trace mask turns preliminary weights into applied weights.
/// The default sets the selected position's weight to exactly 1; the
/// elementwise variant keeps the preliminary weight at that position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    OneHot,
    Elementwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Encoder hidden size per direction; rows of H have width 2*d_h.
    pub d_h: usize,
    /// Decoder hidden size.
    pub s_dim: usize,
    /// Label embedding size.
    pub d_lab: usize,
    pub label_count: usize,
    pub mask_variant: MaskVariant,
}

/// Dynamic teacher forcing: each step samples m ~ Bernoulli(rho) and
/// attends to the gold position when m = 1, the predicted argmax otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcingConfig {
    pub rho: f64,
    pub seed: u64,
}

impl TeacherForcingConfig {
    pub fn new(rho: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
        }
        Ok(TeacherForcingConfig { rho, seed })
    }

    pub fn start(&self) -> TeacherForcing {
        TeacherForcing {
            rho: self.rho,
            rng: substream(self.seed, "teacher"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherForcing {
    rho: f64,
    rng: ChaCha8Rng,
}

impl TeacherForcing {
    /// One Bernoulli(rho) draw; true means "use gold".
    pub fn draw(&mut self) -> bool {
        // Degenerate rho never consults the stream, so logs stay identical
        // whether or not the generator advanced.
        if self.rho >= 1.0 {
            true
        } else if self.rho <= 0.0 {
            false
        } else {
            self.rng.random::<f64>() < self.rho
        }
    }
}

/// Preliminary attention: alpha_hat_i = softmax_i(s_t . W_a . h_i),
/// recorded on the tape.
pub fn attention_weights(
    tape: &mut Tape,
    store: &ParamStore,
    w_a: ParamId,
    s_t: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let wa = tape.param(store, w_a);
    let proj = tape.matmul(wa, s_t)?;
    let scores = tape.matmul(h, proj)?;
    tape.softmax(scores)
}

/// Trace-mask selection (off tape; the mask enters the graph as a
/// constant). Returns the chosen position and the one-hot mask.
pub fn trace_mask(
    alpha_hat: &Tensor,
    gold_index: Option<usize>,
    tf: &mut TeacherForcing,
) -> Result<(usize, Tensor)> {
    let n = alpha_hat.numel();
    let chosen = match gold_index {
        Some(g) => {
            if g >= n {
                return Err(Error::invalid(format!(
                    "gold attention index {g} out of range for {n} positions"
                )));
            }
            if tf.draw() {
                g
            } else {
                alpha_hat.argmax()
            }
        }
        None => alpha_hat.argmax(),
    };
    Ok((chosen, Tensor::one_hot(n, chosen)))
}

/// Context vector c_t = sum_i alpha_ti h_i.
pub fn context_vector(tape: &mut Tape, alpha: NodeId, h: NodeId) -> Result<NodeId> {
    tape.matmul(alpha, h)
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Attention bilinear map, 2*d_h x s_dim. Barred against L_Gen and
    /// L_Bol: only the attention loss updates it.
    pub w_a: ParamId,
    pub label_emb: ParamId,
    pub w_d: ParamId,
    pub cell: LstmCell,
    pub cfg: DecoderConfig,
}

/// Recurrent decoder state carried between steps.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub s: NodeId,
    pub cell: NodeId,
    pub context: NodeId,
}

/// Tape nodes produced by one decode step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub alpha_hat: NodeId,
    pub chosen: usize,
    pub alpha: NodeId,
    pub context: NodeId,
    pub s: NodeId,
    pub o: NodeId,
    pub y: NodeId,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let w_a = store.insert_xavier("dec.w_a", 2 * cfg.d_h, cfg.s_dim, rng);
        let label_emb = store.insert_xavier("dec.label_emb", cfg.label_count, cfg.d_lab, rng);
        let w_d = store.insert_xavier(
            "dec.w_d",
            cfg.s_dim + 2 * cfg.d_h,
            cfg.label_count,
            rng,
        );
        let cell = LstmCell::new(store, "dec.lstm", cfg.d_lab + 2 * cfg.d_h, cfg.s_dim, rng);
        Decoder { w_a, label_emb, w_d, cell, cfg }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_a, self.label_emb, self.w_d];
        ids.extend(self.cell.param_ids());
        ids
    }

    pub fn init_state(&self, tape: &mut Tape) -> DecoderState {
        let s = tape.constant(Tensor::zeros(&[self.cfg.s_dim]));
        let cell = tape.constant(Tensor::zeros(&[self.cfg.s_dim]));
        let context = tape.constant(Tensor::zeros(&[2 * self.cfg.d_h]));
        DecoderState { s, cell, context }
    }

    /// One generation step. `gold_index` enables teacher forcing; pass
    /// `None` at inference time so the predicted argmax drives the trace.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_enc: NodeId,
        state: &mut DecoderState,
        y_prev: usize,
        gold_index: Option<usize>,
        tf: &mut TeacherForcing,
    ) -> Result<StepNodes> {
        if y_prev >= self.cfg.label_count {
            return Err(Error::invalid(format!(
                "label id {y_prev} out of range ({} labels)",
                self.cfg.label_count
            )));
        }
        let emb_node = tape.param(store, self.label_emb);
        let y_mat = tape.embedding(emb_node, &[y_prev])?;
        let y_emb = tape.row(y_mat, 0)?;
        let x = tape.concat(&[y_emb, state.context])?;
        let (s_t, cell_t) = self.cell.step(tape, store, x, state.s, state.cell)?;

        let alpha_hat = attention_weights(tape, store, self.w_a, s_t, h_enc)?;
        let (chosen, mask) = trace_mask(tape.value(alpha_hat), gold_index, tf)?;
        let mask_node = tape.constant(mask);
        let alpha = match self.cfg.mask_variant {
            MaskVariant::OneHot => mask_node,
            MaskVariant::Elementwise => tape.mul(mask_node, alpha_hat)?,
        };
        let context = context_vector(tape, alpha, h_enc)?;

        let sc = tape.concat(&[s_t, context])?;
        let wd = tape.param(store, self.w_d);
        let o = tape.matmul(sc, wd)?;
        let y = tape.softmax(o)?;

        state.s = s_t;
        state.cell = cell_t;
        state.context = context;
        Ok(StepNodes { alpha_hat, chosen, alpha, context, s: s_t, o, y })
    }
}
