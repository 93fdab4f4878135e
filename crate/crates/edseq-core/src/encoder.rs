//! Sentence encoder: trainable embedding table (the lone architecture
//! substitution for a pretrained transformer) followed by a single-layer
//! bidirectional LSTM. Head/tail sentinels are prepended/appended, so a
//! sentence of n tokens encodes to (n+2) x 2*d_h.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::{BOS_ID, SEP_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_h: usize,
    /// Sentinel token ids prepended/appended to every sentence.
    pub head_id: usize,
    pub tail_id: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, d_emb: usize, d_h: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_emb,
            d_h,
            head_id: BOS_ID,
            tail_id: SEP_ID,
        }
    }
}

/// One LSTM cell's parameters: input/forget/output/candidate gates, each a
/// (d_in + d_h) x d_h matrix plus bias.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_g: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_g: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let rows = d_in + d_h;
        let w_i = store.insert_xavier(&format!("{prefix}.w_i"), rows, d_h, rng);
        let w_f = store.insert_xavier(&format!("{prefix}.w_f"), rows, d_h, rng);
        let w_o = store.insert_xavier(&format!("{prefix}.w_o"), rows, d_h, rng);
        let w_g = store.insert_xavier(&format!("{prefix}.w_g"), rows, d_h, rng);
        let b_i = store.insert_zeros(&format!("{prefix}.b_i"), &[d_h]);
        // Forget gate starts open so early gradients reach back in time.
        let b_f = store.insert(
            &format!("{prefix}.b_f"),
            Tensor::new(vec![d_h], vec![1.0; d_h]).unwrap(),
        );
        let b_o = store.insert_zeros(&format!("{prefix}.b_o"), &[d_h]);
        let b_g = store.insert_zeros(&format!("{prefix}.b_g"), &[d_h]);
        LstmCell { w_i, w_f, w_o, w_g, b_i, b_f, b_o, b_g, d_in, d_h }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_i, self.w_f, self.w_o, self.w_g,
            self.b_i, self.b_f, self.b_o, self.b_g,
        ]
    }

    /// One recurrence step; returns (h_t, cell_t).
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let z = tape.concat(&[x, h_prev])?;
        let gate = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<NodeId> {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            let lin = tape.matmul(z, wn)?;
            tape.add(lin, bn)
        };
        let i_lin = gate(tape, self.w_i, self.b_i)?;
        let i = tape.sigmoid(i_lin)?;
        let f_lin = gate(tape, self.w_f, self.b_f)?;
        let f = tape.sigmoid(f_lin)?;
        let o_lin = gate(tape, self.w_o, self.b_o)?;
        let o = tape.sigmoid(o_lin)?;
        let g_lin = gate(tape, self.w_g, self.b_g)?;
        let g = tape.tanh(g_lin)?;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c)?;
        let h = tape.mul(o, c_act)?;
        Ok((h, c))
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub emb: ParamId,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub cfg: EncoderConfig,
}

/// H recorded on the active tape; rows 0 and n+1 are the sentinels.
#[derive(Debug, Clone, Copy)]
pub struct EncodedSentence {
    pub h: NodeId,
    /// Token count without sentinels.
    pub n: usize,
}

impl EncodedSentence {
    pub fn rows(&self) -> usize {
        self.n + 2
    }
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let emb = store.insert_xavier("enc.emb", cfg.vocab_size, cfg.d_emb, rng);
        let fwd = LstmCell::new(store, "enc.fwd", cfg.d_emb, cfg.d_h, rng);
        let bwd = LstmCell::new(store, "enc.bwd", cfg.d_emb, cfg.d_h, rng);
        Encoder { emb, fwd, bwd, cfg }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.emb];
        ids.extend(self.fwd.param_ids());
        ids.extend(self.bwd.param_ids());
        ids
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Result<EncodedSentence> {
        for &id in token_ids {
            if id >= self.cfg.vocab_size {
                return Err(Error::invalid(format!(
                    "token id {id} out of vocabulary (size {})",
                    self.cfg.vocab_size
                )));
            }
        }
        let n = token_ids.len();
        let mut full = Vec::with_capacity(n + 2);
        full.push(self.cfg.head_id);
        full.extend_from_slice(token_ids);
        full.push(self.cfg.tail_id);

        let emb_node = tape.param(store, self.emb);
        let x_all = tape.embedding(emb_node, &full)?;
        let xs: Vec<NodeId> = (0..n + 2)
            .map(|t| tape.row(x_all, t))
            .collect::<Result<_>>()?;

        let zero = tape.constant(Tensor::zeros(&[self.cfg.d_h]));
        let mut h = zero;
        let mut c = zero;
        let mut fwd_states = Vec::with_capacity(n + 2);
        for &x in &xs {
            let (nh, nc) = self.fwd.step(tape, store, x, h, c)?;
            h = nh;
            c = nc;
            fwd_states.push(nh);
        }
        let mut h = zero;
        let mut c = zero;
        let mut bwd_states = vec![NodeId(0); n + 2];
        for t in (0..n + 2).rev() {
            let (nh, nc) = self.bwd.step(tape, store, xs[t], h, c)?;
            h = nh;
            c = nc;
            bwd_states[t] = nh;
        }
        let rows: Vec<NodeId> = (0..n + 2)
            .map(|t| tape.concat(&[fwd_states[t], bwd_states[t]]))
            .collect::<Result<_>>()?;
        let h_mat = tape.stack_rows(&rows)?;
        Ok(EncodedSentence { h: h_mat, n })
    }
}
