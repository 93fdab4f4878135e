//! Full generator model: encoder + tracing decoder + the three-part
//! objective J = L_Gen + alpha * L_Att + beta * L_Bol.

use serde::{Deserialize, Serialize};

use crate::corpus::DecodingTarget;
use crate::decoder::{Decoder, DecoderConfig, MaskVariant, TeacherForcing, LOSS_BOL, LOSS_GEN};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::substream;
use crate::schema::EventSchema;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schema: EventSchema,
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub s_dim: usize,
    pub d_lab: usize,
    pub mask_variant: MaskVariant,
}

impl ModelConfig {
    pub fn small(schema: EventSchema, vocab_size: usize) -> Self {
        ModelConfig {
            schema,
            vocab_size,
            d_emb: 32,
            d_h: 32,
            s_dim: 64,
            d_lab: 16,
            mask_variant: MaskVariant::OneHot,
        }
    }

    pub fn label_count(&self) -> usize {
        self.schema.num_labels()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub cfg: ModelConfig,
}

/// One training example, already numericalized.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub token_ids: &'a [usize],
    pub target: &'a DecodingTarget,
    pub domain: &'a str,
}

/// Loss nodes on the tape, one per objective term plus their combination.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub l_gen: NodeId,
    pub l_att: NodeId,
    pub l_bol: NodeId,
    pub j: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gen: f64,
    pub l_att: f64,
    pub l_bol: f64,
    pub j: f64,
    pub alpha_loss: f64,
    pub beta_loss: f64,
}

/// Per-sentence artifacts the caller may need for auxiliary objectives.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub losses: LossNodes,
    pub breakdown: LossBreakdown,
    /// Raw encoder output and token count for every batch sentence.
    pub encodings: Vec<(NodeId, usize)>,
}

/// Hook transforming encoder features before the decoder sees them. The
/// sentence's domain tag is passed so domain-specific transforms can pick
/// their parameters.
pub trait FeatureHook {
    fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        n: usize,
        domain: &str,
    ) -> Result<NodeId>;
}

/// Default pass-through.
pub struct IdentityHook;

impl FeatureHook for IdentityHook {
    fn apply(&self, _: &mut Tape, _: &ParamStore, h: NodeId, _: usize, _: &str) -> Result<NodeId> {
        Ok(h)
    }
}

impl Model {
    pub fn new(store: &mut ParamStore, cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = substream(seed, "init");
        let encoder = Encoder::new(
            store,
            EncoderConfig::new(cfg.vocab_size, cfg.d_emb, cfg.d_h),
            &mut rng,
        );
        let decoder = Decoder::new(
            store,
            DecoderConfig {
                d_h: cfg.d_h,
                s_dim: cfg.s_dim,
                d_lab: cfg.d_lab,
                label_count: cfg.label_count(),
                mask_variant: cfg.mask_variant,
            },
            &mut rng,
        );
        // The attention map is trained by L_Att alone.
        store.with_barrier(LOSS_GEN, &[decoder.w_a]);
        store.with_barrier(LOSS_BOL, &[decoder.w_a]);
        Model { encoder, decoder, cfg }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.decoder.param_ids());
        ids
    }

    /// Teacher-forced loss graph for one sentence. Returns the three
    /// per-sentence loss nodes (unweighted sums over steps).
    fn sentence_losses(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_used: NodeId,
        n: usize,
        target: &DecodingTarget,
        tf: &mut TeacherForcing,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        if target.sentence_len != n {
            return Err(Error::invalid(format!(
                "target built for a {}-token sentence, got {n} tokens",
                target.sentence_len
            )));
        }
        let label_count = self.cfg.label_count();
        let schema = &self.cfg.schema;
        let rows = n + 2;
        let mut state = self.decoder.init_state(tape);
        let mut y_prev = schema.bos_id();
        let mut l_gen: Option<NodeId> = None;
        let mut l_att: Option<NodeId> = None;
        let mut o_sum: Option<NodeId> = None;
        for step_target in &target.steps {
            let step = self.decoder.step(
                tape,
                store,
                h_used,
                &mut state,
                y_prev,
                Some(step_target.attend_index),
                tf,
            )?;
            // Cross-entropy of the gold label is KL(one-hot || y_t).
            let gold_label = tape.constant(Tensor::one_hot(label_count, step_target.label));
            let ce = tape.kl_div(gold_label, step.y)?;
            l_gen = Some(match l_gen {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
            // Gold attention spreads 1/k over the k trigger positions.
            let mut dist = vec![0.0; rows];
            let k = step_target.attend_support.len();
            for &p in &step_target.attend_support {
                dist[p] = 1.0 / k as f64;
            }
            let gold_att = tape.constant(Tensor::vector(dist));
            let att = tape.kl_div(gold_att, step.alpha_hat)?;
            l_att = Some(match l_att {
                Some(acc) => tape.add(acc, att)?,
                None => att,
            });
            o_sum = Some(match o_sum {
                Some(acc) => tape.add(acc, step.o)?,
                None => step.o,
            });
            y_prev = step_target.label;
        }
        // Bag-of-labels: p_b = sigmoid of summed logits, target multi-hot
        // over generated labels with the structural EOS/BOS excluded.
        let mut bag = vec![0.0; label_count];
        for s in &target.steps {
            if s.label != schema.eos_id() && s.label != schema.bos_id() {
                bag[s.label] = 1.0;
            }
        }
        let p_b = tape.sigmoid(o_sum.expect("targets always have steps"))?;
        let bag_node = tape.constant(Tensor::vector(bag));
        let l_bol = tape.kl_div(bag_node, p_b)?;
        Ok((l_gen.unwrap(), l_att.unwrap(), l_bol))
    }

    /// Batch objective with teacher forcing; losses are per-sentence means.
    #[allow(clippy::too_many_arguments)]
    pub fn compute_losses(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[BatchItem<'_>],
        tf: &mut TeacherForcing,
        alpha_loss: f64,
        beta_loss: f64,
        hook: &dyn FeatureHook,
    ) -> Result<BatchForward> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut gen_total: Option<NodeId> = None;
        let mut att_total: Option<NodeId> = None;
        let mut bol_total: Option<NodeId> = None;
        let mut encodings = Vec::with_capacity(batch.len());
        for item in batch {
            let encoded = self.encoder.encode(tape, store, item.token_ids)?;
            encodings.push((encoded.h, encoded.n));
            let h_used = hook.apply(tape, store, encoded.h, encoded.n, item.domain)?;
            let (g, a, b) =
                self.sentence_losses(tape, store, h_used, encoded.n, item.target, tf)?;
            gen_total = Some(match gen_total {
                Some(acc) => tape.add(acc, g)?,
                None => g,
            });
            att_total = Some(match att_total {
                Some(acc) => tape.add(acc, a)?,
                None => a,
            });
            bol_total = Some(match bol_total {
                Some(acc) => tape.add(acc, b)?,
                None => b,
            });
        }
        let inv = 1.0 / batch.len() as f64;
        let l_gen = tape.scale(gen_total.unwrap(), inv)?;
        let l_att = tape.scale(att_total.unwrap(), inv)?;
        let l_bol = tape.scale(bol_total.unwrap(), inv)?;
        let att_w = tape.scale(l_att, alpha_loss)?;
        let bol_w = tape.scale(l_bol, beta_loss)?;
        let weighted = tape.add(att_w, bol_w)?;
        let j = tape.add(l_gen, weighted)?;
        let breakdown = LossBreakdown {
            l_gen: tape.value(l_gen).item(),
            l_att: tape.value(l_att).item(),
            l_bol: tape.value(l_bol).item(),
            j: tape.value(j).item(),
            alpha_loss,
            beta_loss,
        };
        Ok(BatchForward {
            losses: LossNodes { l_gen, l_att, l_bol, j },
            breakdown,
            encodings,
        })
    }

    /// Accumulate dJ into the store's gradient slots, running one backward
    /// pass per objective term so the gradient barriers apply.
    pub fn accumulate_gradients(
        &self,
        tape: &Tape,
        store: &mut ParamStore,
        losses: &LossNodes,
        alpha_loss: f64,
        beta_loss: f64,
    ) -> Result<()> {
        let g_gen = tape.backward(losses.l_gen, store, LOSS_GEN)?;
        store.accumulate(&g_gen, 1.0);
        let g_att = tape.backward(losses.l_att, store, crate::decoder::LOSS_ATT)?;
        store.accumulate(&g_att, alpha_loss);
        let g_bol = tape.backward(losses.l_bol, store, LOSS_BOL)?;
        store.accumulate(&g_bol, beta_loss);
        Ok(())
    }
}
