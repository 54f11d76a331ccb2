//! Sequence CNN regressor over link/cross step sequences.
//!
//! The link path embeds each link id, appends the three per-step scalars,
//! and runs two stacked banks of width-{2,3,4,5} 1-D convolutions (strides 1
//! then 2, 32 filters each) with channel-wise global max pooling after each
//! bank. The cross path embeds cross ids spliced with the cross time and
//! runs one stride-1 bank. The three pooled 128-vectors (384 features
//! total) join the embedded categorical tokens and the dense trip features
//! in an interaction MLP; the head consumes the interaction output together
//! with trip-level aggregates and emits `z`, from which the prediction is
//! `simple_eta * exp(0.25 * z)` — a learned multiplicative correction to the
//! naive estimate, positive by construction. Training minimizes MAPE with
//! hand-written reverse-mode gradients and Adam.
//!
//! Variable-length inputs use a reserved padding token whose embedding row
//! is pinned to zero; convolution windows are only produced over the valid
//! prefix, so appending padding steps never changes a prediction.
//!
//! Numeric detail: raw seconds/meters magnitudes go through `ln(1+x)` at the
//! step-scalar, dense, and head inputs. The public `embed_and_append` op
//! emits raw scalars; the scaling is applied by `forward` right after it.

pub mod gradcheck;
pub mod layers;
pub mod tensor;
pub mod vocab;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::features::{CategoricalFeatures, DenseFeatures};
use crate::trip::{truncate_links, LinkStep, Trip, Truncation};
use layers::{
    adam_step, mape_loss, max_pool_with_argmax, BankForward, ConvBank, Embedding, Linear, Mlp,
    Param,
};
use tensor::Tensor;
use vocab::Vocab;

pub use layers::{conv_output_len, global_max_pool};
pub use vocab::PAD_RAW_ID;

pub const CONV_SIZES: [usize; 4] = [2, 3, 4, 5];
pub const FILTERS_PER_SIZE: usize = 32;
/// Pooled width of one bank: 4 sizes x 32 filters.
pub const POOLED_PER_BANK: usize = 128;
/// Conv features entering the interaction MLP: two link banks + cross bank.
pub const CONV_FEATURES: usize = 3 * POOLED_PER_BANK;

const DENSE_DIM: usize = 10;
const HEAD_EXTRAS: usize = 5;
/// Temperature of the multiplicative head correction.
const TAU: f64 = 0.25;
const Z_CLAMP: f64 = 20.0;
const MODEL_VERSION: &str = "eta-fuse-nn/1";

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite activation in layer `{layer}`")]
    NonFinite { layer: &'static str },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("MAPE target must be finite and > 0, got {0}")]
    NonPositiveTarget(f64),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("model is untrained")]
    Untrained,
    #[error("model file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension `d` shared by all six tables.
    pub embed_dim: usize,
    pub truncation: Truncation,
    pub max_seq_len: usize,
    pub max_cross_len: usize,
    /// Interaction MLP widths; the last entry is its output size.
    pub mlp_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 9,
            truncation: Truncation::Front,
            max_seq_len: 200,
            max_cross_len: 200,
            mlp_widths: vec![128],
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 20,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn variant_name(&self) -> String {
        format!("nn_d{}_{}", self.embed_dim, self.truncation.as_str())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mape: f64,
    pub val_mape: f64,
}

/// A trip pre-encoded for the network: dictionary tokens, raw step scalars,
/// and the already-scaled flat inputs.
#[derive(Debug, Clone)]
pub struct EncodedTrip {
    pub order_id: String,
    pub target: f64,
    link_tokens: Vec<usize>,
    link_scalars: Vec<[f64; 3]>,
    link_valid: usize,
    cross_tokens: Vec<usize>,
    cross_times: Vec<f64>,
    cross_valid: usize,
    slice_tok: usize,
    driver_tok: usize,
    last_tok: usize,
    second_tok: usize,
    dense_scaled: [f64; DENSE_DIM],
    head_extras: [f64; HEAD_EXTRAS],
    simple_eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeqCnnModel {
    pub config: ModelConfig,
    link_vocab: Vocab,
    cross_vocab: Vocab,
    driver_vocab: Vocab,
    emb_link: Embedding,
    emb_cross: Embedding,
    emb_driver: Embedding,
    emb_slice: Embedding,
    emb_last: Embedding,
    emb_second: Embedding,
    conv_link1: ConvBank,
    conv_link2: ConvBank,
    conv_cross: ConvBank,
    interaction: Mlp,
    head: Linear,
    /// Adam step count.
    step: usize,
    trained: bool,
    pub epoch_metrics: Vec<EpochMetrics>,
}

struct ForwardCache {
    m: Tensor,
    l1: BankForward,
    pool1_arg: Vec<Vec<usize>>,
    l2_input: Tensor,
    l2_valid: usize,
    l2: BankForward,
    pool2_arg: Vec<Vec<usize>>,
    cross_in: Tensor,
    cross: BankForward,
    pool3_arg: Vec<Vec<usize>>,
    interaction_in: Vec<f64>,
    mlp_acts: Vec<Vec<f64>>,
    head_in: Vec<f64>,
    z: f64,
    pred: f64,
}

fn ln1p(x: f64) -> f64 {
    x.ln_1p()
}

fn check_finite(values: &[f64], layer: &'static str) -> Result<(), NnError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer })
    }
}

/// Embeds each link id and appends its raw `(link_time, link_ratio,
/// link_status)` scalars, giving an `s x (d + 3)` matrix.
pub fn embed_and_append(links: &[LinkStep], emb: &Embedding, vocab: &Vocab) -> Tensor {
    let d = emb.dim();
    let mut out = Tensor::zeros(vec![links.len(), d + 3]);
    for (i, step) in links.iter().enumerate() {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(emb.row(vocab.encode(step.link_id)));
        row[d] = step.link_time;
        row[d + 1] = step.link_ratio;
        row[d + 2] = f64::from(step.link_status);
    }
    out
}

/// Applies the whole bank to a full-length input, returning one rectified
/// feature map per region size (`((s - h) / stride + 1) x F`, or a single
/// zero-padded position when `s < h`).
pub fn conv1d(input: &Tensor, bank: &ConvBank) -> Vec<Tensor> {
    let fwd = bank.forward(input, input.rows());
    (0..bank.sizes.len())
        .map(|si| fwd.map(si, bank.filters_per_size))
        .collect()
}

fn valid_prefix(tokens: &[usize]) -> usize {
    tokens
        .iter()
        .position(|&t| t == vocab::PAD)
        .unwrap_or(tokens.len())
}

impl SeqCnnModel {
    /// Builds an untrained model whose vocabularies are dictionary-encoded
    /// from the training trips. Initialization is fully determined by
    /// `config.seed`.
    pub fn new(config: ModelConfig, train_trips: &[Trip]) -> SeqCnnModel {
        assert!(config.embed_dim >= 1, "embed_dim must be positive");
        assert!(
            config.mlp_widths.iter().all(|&w| w > 0),
            "MLP widths must be positive"
        );
        let link_vocab = Vocab::build(
            train_trips
                .iter()
                .flat_map(|t| t.links.iter().map(|l| l.link_id)),
        );
        let cross_vocab = Vocab::build(
            train_trips
                .iter()
                .flat_map(|t| t.crosses.iter().map(|c| c.cross_id)),
        );
        let driver_vocab = Vocab::build(train_trips.iter().map(|t| t.header.driver_id));

        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "nn/init"));
        let emb_link = Embedding::new("emb_link", link_vocab.size(), d, true, &mut rng);
        let emb_cross = Embedding::new("emb_cross", cross_vocab.size(), d, true, &mut rng);
        let emb_driver = Embedding::new("emb_driver", driver_vocab.size(), d, false, &mut rng);
        let emb_slice = Embedding::new(
            "emb_slice",
            usize::from(crate::trip::SLICES_PER_DAY),
            d,
            false,
            &mut rng,
        );
        // index 0 is the "no previous order" sentinel, then the 288 slices
        let emb_last = Embedding::new(
            "emb_last",
            usize::from(crate::trip::SLICES_PER_DAY) + 1,
            d,
            false,
            &mut rng,
        );
        let emb_second = Embedding::new(
            "emb_second",
            usize::from(crate::trip::SLICES_PER_DAY) + 1,
            d,
            false,
            &mut rng,
        );

        let conv_link1 = ConvBank::new(
            "conv_link1",
            CONV_SIZES.to_vec(),
            1,
            d + 3,
            FILTERS_PER_SIZE,
            &mut rng,
        );
        let conv_link2 = ConvBank::new(
            "conv_link2",
            CONV_SIZES.to_vec(),
            2,
            POOLED_PER_BANK,
            FILTERS_PER_SIZE,
            &mut rng,
        );
        let conv_cross = ConvBank::new(
            "conv_cross",
            CONV_SIZES.to_vec(),
            1,
            d + 1,
            FILTERS_PER_SIZE,
            &mut rng,
        );

        let interaction_in = CONV_FEATURES + 4 * d + DENSE_DIM;
        let interaction = Mlp::new("interaction", interaction_in, &config.mlp_widths, &mut rng);
        // zero-initialized head: the first prediction is simple_eta itself
        let head = Linear::zeros("head", interaction.out_dim() + HEAD_EXTRAS, 1);

        SeqCnnModel {
            config,
            link_vocab,
            cross_vocab,
            driver_vocab,
            emb_link,
            emb_cross,
            emb_driver,
            emb_slice,
            emb_last,
            emb_second,
            conv_link1,
            conv_link2,
            conv_cross,
            interaction,
            head,
            step: 0,
            trained: false,
            epoch_metrics: Vec::new(),
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Width of the pooled convolution features entering the interaction MLP.
    pub fn conv_feature_width(&self) -> usize {
        CONV_FEATURES
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![
            &mut self.emb_link.table,
            &mut self.emb_cross.table,
            &mut self.emb_driver.table,
            &mut self.emb_slice.table,
            &mut self.emb_last.table,
            &mut self.emb_second.table,
        ];
        out.extend(self.conv_link1.params_mut());
        out.extend(self.conv_link2.params_mut());
        out.extend(self.conv_cross.params_mut());
        out.extend(self.interaction.params_mut());
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Encodes a trip (plus its dense/categorical features) for the network:
    /// truncates sequences per the model config, dictionary-encodes ids, and
    /// precomputes the scaled flat inputs.
    pub fn encode(
        &self,
        trip: &Trip,
        dense: &DenseFeatures,
        cats: &CategoricalFeatures,
    ) -> EncodedTrip {
        let truncated = truncate_links(trip, self.config.max_seq_len, self.config.truncation);
        let link_tokens: Vec<usize> = truncated
            .links
            .iter()
            .map(|l| self.link_vocab.encode(l.link_id))
            .collect();
        let link_scalars: Vec<[f64; 3]> = truncated
            .links
            .iter()
            .map(|l| [l.link_time, l.link_ratio, f64::from(l.link_status)])
            .collect();
        let link_valid = valid_prefix(&link_tokens);

        let crosses: Vec<&crate::trip::CrossStep> = match self.config.truncation {
            Truncation::Front => truncated
                .crosses
                .iter()
                .take(self.config.max_cross_len)
                .collect(),
            Truncation::Back => {
                let skip = truncated
                    .crosses
                    .len()
                    .saturating_sub(self.config.max_cross_len);
                truncated.crosses.iter().skip(skip).collect()
            }
        };
        let cross_tokens: Vec<usize> = crosses
            .iter()
            .map(|c| self.cross_vocab.encode(c.cross_id))
            .collect();
        let cross_times: Vec<f64> = crosses.iter().map(|c| c.cross_time).collect();
        let cross_valid = valid_prefix(&cross_tokens);

        let s: f64 = dense.status_counts.iter().sum::<f64>().max(1.0);
        let dense_scaled = [
            ln1p(dense.link_time_sum),
            ln1p(dense.link_time_max),
            ln1p(dense.cross_time_sum),
            ln1p(dense.cross_time_max),
            dense.status_counts[0] / s,
            dense.status_counts[1] / s,
            dense.status_counts[2] / s,
            dense.status_counts[3] / s,
            dense.congested_fraction,
            ln1p(dense.avg_speed),
        ];

        // mean ratio over the valid (non-padding) steps the conv consumes
        let mean_ratio = if link_valid > 0 {
            link_scalars[..link_valid].iter().map(|s| s[1]).sum::<f64>() / link_valid as f64
        } else {
            0.0
        };
        let head_extras = [
            ln1p(dense.link_time_sum),
            mean_ratio,
            ln1p(dense.cross_time_sum),
            ln1p(trip.header.distance),
            ln1p(trip.header.simple_eta),
        ];

        EncodedTrip {
            order_id: trip.header.order_id.clone(),
            target: trip.header.ata,
            link_tokens,
            link_scalars,
            link_valid,
            cross_tokens,
            cross_times,
            cross_valid,
            slice_tok: usize::from(cats.slice_id),
            driver_tok: self.driver_vocab.encode(cats.driver_id),
            last_tok: slice_history_token(cats.last_order_slice),
            second_tok: slice_history_token(cats.second_last_order_slice),
            dense_scaled,
            head_extras,
            simple_eta: trip.header.simple_eta,
        }
    }

    fn forward_encoded(&self, enc: &EncodedTrip) -> Result<(f64, ForwardCache), NnError> {
        let d = self.config.embed_dim;
        let f = FILTERS_PER_SIZE;

        // link path: embedding rows + scaled step scalars
        let n = enc.link_tokens.len();
        let mut m = Tensor::zeros(vec![n, d + 3]);
        for i in 0..n {
            let row = m.row_mut(i);
            row[..d].copy_from_slice(self.emb_link.row(enc.link_tokens[i]));
            row[d] = ln1p(enc.link_scalars[i][0]);
            row[d + 1] = enc.link_scalars[i][1];
            row[d + 2] = enc.link_scalars[i][2];
        }
        let l1 = self.conv_link1.forward(&m, enc.link_valid);

        let mut pooled = Vec::with_capacity(CONV_FEATURES);
        let mut pool1_arg = Vec::with_capacity(CONV_SIZES.len());
        for s in &l1.per_size {
            let (vals, arg) = max_pool_with_argmax(&s.out, s.positions, f);
            pooled.extend_from_slice(&vals);
            pool1_arg.push(arg);
        }

        // second link bank over the channel-concatenated first-bank maps
        let l2_valid = conv_output_len(enc.link_valid, *CONV_SIZES.last().unwrap(), 1);
        let mut l2_input = Tensor::zeros(vec![l2_valid, POOLED_PER_BANK]);
        for (si, s) in l1.per_size.iter().enumerate() {
            for l in 0..l2_valid {
                let src = &s.out[l * f..(l + 1) * f];
                l2_input.row_mut(l)[si * f..(si + 1) * f].copy_from_slice(src);
            }
        }
        let l2 = self.conv_link2.forward(&l2_input, l2_valid);
        let mut pool2_arg = Vec::with_capacity(CONV_SIZES.len());
        for s in &l2.per_size {
            let (vals, arg) = max_pool_with_argmax(&s.out, s.positions, f);
            pooled.extend_from_slice(&vals);
            pool2_arg.push(arg);
        }

        // cross path: embedding rows + scaled cross time
        let nc = enc.cross_tokens.len();
        let mut cross_in = Tensor::zeros(vec![nc, d + 1]);
        for i in 0..nc {
            let row = cross_in.row_mut(i);
            row[..d].copy_from_slice(self.emb_cross.row(enc.cross_tokens[i]));
            row[d] = ln1p(enc.cross_times[i]);
        }
        let cross = self.conv_cross.forward(&cross_in, enc.cross_valid);
        let mut pool3_arg = Vec::with_capacity(CONV_SIZES.len());
        for s in &cross.per_size {
            let (vals, arg) = max_pool_with_argmax(&s.out, s.positions, f);
            pooled.extend_from_slice(&vals);
            pool3_arg.push(arg);
        }
        debug_assert_eq!(pooled.len(), CONV_FEATURES);
        check_finite(&pooled, "conv_pool")?;

        // interaction: conv features || categorical embeddings || dense
        let mut interaction_in = pooled;
        interaction_in.extend_from_slice(self.emb_slice.row(enc.slice_tok));
        interaction_in.extend_from_slice(self.emb_driver.row(enc.driver_tok));
        interaction_in.extend_from_slice(self.emb_last.row(enc.last_tok));
        interaction_in.extend_from_slice(self.emb_second.row(enc.second_tok));
        interaction_in.extend_from_slice(&enc.dense_scaled);
        let (inter_out, mlp_acts) = self.interaction.forward(&interaction_in);
        check_finite(&inter_out, "interaction_mlp")?;

        let mut head_in = inter_out;
        head_in.extend_from_slice(&enc.head_extras);
        let z = self.head.forward(&head_in)[0];
        check_finite(&[z], "head")?;

        let z_clamped = z.clamp(-Z_CLAMP, Z_CLAMP);
        let pred = enc.simple_eta * (TAU * z_clamped).exp();

        Ok((
            pred,
            ForwardCache {
                m,
                l1,
                pool1_arg,
                l2_input,
                l2_valid,
                l2,
                pool2_arg,
                cross_in,
                cross,
                pool3_arg,
                interaction_in,
                mlp_acts,
                head_in,
                z,
                pred,
            },
        ))
    }

    /// Pure forward pass; the prediction is strictly positive.
    pub fn forward(
        &self,
        trip: &Trip,
        dense: &DenseFeatures,
        cats: &CategoricalFeatures,
    ) -> Result<f64, NnError> {
        let enc = self.encode(trip, dense, cats);
        Ok(self.forward_encoded(&enc)?.0)
    }

    fn backward(&mut self, enc: &EncodedTrip, cache: &ForwardCache, d_pred: f64) {
        let d = self.config.embed_dim;
        let f = FILTERS_PER_SIZE;

        // head transform: pred = simple_eta * exp(tau * clamp(z))
        let dz = if cache.z.abs() < Z_CLAMP {
            d_pred * cache.pred * TAU
        } else {
            0.0
        };
        let mut d_head_in = vec![0.0; cache.head_in.len()];
        self.head.backward(&cache.head_in, &[dz], &mut d_head_in);

        let inter_dim = self.interaction.out_dim();
        let mut d_interaction_in = vec![0.0; cache.interaction_in.len()];
        self.interaction.backward(
            &cache.mlp_acts,
            &d_head_in[..inter_dim],
            &mut d_interaction_in,
        );

        // categorical embedding gradients
        let base = CONV_FEATURES;
        self.emb_slice
            .accumulate_grad(enc.slice_tok, &d_interaction_in[base..base + d]);
        self.emb_driver
            .accumulate_grad(enc.driver_tok, &d_interaction_in[base + d..base + 2 * d]);
        self.emb_last
            .accumulate_grad(enc.last_tok, &d_interaction_in[base + 2 * d..base + 3 * d]);
        self.emb_second.accumulate_grad(
            enc.second_tok,
            &d_interaction_in[base + 3 * d..base + 4 * d],
        );

        // route pooled gradients back onto the feature maps
        let route = |arg: &[Vec<usize>], fwd: &BankForward, d_pool: &[f64]| -> Vec<Vec<f64>> {
            let mut maps = Vec::with_capacity(arg.len());
            for (si, s) in fwd.per_size.iter().enumerate() {
                let mut g = vec![0.0; s.positions * f];
                for c in 0..f {
                    g[arg[si][c] * f + c] += d_pool[si * f + c];
                }
                maps.push(g);
            }
            maps
        };
        let d_pool1 = &d_interaction_in[..POOLED_PER_BANK];
        let d_pool2 = &d_interaction_in[POOLED_PER_BANK..2 * POOLED_PER_BANK];
        let d_pool3 = &d_interaction_in[2 * POOLED_PER_BANK..3 * POOLED_PER_BANK];
        let mut d_maps1 = route(&cache.pool1_arg, &cache.l1, d_pool1);
        let d_maps2 = route(&cache.pool2_arg, &cache.l2, d_pool2);
        let d_maps3 = route(&cache.pool3_arg, &cache.cross, d_pool3);

        // second bank back to its concatenated input, then onto bank-1 maps
        let mut d_l2_input = vec![0.0; cache.l2_input.data().len()];
        self.conv_link2.backward(
            &cache.l2,
            &d_maps2,
            cache.l2_valid,
            &mut d_l2_input,
            POOLED_PER_BANK,
        );
        for (si, g) in d_maps1.iter_mut().enumerate() {
            for l in 0..cache.l2_valid {
                let src =
                    &d_l2_input[l * POOLED_PER_BANK + si * f..l * POOLED_PER_BANK + (si + 1) * f];
                for (dst, &x) in g[l * f..(l + 1) * f].iter_mut().zip(src) {
                    *dst += x;
                }
            }
        }

        // first bank back to the embedded link matrix
        let mut d_m = vec![0.0; cache.m.data().len()];
        self.conv_link1
            .backward(&cache.l1, &d_maps1, enc.link_valid, &mut d_m, d + 3);
        for (i, &tok) in enc.link_tokens.iter().enumerate() {
            self.emb_link
                .accumulate_grad(tok, &d_m[i * (d + 3)..i * (d + 3) + d]);
        }

        // cross bank back to the cross matrix
        let mut d_cross = vec![0.0; cache.cross_in.data().len()];
        self.conv_cross
            .backward(&cache.cross, &d_maps3, enc.cross_valid, &mut d_cross, d + 1);
        for (i, &tok) in enc.cross_tokens.iter().enumerate() {
            self.emb_cross
                .accumulate_grad(tok, &d_cross[i * (d + 1)..i * (d + 1) + d]);
        }
    }

    fn adam_update(&mut self) {
        self.step += 1;
        let t = self.step;
        let lr = self.config.learning_rate;
        for p in self.params_mut() {
            adam_step(p, t, lr);
        }
    }

    /// Mini-batch MAPE training with per-epoch train/validation metrics.
    /// Deterministic for a fixed seed; two runs produce identical weights.
    pub fn train(&mut self, train_trips: &[Trip], val_trips: &[Trip]) -> Result<(), NnError> {
        if train_trips.is_empty() {
            return Err(NnError::EmptyTrainingSet);
        }
        let history = crate::features::build_driver_history(train_trips);
        let encode_all = |trips: &[Trip], model: &SeqCnnModel| -> Vec<EncodedTrip> {
            trips
                .iter()
                .map(|t| {
                    let dense = crate::features::nn_dense(t);
                    let cats = crate::features::nn_categorical(t, &history);
                    model.encode(t, &dense, &cats)
                })
                .collect()
        };
        let enc_train = encode_all(train_trips, self);
        let enc_val = encode_all(val_trips, self);

        let n = enc_train.len();
        let batch_size = self.config.batch_size.max(1);
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.config.seed,
                &format!("nn/epoch/{epoch}"),
            ));
            order.shuffle(&mut rng);

            let mut loss_sum = 0.0;
            for batch in order.chunks(batch_size) {
                self.zero_grads();
                let mut batch_loss = 0.0;
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let enc = &enc_train[i];
                    let (pred, cache) = self.forward_encoded(enc)?;
                    let (loss, d_pred) = mape_loss(pred, enc.target)?;
                    batch_loss += loss;
                    self.backward(enc, &cache, d_pred * scale);
                }
                if !batch_loss.is_finite() {
                    return Err(NnError::Diverged { epoch });
                }
                loss_sum += batch_loss;
                self.adam_update();
            }
            let train_mape = loss_sum / n as f64;

            let val_mape = if enc_val.is_empty() {
                f64::NAN
            } else {
                let mut sum = 0.0;
                for enc in &enc_val {
                    let (pred, _) = self.forward_encoded(enc)?;
                    sum += mape_loss(pred, enc.target)?.0;
                }
                sum / enc_val.len() as f64
            };
            self.epoch_metrics.push(EpochMetrics {
                epoch,
                train_mape,
                val_mape,
            });
        }

        self.trained = true;
        Ok(())
    }

    /// Concatenated transfer features for the tree model: mean link and mean
    /// cross embedding over the (truncated) sequences plus the four
    /// categorical embedding rows — `6 * d` values.
    pub fn transfer_embedding(
        &self,
        trip: &Trip,
        cats: &CategoricalFeatures,
    ) -> Result<Vec<f64>, NnError> {
        if !self.trained {
            return Err(NnError::Untrained);
        }
        let dense = crate::features::nn_dense(trip);
        let enc = self.encode(trip, &dense, cats);
        let d = self.config.embed_dim;
        let mut out = Vec::with_capacity(6 * d);

        let mut link_mean = vec![0.0; d];
        if !enc.link_tokens.is_empty() {
            for &tok in &enc.link_tokens {
                for (m, &v) in link_mean.iter_mut().zip(self.emb_link.row(tok)) {
                    *m += v;
                }
            }
            let inv = 1.0 / enc.link_tokens.len() as f64;
            link_mean.iter_mut().for_each(|m| *m *= inv);
        }
        out.extend_from_slice(&link_mean);

        let mut cross_mean = vec![0.0; d];
        if !enc.cross_tokens.is_empty() {
            for &tok in &enc.cross_tokens {
                for (m, &v) in cross_mean.iter_mut().zip(self.emb_cross.row(tok)) {
                    *m += v;
                }
            }
            let inv = 1.0 / enc.cross_tokens.len() as f64;
            cross_mean.iter_mut().for_each(|m| *m *= inv);
        }
        out.extend_from_slice(&cross_mean);

        out.extend_from_slice(self.emb_slice.row(enc.slice_tok));
        out.extend_from_slice(self.emb_driver.row(enc.driver_tok));
        out.extend_from_slice(self.emb_last.row(enc.last_tok));
        out.extend_from_slice(self.emb_second.row(enc.second_tok));
        Ok(out)
    }

    /// Central finite-difference validation of the reverse-mode gradients.
    ///
    /// Samples `n_samples` trainable parameters (at least 200 for a
    /// meaningful check), compares the analytic gradient of the MAPE loss on
    /// `trip` against `(L(w+eps) - L(w-eps)) / 2 eps`, and returns the
    /// largest relative error with denominator `max(|a|, |n|, 1e-8)`.
    pub fn gradient_check(
        &mut self,
        trip: &Trip,
        dense: &DenseFeatures,
        cats: &CategoricalFeatures,
        epsilon: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<f64, NnError> {
        let enc = self.encode(trip, dense, cats);
        let target = trip.header.ata;

        self.zero_grads();
        let (pred, cache) = self.forward_encoded(&enc)?;
        let (_, d_pred) = mape_loss(pred, target)?;
        self.backward(&enc, &cache, d_pred);

        // sample (param, index) pairs over the trainable (non-frozen) space
        let sizes: Vec<(usize, usize)> = {
            let params = self.params_mut();
            params.iter().map(|p| (p.frozen_prefix, p.len())).collect()
        };
        let total: usize = sizes.iter().map(|(fp, len)| len - fp).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<(usize, usize, f64)> = Vec::with_capacity(n_samples);
        {
            let params = self.params_mut();
            for _ in 0..n_samples {
                let mut flat = rng.random_range(0..total);
                for (pi, &(fp, len)) in sizes.iter().enumerate() {
                    let span = len - fp;
                    if flat < span {
                        let idx = fp + flat;
                        picks.push((pi, idx, params[pi].g[idx]));
                        break;
                    }
                    flat -= span;
                }
            }
        }

        let mut max_rel: f64 = 0.0;
        for &(pi, idx, analytic) in &picks {
            let orig = {
                let mut params = self.params_mut();
                let orig = params[pi].w[idx];
                params[pi].w[idx] = orig + epsilon;
                orig
            };
            let loss_plus = {
                let (p, _) = self.forward_encoded(&enc)?;
                mape_loss(p, target)?.0
            };
            {
                let mut params = self.params_mut();
                params[pi].w[idx] = orig - epsilon;
            }
            let loss_minus = {
                let (p, _) = self.forward_encoded(&enc)?;
                mape_loss(p, target)?.0
            };
            {
                let mut params = self.params_mut();
                params[pi].w[idx] = orig;
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        }
        Ok(max_rel)
    }

    fn rehydrate(&mut self) {
        // gradient buffers are not serialized; size them back up
        self.zero_grads();
    }
}

fn slice_history_token(slice: i32) -> usize {
    if slice == crate::MISSING as i32 {
        0
    } else {
        (slice + 1) as usize
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NnModelFile {
    version: String,
    model: SeqCnnModel,
}

/// Writes the model as a versioned JSON container:
/// `{"version": "eta-fuse-nn/1", "model": {...}}` where `model` embeds the
/// config, the three id vocabularies, all six embedding tables, the three
/// convolution banks, the interaction MLP, the head, and the optimizer
/// moments/step. Floats round-trip exactly, so a reloaded model predicts
/// bit-identically.
pub fn save_model(model: &SeqCnnModel, path: &Path) -> Result<(), NnError> {
    let file = NnModelFile {
        version: MODEL_VERSION.to_string(),
        model: model.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| NnError::Format(e.to_string()))?;
    crate::fsutil::atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SeqCnnModel, NnError> {
    let text = std::fs::read_to_string(path)?;
    let file: NnModelFile =
        serde_json::from_str(&text).map_err(|e| NnError::Format(e.to_string()))?;
    if file.version != MODEL_VERSION {
        return Err(NnError::Format(format!(
            "version mismatch: file has `{}`, expected `{}`",
            file.version, MODEL_VERSION
        )));
    }
    let mut model = file.model;
    model.rehydrate();
    Ok(model)
}
