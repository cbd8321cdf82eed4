use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::lattice::Lattice;
use crate::luti::{self, DirectTable, EmbedMode, InterpCache, LatticeCache, NodeStrategy, TvNorm};
use crate::nn::{fold_batchnorm, init_params, ForwardCache, MlpParams, Mode, Upstream, BN_MOMENTUM};
use crate::optim::{Adam, AdamConfig};

use super::aggregate::aggregate_max;
use super::model::{argmax, Embedding, Model};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Embedding width.
    pub k: usize,
    /// Lattice nodes per axis for lattice variants.
    pub d: usize,
    pub seed: u64,
    pub lambda_tv: f64,
    pub tv_norm: TvNorm,
    /// Fraction of epochs trained as a plain MLP before switching to the lattice.
    pub pretrain_frac: f64,
    pub adam: AdamConfig,
    pub dropout: f64,
    pub embed_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub node_strategy: NodeStrategy,
    /// Trained baseline reused by the approximation variants instead of training one.
    pub base_model: Option<Arc<Model>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            k: 256,
            d: 4,
            seed: 0,
            lambda_tv: 1.0,
            tv_norm: TvNorm::L2,
            pretrain_frac: 0.0,
            adam: AdamConfig::default(),
            dropout: 0.3,
            embed_hidden: vec![64, 64, 64, 128],
            head_hidden: vec![256, 128],
            node_strategy: NodeStrategy::Auto,
            base_model: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale preset: K=1024, 200 epochs.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 200,
            k: 1024,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.k == 0 {
            return Err(Error::invalid("embedding width must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pretrain_frac) {
            return Err(Error::invalid("pretrain fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.lambda_tv >= 0.0) {
            return Err(Error::invalid("lambda_tv must be non-negative"));
        }
        Ok(())
    }

    pub(crate) fn embed_widths(&self) -> Vec<usize> {
        let mut w = vec![3];
        w.extend(&self.embed_hidden);
        w.push(self.k);
        w
    }

    fn head_widths(&self, classes: usize) -> Vec<usize> {
        let mut w = vec![self.k];
        w.extend(&self.head_hidden);
        w.push(classes);
        w
    }

    pub(crate) fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.d)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: &'static str,
    pub loss: f64,
    pub train_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Trainable embedding parameters.
pub(crate) enum EmbedState {
    Mlp(MlpParams),
    Lattice {
        mlp: MlpParams,
        lattice: Lattice,
        mode: EmbedMode,
    },
    Direct {
        table: DirectTable,
        mode: EmbedMode,
    },
}

impl EmbedState {
    fn stage(&self) -> &'static str {
        match self {
            EmbedState::Mlp(_) => "mlp",
            EmbedState::Lattice { .. } => "lattice",
            EmbedState::Direct { .. } => "direct",
        }
    }

    pub(crate) fn into_embedding(self) -> Result<Embedding> {
        Ok(match self {
            EmbedState::Mlp(m) => Embedding::Mlp(m),
            EmbedState::Lattice { mlp, lattice, mode } => Embedding::Lattice { mlp, lattice, mode },
            EmbedState::Direct { table, mode } => Embedding::Table {
                table: table.freeze(),
                mode,
            },
        })
    }
}

enum EmbedCtx {
    Mlp(ForwardCache),
    Lattice(LatticeCache, Vec<f64>),
    Direct(InterpCache, Vec<f64>),
}

impl EmbedCtx {
    fn output(&self) -> &[f64] {
        match self {
            EmbedCtx::Mlp(c) => c.output(),
            EmbedCtx::Lattice(_, z) | EmbedCtx::Direct(_, z) => z,
        }
    }
}

fn embed_forward(state: &EmbedState, pts: &[Point], strategy: NodeStrategy) -> Result<EmbedCtx> {
    Ok(match state {
        EmbedState::Mlp(m) => {
            let flat: Vec<f64> = pts.iter().flatten().copied().collect();
            EmbedCtx::Mlp(m.forward_batch(&flat, pts.len(), Mode::Train, None)?)
        }
        EmbedState::Lattice { mlp, lattice, mode } => {
            let (z, c) = luti::train_forward(mlp, lattice, pts, *mode, strategy)?;
            EmbedCtx::Lattice(c, z)
        }
        EmbedState::Direct { table, mode } => {
            let (z, c) = luti::direct_forward(table, pts, *mode);
            EmbedCtx::Direct(c, z)
        }
    })
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[y];
        for c in 0..classes {
            let p = (row[c] - lse).exp();
            grad[i * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

pub(crate) struct Trainer<'a> {
    pub data: &'a Dataset,
    pub labels: Vec<usize>,
    pub cfg: &'a TrainConfig,
    pub head: MlpParams,
    pub history: Vec<EpochRecord>,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let labels = data.labels()?;
        let classes = data.num_classes();
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(Trainer {
            data,
            labels,
            cfg,
            head: init_params(&cfg.head_widths(classes), true, cfg.seed.wrapping_add(1)),
            history: Vec::new(),
            shuffle_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3)),
            dropout_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
        })
    }

    /// Trains `state` and the head for epochs `[from, to)` with a fresh optimizer.
    pub fn run(&mut self, state: &mut EmbedState, from: usize, to: usize) -> Result<()> {
        let mut adam = Adam::new();
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        for epoch in from..to {
            let start = Instant::now();
            let lr = self.cfg.adam.lr_at_epoch(epoch);
            order.shuffle(&mut self.shuffle_rng);
            let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
            for batch in order.chunks(self.cfg.batch_size) {
                if batch.len() < 2 {
                    continue;
                }
                let (loss, hits) = self.step(state, &mut adam, lr, batch)?;
                loss_sum += loss * batch.len() as f64;
                correct += hits;
                seen += batch.len();
            }
            let seen_f = seen.max(1) as f64;
            let rec = EpochRecord {
                epoch,
                stage: state.stage(),
                loss: loss_sum / seen_f,
                train_acc: correct as f64 / seen_f,
                lr,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} [{}] loss {:.4} acc {:.3} ({:.1}s)",
                rec.epoch,
                rec.stage,
                rec.loss,
                rec.train_acc,
                rec.seconds
            );
            self.history.push(rec);
        }
        Ok(())
    }

    fn step(&mut self, state: &mut EmbedState, adam: &mut Adam, lr: f64, batch: &[usize]) -> Result<(f64, usize)> {
        let k = self.cfg.k;
        let classes = self.data.num_classes();
        let mut offsets = Vec::with_capacity(batch.len() + 1);
        offsets.push(0);
        let mut pts = Vec::new();
        for &i in batch {
            pts.extend_from_slice(&self.data.clouds[i].points);
            offsets.push(pts.len());
        }
        let ctx = embed_forward(state, &pts, self.cfg.node_strategy)?;
        let z = ctx.output();
        if z.len() != pts.len() * k {
            return Err(Error::DimensionMismatch {
                expected: pts.len() * k,
                actual: z.len(),
                context: "embedding width vs config k",
            });
        }

        let b = batch.len();
        let mut feats = Vec::with_capacity(b * k);
        let mut argmax_rows = Vec::with_capacity(b * k);
        for j in 0..b {
            let g = aggregate_max(&z[offsets[j] * k..offsets[j + 1] * k], k)?;
            feats.extend_from_slice(&g.a);
            argmax_rows.extend(g.argmax_ids.iter().map(|&i| offsets[j] + i));
        }

        let head_cache = self.head.forward_batch(
            &feats,
            b,
            Mode::Train,
            Some((self.cfg.dropout, &mut self.dropout_rng)),
        )?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        let logits = head_cache.output();
        let (mut loss, dlogits) = softmax_cross_entropy(logits, &labels, classes);
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(j, &y)| argmax(&logits[j * classes..(j + 1) * classes]) == y)
            .count();
        let head_grads = self.head.backward(&head_cache, Upstream::Dense(&dlogits), true)?;

        let entries: Vec<(usize, usize, f64)> = argmax_rows
            .iter()
            .enumerate()
            .map(|(idx, &row)| (row, idx % k, head_grads.input[idx]))
            .filter(|e| e.2 != 0.0)
            .collect();

        let mut params: Vec<&mut [f64]> = Vec::new();
        let mut grads: Vec<&[f64]> = head_grads.tensors();
        let embed_grads;
        let table_grad;
        match (state, &ctx) {
            (EmbedState::Mlp(m), EmbedCtx::Mlp(cache)) => {
                embed_grads = m.backward(cache, Upstream::Sparse(&entries), false)?;
                m.absorb_batch_stats(cache, BN_MOMENTUM);
                grads.extend(embed_grads.tensors());
                params.extend(self.head.tensors_mut());
                params.extend(m.tensors_mut());
            }
            (EmbedState::Lattice { mlp, .. }, EmbedCtx::Lattice(cache, _)) => {
                embed_grads = luti::train_backward(mlp, cache, Upstream::Sparse(&entries))?;
                grads.extend(embed_grads.tensors());
                params.extend(self.head.tensors_mut());
                params.extend(mlp.tensors_mut());
            }
            (EmbedState::Direct { table, .. }, EmbedCtx::Direct(cache, _)) => {
                let mut g = luti::direct_backward(table, cache, Upstream::Sparse(&entries))?;
                if self.cfg.lambda_tv > 0.0 {
                    let (tv, tv_grad) = luti::tv_regularizer(table, self.cfg.tv_norm);
                    loss += self.cfg.lambda_tv * tv;
                    for (a, t) in g.iter_mut().zip(&tv_grad) {
                        *a += self.cfg.lambda_tv * t;
                    }
                }
                table_grad = g;
                grads.push(&table_grad);
                params.extend(self.head.tensors_mut());
                params.push(&mut table.data[..]);
            }
            _ => unreachable!("embedding context matches its state"),
        }
        adam.step(&self.cfg.adam, lr, params, &grads);
        self.head.absorb_batch_stats(&head_cache, BN_MOMENTUM);
        Ok((loss, hits))
    }

    pub fn finish(self, variant: &str, state: EmbedState) -> Result<TrainOutcome> {
        Ok(TrainOutcome {
            model: Model {
                variant: variant.to_string(),
                embedding: state.into_embedding()?,
                head: self.head,
                class_names: self.data.class_names.clone(),
            },
            history: self.history,
        })
    }
}

/// Baseline MLP, optionally for only the first `epochs` epochs.
pub(crate) fn train_baseline(data: &Dataset, cfg: &TrainConfig, variant: &str) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, cfg)?;
    let mut state = EmbedState::Mlp(init_params(&cfg.embed_widths(), true, cfg.seed));
    trainer.run(&mut state, 0, cfg.epochs)?;
    trainer.finish(variant, state)
}

/// End-to-end lattice training, with the optional plain-MLP warm start.
pub(crate) fn train_lattice(data: &Dataset, cfg: &TrainConfig, variant: &str, mode: EmbedMode) -> Result<TrainOutcome> {
    let lattice = cfg.lattice()?;
    let mut trainer = Trainer::new(data, cfg)?;
    let pre = (cfg.pretrain_frac * cfg.epochs as f64).round() as usize;
    let mlp = if pre > 0 {
        let mut warm = EmbedState::Mlp(init_params(&cfg.embed_widths(), true, cfg.seed));
        trainer.run(&mut warm, 0, pre)?;
        match warm {
            EmbedState::Mlp(m) => fold_batchnorm(&m)?,
            _ => unreachable!(),
        }
    } else {
        init_params(&cfg.embed_widths(), false, cfg.seed)
    };
    let mut state = EmbedState::Lattice { mlp, lattice, mode };
    trainer.run(&mut state, pre, cfg.epochs)?;
    trainer.finish(variant, state)
}

/// Direct table training with total-variation smoothing. The table starts as the bake of a
/// freshly initialized embedding MLP.
pub(crate) fn train_direct(data: &Dataset, cfg: &TrainConfig, variant: &str, mode: EmbedMode) -> Result<TrainOutcome> {
    let lattice = cfg.lattice()?;
    let init = luti::bake(&init_params(&cfg.embed_widths(), false, cfg.seed), &lattice)?;
    let table = DirectTable::from_data(lattice, cfg.k, init.into_data())?;
    let mut trainer = Trainer::new(data, cfg)?;
    let mut state = EmbedState::Direct { table, mode };
    trainer.run(&mut state, 0, cfg.epochs)?;
    trainer.finish(variant, state)
}

/// Bakes a trained baseline's embedding without further training; the head is reused as is.
pub(crate) fn approximate(base: &Model, cfg: &TrainConfig, variant: &str, mode: EmbedMode) -> Result<Model> {
    let Embedding::Mlp(mlp) = &base.embedding else {
        return Err(Error::invalid("approximation needs a baseline mlp model"));
    };
    let folded = fold_batchnorm(mlp)?;
    let table = luti::bake(&folded, &cfg.lattice()?)?;
    Ok(Model {
        variant: variant.to_string(),
        embedding: Embedding::Table { table, mode },
        head: base.head.clone(),
        class_names: base.class_names.clone(),
    })
}
