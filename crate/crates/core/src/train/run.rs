use rand::seq::SliceRandom;
use serde::Serialize;

use super::{adam_step, Checkpoint, OptimizerState, TrainConfig, TrainError};
use crate::corpus::{Dialogue, ExamplePool, PoolOptions, TrainingTriple, Vocabulary};
use crate::model::Parameters;
use crate::objectives::{
    lm_loss, lm_loss_with_grad, total_loss_with_grad, triple_scores, ObjectiveConfig, TripleInputs,
};
use crate::seed;

/// Epoch means of the training losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lm: f64,
    /// `None` when the contrastive path is disabled.
    pub contrastive: Option<f64>,
    pub total: f64,
    pub rank_acc_ctx: Option<f64>,
    pub rank_acc_spk: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Example pool matching the sequence limits of `config.model`.
pub fn build_pool(
    dialogues: Vec<Dialogue>,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<ExamplePool, TrainError> {
    Ok(ExamplePool::new(
        dialogues,
        vocab,
        PoolOptions {
            min_context: config.min_context,
            max_seq_len: Some(config.model.max_seq_len),
        },
    )?)
}

/// Config with `model.vocab_size` taken from the vocabulary.
pub fn resolve_config(config: &TrainConfig, vocab: &Vocabulary) -> TrainConfig {
    let mut resolved = config.clone();
    resolved.model.vocab_size = vocab.len();
    resolved
}

fn triple_seed(base: u64, epoch: usize, example: usize) -> u64 {
    seed::derive(base, &[epoch as u64, 1, example as u64])
}

fn shuffle_seed(base: u64, epoch: usize) -> u64 {
    seed::derive(base, &[epoch as u64, 0])
}

pub fn train(pool: &ExamplePool, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(pool, config, None, |_| {})
}

/// Continues `checkpoint` until `config.epochs` epochs have completed.
pub fn resume(
    pool: &ExamplePool,
    checkpoint: Checkpoint,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(pool, config, Some(checkpoint), |_| {})
}

/// The training loop.
///
/// Each epoch shuffles the examples, draws one negative of each kind per
/// example from seeds derived from `(config.seed, epoch, example)`, and
/// applies one optimizer step per mini-batch on the batch-mean loss. The
/// update path is single-threaded with a fixed reduction order, so a run is
/// a pure function of its inputs.
pub fn train_with<F: FnMut(&EpochStats)>(
    pool: &ExamplePool,
    config: &TrainConfig,
    start: Option<Checkpoint>,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError> {
    let config = resolve_config(config, pool.vocab());
    config.validate()?;
    let examples = pool.examples();
    if examples.is_empty() {
        return Err(TrainError::Config("the corpus yields no training examples".into()));
    }
    match pool.options().max_seq_len {
        Some(limit) if limit <= config.model.max_seq_len => {}
        _ => {
            return Err(TrainError::Config(format!(
                "example pool must be limited to the model's max_seq_len {}",
                config.model.max_seq_len
            )))
        }
    }
    let vocab_hash = pool.vocab().content_hash();
    let (mut params, mut optimizer, first_epoch) = match start {
        Some(ckpt) => {
            if ckpt.params.config != config.model {
                return Err(TrainError::Config("checkpoint model configuration differs from the run".into()));
            }
            if ckpt.vocab_hash != vocab_hash {
                return Err(TrainError::Config("checkpoint was trained with a different vocabulary".into()));
            }
            (ckpt.params, ckpt.optimizer, ckpt.epoch)
        }
        None => {
            let p = Parameters::init(&config.model)?;
            let o = OptimizerState::new(&p);
            (p, o, 0)
        }
    };

    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in first_epoch..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(shuffle_seed(config.seed, epoch)));
        let mut acc = EpochAccumulator::default();
        for batch in order.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut grads = params.zeros_like();
            for &i in batch {
                let ex = &examples[i];
                if config.contrastive_enabled {
                    let triple = pool.make_triple(ex, triple_seed(config.seed, epoch, i))?;
                    let inputs = TripleInputs::from_triple(&triple, pool.vocab())?;
                    let loss = total_loss_with_grad(&params, &inputs, &config.objective, weight, &mut grads)?;
                    acc.add(loss.lm, Some(loss.contrastive), loss.total, loss.scores);
                } else {
                    let prefix = ex.model_prefix(pool.vocab())?;
                    let loss = lm_loss_with_grad(&params, &prefix, &ex.response, weight, &mut grads)?;
                    acc.add(loss.lm, None, loss.total, None);
                }
            }
            if acc.non_finite {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    diagnostic: Box::new(Checkpoint {
                        params,
                        optimizer,
                        train_config: config.clone(),
                        epoch,
                        vocab_hash,
                    }),
                });
            }
            adam_step(&mut params, &grads, &mut optimizer, &config)?;
        }
        let stats = acc.finish(epoch + 1);
        log::info!(
            "epoch {} lm {:.4} contrastive {} total {:.4}",
            stats.epoch,
            stats.lm,
            stats.contrastive.map_or("-".into(), |c| format!("{c:.4}")),
            stats.total
        );
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            optimizer,
            train_config: config,
            epoch: first_epoch.max(history.last().map_or(0, |s| s.epoch)),
            vocab_hash,
        },
        history,
    })
}

#[derive(Default)]
struct EpochAccumulator {
    n: usize,
    lm: f64,
    contrastive: Option<f64>,
    total: f64,
    ctx_hits: usize,
    spk_hits: usize,
    scored: usize,
    non_finite: bool,
}

impl EpochAccumulator {
    fn add(&mut self, lm: f64, contrastive: Option<f64>, total: f64, scores: Option<[f64; 3]>) {
        self.n += 1;
        self.lm += lm;
        self.total += total;
        self.non_finite |= !total.is_finite();
        if let Some(c) = contrastive {
            *self.contrastive.get_or_insert(0.0) += c;
        }
        if let Some([pos, ctx, spk]) = scores {
            self.scored += 1;
            self.ctx_hits += usize::from(pos > ctx);
            self.spk_hits += usize::from(pos > spk);
        }
    }

    fn finish(self, epoch: usize) -> EpochStats {
        let n = self.n as f64;
        let frac = |hits: usize| (self.scored > 0).then(|| hits as f64 / self.scored as f64);
        EpochStats {
            epoch,
            lm: self.lm / n,
            contrastive: self.contrastive.map(|c| c / n),
            total: self.total / n,
            rank_acc_ctx: frac(self.ctx_hits),
            rank_acc_spk: frac(self.spk_hits),
        }
    }
}

/// Mean language-modeling loss over every example in the pool.
pub fn evaluate_lm(params: &Parameters, pool: &ExamplePool) -> Result<f64, TrainError> {
    let examples = pool.examples();
    if examples.is_empty() {
        return Err(TrainError::Config("no examples to evaluate".into()));
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += lm_loss(params, &ex.model_prefix(pool.vocab())?, &ex.response)?;
    }
    Ok(sum / examples.len() as f64)
}

/// `n` triples cycling through the pool's examples, with seeds derived from `seed`.
pub fn sample_triples(pool: &ExamplePool, n: usize, seed: u64) -> Result<Vec<TrainingTriple>, TrainError> {
    let examples = pool.examples();
    if examples.is_empty() {
        return Err(TrainError::Config("no examples to build triples from".into()));
    }
    (0..n)
        .map(|k| {
            pool.make_triple(&examples[k % examples.len()], seed::derive(seed, &[k as u64]))
                .map_err(TrainError::from)
        })
        .collect()
}

/// Fractions of triples whose positive outscores the contextual negative and
/// the speaker negative. Ties count as failures.
pub fn ranking_accuracy(
    params: &Parameters,
    triples: &[TrainingTriple],
    vocab: &Vocabulary,
    config: &ObjectiveConfig,
) -> Result<(f64, f64), TrainError> {
    if triples.is_empty() {
        return Err(TrainError::Config("ranking accuracy needs at least one triple".into()));
    }
    let (mut ctx, mut spk) = (0usize, 0usize);
    for t in triples {
        let [pos, neg_ctx, neg_spk] = triple_scores(params, &TripleInputs::from_triple(t, vocab)?, config)?;
        ctx += usize::from(pos > neg_ctx);
        spk += usize::from(pos > neg_spk);
    }
    let n = triples.len() as f64;
    Ok((ctx as f64 / n, spk as f64 / n))
}

/// Writes the per-epoch history as CSV; absent values are left empty.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochStats], mut out: W) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(out, "epoch,lm,contrastive,total,rank_acc_ctx,rank_acc_spk")?;
    for s in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.epoch,
            s.lm,
            opt(s.contrastive),
            s.total,
            opt(s.rank_acc_ctx),
            opt(s.rank_acc_spk)
        )?;
    }
    Ok(())
}
