//! Batch assembly, the training loop, early stopping, and checkpointing.
//!
//! Determinism contract: shuffling is a pure function of (seed, epoch),
//! dropout of (seed, epoch, batch index), and the optimizer carries its full
//! state in the checkpoint, so training resumed from a checkpoint reproduces
//! the uninterrupted trajectory bit for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diff::optim::{adam_step, clip_global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::diff::params::{save_checkpoint, Tensor};
use crate::diff::{DiffError, Tape};
use crate::geom::Vec3d;
use crate::losses::{
    aux_loss, coord_loss, dock_loss, fingerprint_loss, fingerprint_positives, focal_contact_loss,
    pair_loss, total_loss, weighted_ce, LossBreakdown, LossError, LossTerms, LossWeights,
};
use crate::model::head::environment_descriptor;
use crate::model::{Model, ModelError, PreparedComplex};
use crate::scalar::Scalar;
use crate::structure::{compute_contact_labels, AminoAcid, Complex, CONTACT_CUTOFF};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Structure(#[from] crate::structure::StructureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} consecutive batches produced non-finite losses; aborting")]
    RepeatedNonFinite(usize),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Training regimen parameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative decay applied per epoch: lr_k = lr · γ^k.
    pub lr_decay: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 6.31e-4,
            lr_decay: 0.944,
            clip: 0.5,
            batch_size: 8,
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect at a given epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// A complex with everything the training loop needs precomputed: masked
/// input, graph, supervision targets, and fingerprint descriptors.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub prep: PreparedComplex,
    pub labels: Vec<bool>,
    pub true_seq: Vec<AminoAcid>,
    pub true_cdr_ca: Vec<Vec3d>,
    pub epitope_ca: Vec<Vec3d>,
    pub descriptors: Vec<Vec<f64>>,
}

/// Precompute graphs, labels, and descriptors for a dataset.
pub fn prepare_dataset<T: Scalar>(
    model: &Model<T>,
    complexes: &[Complex],
) -> Result<Vec<TrainItem>, TrainError> {
    complexes
        .iter()
        .map(|c| {
            let prep = model.prepare(c)?;
            let labels = compute_contact_labels(c, CONTACT_CUTOFF)?;
            let descriptors = (0..c.cdr_len())
                .map(|k| {
                    environment_descriptor(
                        c,
                        k,
                        model.config.decoder.knn_k,
                        &model.config.decoder.contact_rbf,
                    )
                })
                .collect();
            Ok(TrainItem {
                id: c.id.clone(),
                prep,
                labels: labels.labels,
                true_seq: c.cdr_sequence(),
                true_cdr_ca: c.cdr_ca(),
                epitope_ca: c.epitope.iter().map(|&j| c.antigen[j].ca()).collect(),
                descriptors,
            })
        })
        .collect()
}

/// Deterministic shuffled batches for one epoch; the final partial batch is
/// kept.
pub fn make_batches(n_items: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Forward one batch on a shared tape and assemble the Eq. 22 total.
/// Per-complex terms are averaged across the batch; the fingerprint and
/// pairing terms are computed at batch scope.
pub(crate) fn batch_loss<T: Scalar>(
    model: &Model<T>,
    items: &[&TrainItem],
    weights: &LossWeights,
    train: bool,
    dropout_seed: u64,
) -> Result<(Tape<T>, crate::diff::params::Binding, crate::diff::Var, LossBreakdown), TrainError> {
    let tape = Tape::new(dropout_seed);
    let binding = model.params.bind(&tape)?;
    let b = items.len();
    let inv_b = T::from_f64_c(1.0 / b as f64);

    let mut seq_sum = None;
    let mut coord_sum = None;
    let mut contact_sum = None;
    let mut dock_sum = None;
    let mut aux_sum = None;
    let mut pooled_cdr = Vec::with_capacity(b);
    let mut pooled_ag = Vec::with_capacity(b);
    let mut fingerprints = Vec::with_capacity(b);
    let mut descriptors: Vec<Vec<f64>> = Vec::new();

    let add_to = |acc: &mut Option<crate::diff::Var>, v: crate::diff::Var, tape: &Tape<T>| {
        *acc = Some(match *acc {
            Some(a) => tape.add(a, v).expect("scalar add"),
            None => v,
        });
    };

    for item in items {
        let vars = model.forward_on_tape(&tape, &binding, &item.prep, train)?;
        let seq = weighted_ce(
            &tape,
            vars.logits,
            &item.true_seq,
            vars.contact,
            weights.contact_alpha,
            weights.detach_contact_weights,
        )?;
        let contact = focal_contact_loss(&tape, vars.contact, &item.labels, weights.focal_gamma)?;
        let coord = coord_loss(&tape, vars.x_cdr, &item.true_cdr_ca, weights.huber_delta)?;
        let dock = if item.epitope_ca.is_empty() {
            log::warn!("{}: empty epitope, docking term skipped", item.id);
            tape.scalar(T::zero())
        } else {
            dock_loss(&tape, vars.x_cdr, &item.epitope_ca, weights.dock_cutoff)?
        };
        let aux = aux_loss(&tape, &binding, vars.h_cdr, vars.raw_cdr_feats)?;
        add_to(&mut seq_sum, seq, &tape);
        add_to(&mut contact_sum, contact, &tape);
        add_to(&mut coord_sum, coord, &tape);
        add_to(&mut dock_sum, dock, &tape);
        add_to(&mut aux_sum, aux, &tape);
        let l = item.prep.graph.cdr_positions.len();
        let m = item.prep.graph.antigen_positions.len();
        pooled_cdr.push(tape.group_mean_rows(vars.h_cdr, l)?);
        pooled_ag.push(tape.group_mean_rows(vars.h_ag, m)?);
        fingerprints.push(vars.fingerprints);
        descriptors.extend(item.descriptors.iter().cloned());
    }

    let mean = |v: Option<crate::diff::Var>| tape.scale(v.expect("non-empty batch"), inv_b);
    let all_fp = tape.concat(&fingerprints, 0)?;
    let positives = fingerprint_positives(&descriptors, weights.fp_threshold);
    let fp = fingerprint_loss(&tape, all_fp, &positives, weights.tau_fp)?;
    let cdr_stack = tape.concat(&pooled_cdr, 0)?;
    let ag_stack = tape.concat(&pooled_ag, 0)?;
    let pair = pair_loss(&tape, cdr_stack, ag_stack, weights.tau_pair)?;

    let terms = LossTerms {
        seq: mean(seq_sum),
        coord: mean(coord_sum),
        contact: mean(contact_sum),
        fp,
        pair,
        dock: mean(dock_sum),
        aux: mean(aux_sum),
    };
    let (total, breakdown) = total_loss(&tape, &terms, weights)?;
    Ok((tape, binding, total, breakdown))
}

/// Mean validation loss (dropout off; parameters untouched).
pub fn validation_loss<T: Scalar>(
    model: &Model<T>,
    items: &[TrainItem],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<LossBreakdown, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sum = LossBreakdown::default();
    let mut batches = 0usize;
    for chunk in items.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainItem> = chunk.iter().collect();
        let (_, _, _, breakdown) = batch_loss(model, &refs, weights, false, 0)?;
        sum = sum.add(&breakdown);
        batches += 1;
    }
    Ok(sum.scale(1.0 / batches as f64))
}

/// One optimization pass over the dataset. Returns the mean of the recorded
/// batch breakdowns. Batches with non-finite losses are skipped; three in a
/// row abort the epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    items: &[TrainItem],
    weights: &LossWeights,
    cfg: &TrainConfig,
    state: &mut AdamState<T>,
    epoch: usize,
) -> Result<LossBreakdown, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let lr = cfg.lr_at_epoch(epoch);
    let batches = make_batches(items.len(), cfg.batch_size, cfg.seed, epoch);
    let mut sum = LossBreakdown::default();
    let mut recorded = 0usize;
    let mut consecutive_bad = 0usize;
    for (bi, batch) in batches.iter().enumerate() {
        let refs: Vec<&TrainItem> = batch.iter().map(|&i| &items[i]).collect();
        let dropout_seed = cfg
            .seed
            .wrapping_mul(0x0100_0000_01B3)
            .wrapping_add((epoch as u64) << 20)
            .wrapping_add(bi as u64);
        let result = batch_loss(model, &refs, weights, true, dropout_seed);
        let (tape, binding, total, breakdown) = match result {
            Ok(ok) => ok,
            Err(TrainError::Loss(LossError::NonFinite(term))) => {
                consecutive_bad += 1;
                log::warn!("epoch {epoch} batch {bi}: non-finite {term} loss, batch skipped");
                if consecutive_bad >= 3 {
                    return Err(TrainError::RepeatedNonFinite(consecutive_bad));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        consecutive_bad = 0;
        tape.backward(total)?;
        let mut grads = model.params.grads(&tape, &binding);
        clip_global_norm(&mut grads, cfg.clip);
        adam_step(
            &mut model.params,
            &grads,
            state,
            lr,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )?;
        sum = sum.add(&breakdown);
        recorded += 1;
    }
    if recorded == 0 {
        return Err(TrainError::RepeatedNonFinite(consecutive_bad));
    }
    Ok(sum.scale(1.0 / recorded as f64))
}

/// Early-stopping tracker: stop once the epochs since the best validation
/// value reach the patience budget.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn resume(patience: usize, best: f64, best_epoch: usize) -> Self {
        Self {
            patience,
            best,
            best_epoch,
        }
    }

    /// Record one validation value; returns true when it improved the best.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch >= self.best_epoch + self.patience
    }
}

/// One row of the training history.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val_total: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,seq,coord,contact,fp,pair,dock,aux,total,val_total,lr";

pub fn write_history<W: Write>(mut w: W, records: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9e}",
            r.epoch,
            r.train.seq,
            r.train.coord,
            r.train.contact,
            r.train.fp,
            r.train.pair,
            r.train.dock,
            r.train.aux,
            r.train.total,
            r.val_total,
            r.lr
        )?;
    }
    Ok(())
}

/// Outcome of a fit run.
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_checkpoint: PathBuf,
    pub stopped_early: bool,
}

fn trainer_extras<T: Scalar>(
    state: &AdamState<T>,
    params: &crate::diff::params::ParamStore<T>,
    epoch_next: usize,
    best_val: f64,
    best_epoch: usize,
) -> BTreeMap<String, Tensor<T>> {
    let mut extras = state.to_tensors(params);
    extras.insert(
        "__trainer.next_epoch".to_string(),
        Tensor::scalar(T::from_f64_c(epoch_next as f64)),
    );
    extras.insert("__trainer.best_val".to_string(), Tensor::scalar(T::from_f64_c(best_val)));
    extras.insert(
        "__trainer.best_epoch".to_string(),
        Tensor::scalar(T::from_f64_c(best_epoch as f64)),
    );
    extras
}

/// Restore optimizer/trainer state saved by [`fit`].
pub fn restore_trainer_state<T: Scalar>(
    extras: &BTreeMap<String, Tensor<T>>,
) -> (AdamState<T>, usize, f64, usize) {
    let state = AdamState::from_tensors(extras);
    let get = |name: &str, default: f64| {
        extras
            .get(name)
            .map(|t| t.data[0].to_f64_c())
            .unwrap_or(default)
    };
    let next_epoch = get("__trainer.next_epoch", 0.0) as usize;
    let best_val = get("__trainer.best_val", f64::INFINITY);
    let best_epoch = get("__trainer.best_epoch", 0.0) as usize;
    (state, next_epoch, best_val, best_epoch)
}

/// Full training run with per-epoch lr decay, validation, early stopping on
/// the validation total, and best-checkpoint tracking.
///
/// `resume` restores optimizer state and the epoch counter from a checkpoint
/// produced by an earlier run with identical configuration.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train_items: &[TrainItem],
    val_items: &[TrainItem],
    weights: &LossWeights,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<(AdamState<T>, usize, f64, usize)>,
) -> Result<FitResult, TrainError> {
    if train_items.is_empty() || val_items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir)?;
    let best_path = out_dir.join("best.ptck");
    let last_path = out_dir.join("last.ptck");

    let (mut state, start_epoch, best_val, best_epoch) =
        resume.unwrap_or((AdamState::new(), 0, f64::INFINITY, 0));
    let mut stopper = EarlyStopping::resume(cfg.patience, best_val, best_epoch);
    let mut history = Vec::new();
    let mut stopped_early = false;

    if start_epoch == 0 {
        // initial checkpoint so a zero-epoch run still produces artifacts
        save_checkpoint(
            &best_path,
            &model.params,
            &trainer_extras(&state, &model.params, 0, stopper.best, stopper.best_epoch),
        )?;
    }

    for epoch in start_epoch..cfg.max_epochs {
        let train_breakdown = train_epoch(model, train_items, weights, cfg, &mut state, epoch)?;
        let val = validation_loss(model, val_items, weights, cfg.batch_size)?;
        let lr = cfg.lr_at_epoch(epoch);
        history.push(EpochRecord {
            epoch,
            train: train_breakdown,
            val_total: val.total,
            lr,
        });
        if stopper.observe(epoch, val.total) {
            save_checkpoint(
                &best_path,
                &model.params,
                &trainer_extras(&state, &model.params, epoch + 1, stopper.best, stopper.best_epoch),
            )?;
        }
        save_checkpoint(
            &last_path,
            &model.params,
            &trainer_extras(&state, &model.params, epoch + 1, stopper.best, stopper.best_epoch),
        )?;
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} (best {:.6} @ {}) lr {lr:.3e}",
            train_breakdown.total,
            val.total,
            stopper.best,
            stopper.best_epoch
        );
        if stopper.should_stop(epoch) {
            stopped_early = true;
            break;
        }
    }

    Ok(FitResult {
        history,
        best_epoch: stopper.best_epoch,
        best_val: stopper.best,
        best_checkpoint: best_path,
        stopped_early,
    })
}
