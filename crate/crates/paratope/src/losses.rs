//! The seven training-loss terms and their weighted combination.
//!
//! All terms are built on the tape so gradients flow end to end; labels,
//! descriptors, and true coordinates enter as constants. Every term consumes
//! rotation/translation-invariant quantities (the coordinate term reduces the
//! residual to a per-residue norm before the Huber function), so the total is
//! invariant under rigid motions of the complex.

use thiserror::Error;

use crate::diff::{DiffError, Tape, Var};
use crate::geom::Vec3d;
use crate::model::head::cosine_similarity;
use crate::scalar::Scalar;
use crate::structure::AminoAcid;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("dock loss requires a non-empty epitope")]
    EmptyEpitope,
    #[error("coordinate loss: {pred} predictions vs {truth} targets")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("non-finite loss term: {0}")]
    NonFinite(&'static str),
}

/// Loss weights and shape parameters (Eq. 22 and friends).
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_contact: f64,
    pub lambda_fp: f64,
    pub lambda_pair: f64,
    pub lambda_dock: f64,
    pub lambda_aux: f64,
    /// Focal-loss focusing exponent γ.
    pub focal_gamma: f64,
    /// Contact up-weighting α in the sequence loss: w = 1 + α·ĉ.
    pub contact_alpha: f64,
    pub tau_fp: f64,
    pub tau_pair: f64,
    /// Hinge cutoff (Å) for the docking term.
    pub dock_cutoff: f64,
    /// Descriptor cosine similarity above which a pair is a fingerprint
    /// positive.
    pub fp_threshold: f64,
    /// Huber transition point (Å) for the coordinate term.
    pub huber_delta: f64,
    /// Treat ĉ as a constant inside the sequence-loss weights so the
    /// sequence term cannot steer contact predictions through its own
    /// weighting. Eq. 15 remains the supervision path for ĉ.
    pub detach_contact_weights: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_coord: 0.598,
            lambda_contact: 1.763,
            lambda_fp: 0.020,
            lambda_pair: 0.103,
            lambda_dock: 0.233,
            lambda_aux: 0.200,
            focal_gamma: 2.0,
            contact_alpha: 4.47,
            tau_fp: 0.1,
            tau_pair: 0.1,
            dock_cutoff: 8.0,
            fp_threshold: 0.9,
            huber_delta: 1.0,
            detach_contact_weights: true,
        }
    }
}

/// Per-term values (unweighted) plus the Eq. 22 weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub seq: f64,
    pub coord: f64,
    pub contact: f64,
    pub fp: f64,
    pub pair: f64,
    pub dock: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.seq
            + w.lambda_coord * self.coord
            + w.lambda_contact * self.contact
            + w.lambda_fp * self.fp
            + w.lambda_pair * self.pair
            + w.lambda_dock * self.dock
            + w.lambda_aux * self.aux
    }

    pub fn scale(&self, f: f64) -> Self {
        Self {
            seq: self.seq * f,
            coord: self.coord * f,
            contact: self.contact * f,
            fp: self.fp * f,
            pair: self.pair * f,
            dock: self.dock * f,
            aux: self.aux * f,
            total: self.total * f,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            seq: self.seq + o.seq,
            coord: self.coord + o.coord,
            contact: self.contact + o.contact,
            fp: self.fp + o.fp,
            pair: self.pair + o.pair,
            dock: self.dock + o.dock,
            aux: self.aux + o.aux,
            total: self.total + o.total,
        }
    }
}

fn clamp_eps<T: Scalar>() -> T {
    T::from_f64_c(1e-12).max(T::epsilon())
}

/// Contact-weighted cross-entropy (Eq. 20-21): mean over supervised positions
/// of w_i·(-log softmax(ℓ_i)[y_i]) with w_i = 1 + α·ĉ_i. Masked (unknown)
/// labels are excluded from the average with a warning.
pub fn weighted_ce<T: Scalar>(
    tape: &Tape<T>,
    logits: Var,
    targets: &[AminoAcid],
    contact: Var,
    alpha: f64,
    detach_weights: bool,
) -> Result<Var, LossError> {
    let (l, _) = tape.shape(logits);
    debug_assert_eq!(l, targets.len());
    let valid: Vec<(usize, usize)> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.index().map(|y| (i, y)))
        .collect();
    if valid.len() < targets.len() {
        log::warn!(
            "sequence loss: {} masked positions excluded from the average",
            targets.len() - valid.len()
        );
    }
    if valid.is_empty() {
        return Ok(tape.scalar(T::zero()));
    }
    let rows: Vec<usize> = valid.iter().map(|&(i, _)| i).collect();
    let picked_logits = tape.gather_rows(logits, &rows)?;
    let logp = tape.log_softmax_rows(picked_logits)?;
    let elems: Vec<(usize, usize)> = valid.iter().enumerate().map(|(r, &(_, y))| (r, y)).collect();
    let nll = tape.neg(tape.gather_elems(logp, &elems)?);
    let c_rows = tape.gather_rows(contact, &rows)?;
    let c_used = if detach_weights {
        tape.constant(rows.len(), 1, tape.value(c_rows))?
    } else {
        c_rows
    };
    let w = tape.add_scalar(tape.scale(c_used, T::from_f64_c(alpha)), T::one());
    let weighted = tape.mul(w, nll)?;
    Ok(tape.mean_all(weighted)?)
}

/// Focal binary cross-entropy on contact probabilities (Eq. 15).
pub fn focal_contact_loss<T: Scalar>(
    tape: &Tape<T>,
    contact: Var,
    labels: &[bool],
    gamma: f64,
) -> Result<Var, LossError> {
    let (l, _) = tape.shape(contact);
    debug_assert_eq!(l, labels.len());
    let c: Vec<T> = labels.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    let c = tape.constant(l, 1, c)?;
    let eps = clamp_eps::<T>();
    let p = tape.clamp(contact, eps, T::one() - eps);
    let one_minus_p = tape.neg(tape.add_scalar(p, -T::one()));
    let one_minus_c = tape.neg(tape.add_scalar(c, -T::one()));
    // p̂ = probability assigned to the correct class
    let p_correct = tape.add(tape.mul(c, p)?, tape.mul(one_minus_c, one_minus_p)?)?;
    let focal = tape.pow_scalar(
        tape.neg(tape.add_scalar(p_correct, -T::one())),
        T::from_f64_c(gamma),
    );
    let bce = tape.add(
        tape.mul(c, tape.log(p))?,
        tape.mul(one_minus_c, tape.log(one_minus_p))?,
    )?;
    let per_pos = tape.mul(focal, bce)?;
    Ok(tape.neg(tape.mean_all(per_pos)?))
}

/// Fingerprint-loss positive pairs: ordered (i, j), i ≠ j, whose ground-truth
/// environment descriptors exceed the cosine-similarity threshold. Pairs may
/// span complexes within the batch.
pub fn fingerprint_positives(descriptors: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let n = descriptors.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && cosine_similarity(&descriptors[i], &descriptors[j]) > threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// InfoNCE over batch fingerprints (Eq. 12): positives in the numerator, all
/// other batch positions (excluding self) in the denominator. Returns zero
/// when no positive pair exists.
pub fn fingerprint_loss<T: Scalar>(
    tape: &Tape<T>,
    fingerprints: Var,
    positives: &[(usize, usize)],
    tau: f64,
) -> Result<Var, LossError> {
    let (n, _) = tape.shape(fingerprints);
    if positives.is_empty() || n < 2 {
        return Ok(tape.scalar(T::zero()));
    }
    let sims = tape.scale(
        tape.matmul_transb(fingerprints, fingerprints)?,
        T::from_f64_c(1.0 / tau),
    );
    // exclude self-similarity from every denominator
    let mut diag = vec![T::zero(); n * n];
    for i in 0..n {
        diag[i * n + i] = T::from_f64_c(-1e30);
    }
    let diag = tape.constant(n, n, diag)?;
    let masked = tape.add(sims, diag)?;
    let logp = tape.log_softmax_rows(masked)?;
    let picked = tape.gather_elems(logp, positives)?;
    Ok(tape.neg(tape.mean_all(picked)?))
}

/// Huber loss on the per-residue Cα deviation (transition at `delta` Å),
/// averaged over CDR positions.
pub fn coord_loss<T: Scalar>(
    tape: &Tape<T>,
    x_cdr: Var,
    x_true: &[Vec3d],
    delta: f64,
) -> Result<Var, LossError> {
    let (l, _) = tape.shape(x_cdr);
    if l != x_true.len() {
        return Err(LossError::LengthMismatch {
            pred: l,
            truth: x_true.len(),
        });
    }
    let truth: Vec<T> = x_true
        .iter()
        .flat_map(|p| p.to_array())
        .map(T::from_f64_c)
        .collect();
    let truth = tape.constant(l, 3, truth)?;
    let dev = tape.row_norm(tape.sub(x_cdr, truth)?);
    let h = tape.huber(dev, T::from_f64_c(delta));
    Ok(tape.mean_all(h)?)
}

/// Batch InfoNCE over mean-pooled CDR/antigen embeddings, cognate pairs as
/// positives (single direction: CDR queries over antigen keys).
pub fn pair_loss<T: Scalar>(
    tape: &Tape<T>,
    pooled_cdr: Var,
    pooled_ag: Var,
    tau: f64,
) -> Result<Var, LossError> {
    let (b, _) = tape.shape(pooled_cdr);
    let sims = tape.scale(
        tape.matmul_transb(pooled_cdr, pooled_ag)?,
        T::from_f64_c(1.0 / tau),
    );
    let logp = tape.log_softmax_rows(sims)?;
    let diag: Vec<(usize, usize)> = (0..b).map(|i| (i, i)).collect();
    let picked = tape.gather_elems(logp, &diag)?;
    Ok(tape.neg(tape.mean_all(picked)?))
}

/// Hinge on the minimum predicted Cα distance from each CDR residue to the
/// epitope beyond `cutoff` Å.
pub fn dock_loss<T: Scalar>(
    tape: &Tape<T>,
    x_cdr: Var,
    epitope_ca: &[Vec3d],
    cutoff: f64,
) -> Result<Var, LossError> {
    if epitope_ca.is_empty() {
        return Err(LossError::EmptyEpitope);
    }
    let (l, _) = tape.shape(x_cdr);
    // nearest epitope atom per position, from current values
    let vals = tape.value(x_cdr);
    let mut nearest = Vec::with_capacity(l);
    for k in 0..l {
        let p = Vec3d::new(
            vals[k * 3].to_f64_c(),
            vals[k * 3 + 1].to_f64_c(),
            vals[k * 3 + 2].to_f64_c(),
        );
        let j = epitope_ca
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| p.dist(a).partial_cmp(&p.dist(b)).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        nearest.push(j);
    }
    let targets: Vec<T> = nearest
        .iter()
        .flat_map(|&j| epitope_ca[j].to_array())
        .map(T::from_f64_c)
        .collect();
    let targets = tape.constant(l, 3, targets)?;
    let d = tape.row_norm(tape.sub(x_cdr, targets)?);
    let excess = tape.relu(tape.add_scalar(d, T::from_f64_c(-cutoff)));
    Ok(tape.mean_all(excess)?)
}

/// Reconstruction regularizer: MSE between a linear readout of the final CDR
/// embeddings and the raw 108-d input features.
pub fn aux_loss<T: Scalar>(
    tape: &Tape<T>,
    binding: &crate::diff::params::Binding,
    h_cdr: Var,
    raw_feats: Var,
) -> Result<Var, LossError> {
    let readout = tape.affine(h_cdr, binding.var("aux.w0")?, binding.var("aux.b0")?)?;
    let diff = tape.sub(readout, raw_feats)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq)?)
}

/// The seven tape-level terms of one batch.
pub struct LossTerms {
    pub seq: Var,
    pub coord: Var,
    pub contact: Var,
    pub fp: Var,
    pub pair: Var,
    pub dock: Var,
    pub aux: Var,
}

/// Weighted combination per Eq. 22. Fails fast on a non-finite term, naming
/// it.
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    terms: &LossTerms,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown), LossError> {
    let named = [
        ("seq", terms.seq, 1.0),
        ("coord", terms.coord, w.lambda_coord),
        ("contact", terms.contact, w.lambda_contact),
        ("fp", terms.fp, w.lambda_fp),
        ("pair", terms.pair, w.lambda_pair),
        ("dock", terms.dock, w.lambda_dock),
        ("aux", terms.aux, w.lambda_aux),
    ];
    let mut total: Option<Var> = None;
    for (name, v, lambda) in named {
        let value = tape.value_scalar(v).to_f64_c();
        if !value.is_finite() {
            return Err(LossError::NonFinite(name));
        }
        let scaled = tape.scale(v, T::from_f64_c(lambda));
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = total.unwrap();
    let breakdown = LossBreakdown {
        seq: tape.value_scalar(terms.seq).to_f64_c(),
        coord: tape.value_scalar(terms.coord).to_f64_c(),
        contact: tape.value_scalar(terms.contact).to_f64_c(),
        fp: tape.value_scalar(terms.fp).to_f64_c(),
        pair: tape.value_scalar(terms.pair).to_f64_c(),
        dock: tape.value_scalar(terms.dock).to_f64_c(),
        aux: tape.value_scalar(terms.aux).to_f64_c(),
        total: tape.value_scalar(total).to_f64_c(),
    };
    Ok((total, breakdown))
}
