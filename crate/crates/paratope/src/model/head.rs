//! Distance-biased cross-attention and the three-stage decoder: fingerprints,
//! contact prediction, and contact-gated complementarity injection.
//!
//! The antigen is required throughout: attention over an empty key set is a
//! contract violation, so an antigen-free complex is rejected upstream at
//! graph construction. This is deliberate — the architecture conditions on
//! antigen context everywhere downstream of the encoder.

use crate::diff::mlp::{mlp_apply, Activation, MlpSpec};
use crate::diff::params::Binding;
use crate::diff::{DiffError, DiffResult, Tape, Var};
use crate::geom::{rbf_expand, RbfSpec, Vec3d};
use crate::scalar::Scalar;
use crate::structure::Complex;

use super::config::{AttentionConfig, DecoderConfig};

/// Gaussian spatial bias exp(-d²/2σ²); `sign` is an internal test hook and is
/// +1 in production.
pub fn distance_bias(d: f64, sigma: f64, sign: f64) -> f64 {
    (sign * (-d * d / (2.0 * sigma * sigma))).exp()
}

pub fn fp_spec(attn: &AttentionConfig, dec: &DecoderConfig, hidden_dim: usize, dropout: f64) -> MlpSpec {
    let in_dim = hidden_dim + attn.heads * attn.head_dim;
    MlpSpec::new(vec![in_dim, 128, dec.fingerprint_dim], Activation::Silu, dropout)
}

pub fn contact_spec(dec: &DecoderConfig, hidden_dim: usize, dropout: f64) -> MlpSpec {
    let in_dim = 2 * hidden_dim + dec.contact_rbf.count() + dec.fingerprint_dim;
    MlpSpec::new(
        vec![in_dim, dec.contact_hidden[0], dec.contact_hidden[1], 1],
        Activation::Silu,
        dropout,
    )
}

pub fn inject_spec(hidden_dim: usize, dropout: f64) -> MlpSpec {
    MlpSpec::new(vec![hidden_dim, 128, hidden_dim], Activation::Silu, dropout)
}

pub fn seq_spec(attn: &AttentionConfig, hidden_dim: usize, dropout: f64) -> MlpSpec {
    let in_dim = hidden_dim + attn.heads * attn.head_dim;
    MlpSpec::new(vec![in_dim, 512, 20], Activation::Silu, dropout)
}

/// Cross-attention output: the full skip-concatenated representation and the
/// attention-derived block alone.
pub struct AttentionOut {
    /// L × (D + H·D_h): [h_cdr, multi-head weighted sum].
    pub o_full: Var,
    /// L × (H·D_h): the antigen-derived part only.
    pub o_attn: Var,
}

/// Multi-head cross-attention from CDR queries to antigen keys with a
/// Gaussian distance bias shared across heads (computed from updated Cα
/// coordinates).
pub fn cross_attention<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    cfg: &AttentionConfig,
    h_cdr: Var,
    h_ag: Var,
    x_cdr: Var,
    x_ag: Var,
) -> DiffResult<AttentionOut> {
    let (l, d) = tape.shape(h_cdr);
    let (m, _) = tape.shape(h_ag);
    if m == 0 {
        return Err(DiffError::EmptyAxis { op: "cross_attention" });
    }
    let q = tape.matmul_transb(h_cdr, binding.var("attn.wq")?)?;
    let k = tape.matmul_transb(h_ag, binding.var("attn.wk")?)?;
    let v = tape.matmul_transb(h_ag, binding.var("attn.wv")?)?;
    debug_assert_eq!(d, cfg.heads * cfg.head_dim);

    // pairwise squared distances via the Gram expansion
    let xc_sq = tape.mul(x_cdr, x_cdr)?;
    let xa_sq = tape.mul(x_ag, x_ag)?;
    let ones3 = tape.ones(3, 1);
    let rc = tape.matmul(xc_sq, ones3)?; // L×1
    let ra = tape.matmul(xa_sq, ones3)?; // M×1
    let ra_row = tape.reshape(ra, 1, m)?;
    let ones_l = tape.ones(l, 1);
    let ones_m = tape.ones(1, m);
    let rc_b = tape.matmul(rc, ones_m)?;
    let ra_b = tape.matmul(ones_l, ra_row)?;
    let cross = tape.matmul_transb(x_cdr, x_ag)?;
    let d2 = tape.add(tape.add(rc_b, ra_b)?, tape.scale(cross, -T::from_f64_c(2.0)))?;
    // numerical guard: the Gram expansion can dip slightly below zero
    let d2 = tape.clamp(d2, T::zero(), T::infinity());
    let factor = T::from_f64_c(-cfg.bias_sign / (2.0 * cfg.bandwidth * cfg.bandwidth));
    let bias = tape.exp(tape.scale(d2, factor));

    let scale = T::from_f64_c(1.0 / (cfg.head_dim as f64).sqrt());
    let mut head_outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * cfg.head_dim, cfg.head_dim)?;
        let kh = tape.slice_cols(k, h * cfg.head_dim, cfg.head_dim)?;
        let vh = tape.slice_cols(v, h * cfg.head_dim, cfg.head_dim)?;
        let scores = tape.scale(tape.matmul_transb(qh, kh)?, scale);
        let scores = tape.add(scores, bias)?;
        let alpha = tape.softmax_rows(scores)?;
        head_outs.push(tape.matmul(alpha, vh)?);
    }
    let o_attn = tape.concat(&head_outs, 1)?;
    let o_full = tape.concat(&[h_cdr, o_attn], 1)?;
    Ok(AttentionOut { o_full, o_attn })
}

/// Row-wise fingerprint MLP over the cross-attention output.
pub fn fingerprint<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    attn: &AttentionConfig,
    dec: &DecoderConfig,
    hidden_dim: usize,
    dropout: f64,
    o_full: Var,
    train: bool,
) -> DiffResult<Var> {
    mlp_apply(
        tape,
        &fp_spec(attn, dec, hidden_dim, dropout),
        binding,
        "fp",
        o_full,
        train,
    )
}

/// K-nearest antigen residues per CDR position, computed host-side from
/// updated coordinates with index tie-breaking.
#[derive(Debug, Clone)]
pub struct KnnContext {
    /// Flattened antigen row indices, `k_eff` per CDR position.
    pub flat_ag: Vec<usize>,
    /// Matching repeated CDR row indices.
    pub flat_cdr: Vec<usize>,
    /// Index of the nearest antigen residue per CDR position.
    pub argmin: Vec<usize>,
    pub k_eff: usize,
}

pub fn antigen_knn(x_cdr: &[Vec3d], x_ag: &[Vec3d], k: usize) -> KnnContext {
    let k_eff = k.min(x_ag.len()).max(1);
    let mut flat_ag = Vec::with_capacity(x_cdr.len() * k_eff);
    let mut flat_cdr = Vec::with_capacity(x_cdr.len() * k_eff);
    let mut argmin = Vec::with_capacity(x_cdr.len());
    for (i, xc) in x_cdr.iter().enumerate() {
        let mut ds: Vec<(f64, usize)> = x_ag.iter().enumerate().map(|(j, xa)| (xc.dist(xa), j)).collect();
        ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        argmin.push(ds[0].1);
        for &(_, j) in ds.iter().take(k_eff) {
            flat_ag.push(j);
            flat_cdr.push(i);
        }
    }
    KnnContext {
        flat_ag,
        flat_cdr,
        argmin,
        k_eff,
    }
}

/// Distance-weighted pooling of antigen embeddings over the K nearest
/// neighbors of each CDR position (Eq. 13 shape):
/// a_i = (1/K) Σ_j proj(rbf(d_ij)) ⊙ h_j.
pub fn contact_context_aggregate<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    dec: &DecoderConfig,
    h_ag: Var,
    x_cdr: Var,
    x_ag: Var,
    knn: &KnnContext,
) -> DiffResult<Var> {
    let ag_rows = tape.gather_rows(h_ag, &knn.flat_ag)?;
    let xc = tape.gather_rows(x_cdr, &knn.flat_cdr)?;
    let xa = tape.gather_rows(x_ag, &knn.flat_ag)?;
    let d = tape.row_norm(tape.sub(xc, xa)?);
    let centers: Vec<T> = dec.contact_rbf.centers().iter().map(|&c| T::from_f64_c(c)).collect();
    let rbf = tape.rbf_expand(d, &centers, T::from_f64_c(dec.contact_rbf.width()))?;
    let proj = tape.affine(rbf, binding.var("ct.proj.w0")?, binding.var("ct.proj.b0")?)?;
    let weighted = tape.mul(proj, ag_rows)?;
    tape.group_mean_rows(weighted, knn.k_eff)
}

/// Minimum Cα distance to the antigen per CDR position, differentiable
/// through the coordinates of the nearest residue.
pub fn min_antigen_distance<T: Scalar>(
    tape: &Tape<T>,
    x_cdr: Var,
    x_ag: Var,
    knn: &KnnContext,
) -> DiffResult<Var> {
    let l = tape.shape(x_cdr).0;
    let idx: Vec<usize> = (0..l).collect();
    let xc = tape.gather_rows(x_cdr, &idx)?;
    let xa = tape.gather_rows(x_ag, &knn.argmin)?;
    Ok(tape.row_norm(tape.sub(xc, xa)?))
}

/// Contact probability head (Eq. 14 shape): sigmoid MLP over
/// [h_cdr, a, rbf(d_min), fingerprint].
#[allow(clippy::too_many_arguments)]
pub fn predict_contacts<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    dec: &DecoderConfig,
    hidden_dim: usize,
    dropout: f64,
    h_cdr: Var,
    context: Var,
    d_min: Var,
    fingerprints: Var,
    train: bool,
) -> DiffResult<Var> {
    let centers: Vec<T> = dec.contact_rbf.centers().iter().map(|&c| T::from_f64_c(c)).collect();
    let rbf = tape.rbf_expand(d_min, &centers, T::from_f64_c(dec.contact_rbf.width()))?;
    let ct_in = tape.concat(&[h_cdr, context, rbf, fingerprints], 1)?;
    let logit = mlp_apply(
        tape,
        &contact_spec(dec, hidden_dim, dropout),
        binding,
        "ct.mlp",
        ct_in,
        train,
    )?;
    Ok(tape.sigmoid(logit))
}

/// Contact-gated injection (Eq. 16-19 shape). Returns the enriched embedding
/// and the final representation z = [enriched, ĉ·o_attn].
#[allow(clippy::too_many_arguments)]
pub fn inject_complementarity<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    hidden_dim: usize,
    dropout: f64,
    h_cdr: Var,
    h_ag: Var,
    contact: Var,
    o_attn: Var,
    knn: &KnnContext,
    train: bool,
) -> DiffResult<(Var, Var)> {
    // unweighted KNN mean of antigen embeddings
    let local = tape.group_mean_rows(tape.gather_rows(h_ag, &knn.flat_ag)?, knn.k_eff)?;
    // learned gate over [h, ĉ]
    let gate_in = tape.concat(&[h_cdr, contact], 1)?;
    let gate = tape.sigmoid(tape.affine(gate_in, binding.var("gate.w0")?, binding.var("gate.b0")?)?);
    let proj = mlp_apply(
        tape,
        &inject_spec(hidden_dim, dropout),
        binding,
        "inj",
        local,
        train,
    )?;
    let double_gate = tape.mul(gate, contact)?;
    let injected = tape.mul_col_broadcast(proj, double_gate)?;
    let enriched = tape.add(h_cdr, injected)?;
    let masked_attn = tape.mul_col_broadcast(o_attn, contact)?;
    let z = tape.concat(&[enriched, masked_attn], 1)?;
    Ok((enriched, z))
}

/// Amino-acid logits from the final representation. The fixed gain sharpens
/// the output distribution (an inverse-temperature constant on the head).
#[allow(clippy::too_many_arguments)]
pub fn sequence_logits<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    attn: &AttentionConfig,
    dec: &DecoderConfig,
    hidden_dim: usize,
    dropout: f64,
    z: Var,
    train: bool,
) -> DiffResult<Var> {
    let raw = mlp_apply(
        tape,
        &seq_spec(attn, hidden_dim, dropout),
        binding,
        "seq",
        z,
        train,
    )?;
    Ok(tape.scale(raw, T::from_f64_c(dec.logit_gain)))
}

/// Ground-truth local-environment descriptor for one CDR position: the
/// amino-acid composition histogram of its K nearest antigen residues plus
/// the mean RBF expansion of the sorted neighbor distances. Used only to
/// define fingerprint-loss positives.
pub fn environment_descriptor(
    c: &Complex,
    cdr_index: usize,
    k: usize,
    rbf: &RbfSpec<f64>,
) -> Vec<f64> {
    let xc = c.heavy[c.cdr_span.0 + cdr_index].ca();
    let mut ds: Vec<(f64, usize)> = c
        .antigen
        .iter()
        .enumerate()
        .map(|(j, r)| (xc.dist(&r.ca()), j))
        .collect();
    ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let k_eff = k.min(ds.len()).max(1);
    let mut hist = vec![0.0f64; 20];
    let mut pooled = vec![0.0f64; rbf.count()];
    for &(d, j) in ds.iter().take(k_eff) {
        if let Some(a) = c.antigen[j].aa.index() {
            hist[a] += 1.0;
        }
        for (p, v) in pooled.iter_mut().zip(rbf_expand(d, rbf).expect("finite distance")) {
            *p += v;
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    pooled.iter_mut().for_each(|p| *p /= k_eff as f64);
    hist.extend(pooled);
    hist
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
