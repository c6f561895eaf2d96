//! Dual-path feature encoding and the relation-aware equivariant encoder.
//!
//! Node embeddings are built from invariant scalars, so they are unchanged by
//! rigid motions of the complex; coordinates move equivariantly because every
//! update is a scalar-weighted sum of displacement vectors. Only CDR residue
//! and virtual-node coordinates are free to move; framework, light-chain,
//! antigen, and global-token coordinates stay fixed.

use crate::diff::mlp::{mlp_apply, Activation, MlpSpec};
use crate::diff::params::Binding;
use crate::diff::{DiffResult, Tape, Var};
use crate::graph::{EdgeType, HeteroGraph, NodeKind, CHEM_DIMS, GEOM_DIMS, NODE_FEAT_DIM};
use crate::scalar::Scalar;

use super::config::EncoderConfig;
use super::ModelError;

pub fn msg_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    let edge_in = 2 * cfg.hidden_dim + 9 + crate::graph::EDGE_FEAT_DIM;
    MlpSpec::new(
        vec![edge_in, cfg.msg_hidden, cfg.message_dim],
        Activation::Silu,
        dropout,
    )
    .with_activated_output()
}

pub fn node_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(
        vec![2 * cfg.hidden_dim, cfg.node_hidden, cfg.hidden_dim],
        Activation::Silu,
        dropout,
    )
}

pub fn coord_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(
        vec![cfg.message_dim, cfg.coord_hidden, 1],
        Activation::Silu,
        dropout,
    )
}

pub fn geom_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(vec![GEOM_DIMS, 2 * cfg.embed_dim, 2 * cfg.embed_dim], Activation::Silu, dropout)
        .with_activated_output()
}

pub fn chem_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(vec![CHEM_DIMS, cfg.embed_dim, cfg.embed_dim], Activation::Silu, dropout)
        .with_activated_output()
}

pub fn fuse_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(vec![3 * cfg.embed_dim, cfg.embed_dim], Activation::Identity, dropout)
}

pub fn lift_spec(cfg: &EncoderConfig, dropout: f64) -> MlpSpec {
    MlpSpec::new(vec![cfg.embed_dim, cfg.hidden_dim], Activation::Identity, dropout)
}

/// Dual-path encoding of raw node features into the embedding dimension,
/// with the learnable epitope marker added to epitope rows after fusion.
#[allow(clippy::too_many_arguments)]
pub fn encode_features<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    cfg: &EncoderConfig,
    dropout: f64,
    feats: Var,
    epitope_mask: &[bool],
    train: bool,
) -> DiffResult<Var> {
    let (n, d) = tape.shape(feats);
    debug_assert_eq!(d, NODE_FEAT_DIM);
    debug_assert_eq!(epitope_mask.len(), n);
    // chemical block: amino one-hot + segment one-hot
    let aa = tape.slice_cols(feats, crate::graph::FEAT_AA, 20)?;
    let seg = tape.slice_cols(feats, crate::graph::FEAT_SEGMENT, 3)?;
    let chem_in = tape.concat(&[aa, seg], 1)?;
    // geometric block: everything in between
    let geom_in = tape.slice_cols(feats, crate::graph::FEAT_BOND_RBF, GEOM_DIMS)?;
    let geom = mlp_apply(tape, &geom_spec(cfg, dropout), binding, "feat.geom", geom_in, train)?;
    let chem = mlp_apply(tape, &chem_spec(cfg, dropout), binding, "feat.chem", chem_in, train)?;
    let fused_in = tape.concat(&[geom, chem], 1)?;
    let h0 = mlp_apply(tape, &fuse_spec(cfg, dropout), binding, "feat.fuse", fused_in, train)?;
    // additive epitope marker
    let mask: Vec<T> = epitope_mask
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let mask = tape.constant(n, 1, mask)?;
    let epi = binding.var("feat.epi")?;
    let epi_rows = tape.matmul(mask, epi)?;
    tape.add(h0, epi_rows)
}

/// Per-edge invariant message (Eq. 5 shape): receiver/sender embeddings, the
/// flattened Δx Δxᵀ geometry term, and the edge features.
///
/// The displacement is expressed in a per-edge local backbone frame (receiver
/// frame when available, else sender) before the outer product, so the nine
/// geometry entries are invariant under rigid motions of the complex. The
/// frames come from the input geometry and are constants of the forward pass,
/// keeping the term exactly differentiable in the coordinates.
#[allow(clippy::too_many_arguments)]
pub fn egnn_message<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    cfg: &EncoderConfig,
    dropout: f64,
    layer: usize,
    t: EdgeType,
    h_dst: Var,
    h_src: Var,
    dx_local: Var,
    e_feats: Var,
    train: bool,
) -> DiffResult<Var> {
    let geom9 = tape.row_outer3(dx_local)?;
    let msg_in = tape.concat(&[h_dst, h_src, geom9, e_feats], 1)?;
    mlp_apply(
        tape,
        &msg_spec(cfg, dropout),
        binding,
        &format!("enc.l{layer}.msg.{}", t.name()),
        msg_in,
        train,
    )
}

/// Per-edge constant frame matrices used to localize displacement vectors.
/// Falls back to the identity only when neither endpoint has a valid frame.
pub fn edge_frames<T: Scalar>(graph: &HeteroGraph, src: &[usize], dst: &[usize]) -> Vec<[T; 9]> {
    let frame_at = |i: usize| -> Option<[f64; 9]> {
        if !matches!(graph.kinds[i], NodeKind::Residue(_)) {
            return None;
        }
        let a = &graph.coords[i];
        crate::geom::backbone_frame(a[0], a[1], a[2]).ok().map(|f| {
            let r = f.rotation.rows;
            [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ]
        })
    };
    src.iter()
        .zip(dst)
        .map(|(&s, &d)| {
            let m = frame_at(d)
                .or_else(|| frame_at(s))
                .unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
            let mut out = [T::zero(); 9];
            for (o, v) in out.iter_mut().zip(m) {
                *o = T::from_f64_c(v);
            }
            out
        })
        .collect()
}

struct TypeEdges<T> {
    t: EdgeType,
    src: Vec<usize>,
    dst: Vec<usize>,
    /// 1/|N_t(i)| per node (zero where the type has no incoming edges).
    inv_count: Vec<f64>,
    frames: Vec<[T; 9]>,
}

fn collect_type_edges<T: Scalar>(graph: &HeteroGraph) -> Vec<TypeEdges<T>> {
    let n = graph.node_count();
    EdgeType::ALL
        .iter()
        .filter_map(|&t| {
            let es = graph.edges_of(t);
            if es.is_empty() {
                return None;
            }
            let src: Vec<usize> = es.iter().map(|e| e.src as usize).collect();
            let dst: Vec<usize> = es.iter().map(|e| e.dst as usize).collect();
            let mut count = vec![0usize; n];
            for &d in &dst {
                count[d] += 1;
            }
            let inv_count = count
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect();
            let frames = edge_frames(graph, &src, &dst);
            Some(TypeEdges { t, src, dst, inv_count, frames })
        })
        .collect()
}

/// Output of the encoder: per-node embeddings and updated Cα coordinates.
pub struct EncoderOut {
    pub h: Var,
    pub x: Var,
}

/// Run the full encoder over a graph whose features/embeddings are already
/// assembled: `h` is the lifted (n × hidden) embedding matrix, `x` the
/// (n × 3) Cα coordinates, `e_feats[t]` the per-type edge feature matrices.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layers<T: Scalar>(
    tape: &Tape<T>,
    binding: &Binding,
    cfg: &EncoderConfig,
    dropout: f64,
    graph: &HeteroGraph,
    edge_feat_vars: &[Var; 10],
    mut h: Var,
    mut x: Var,
    train: bool,
) -> Result<EncoderOut, ModelError> {
    let n = graph.node_count();
    let types = collect_type_edges(graph);
    // coordinates move only for CDR residues and virtual nodes
    let update_mask: Vec<T> = graph
        .kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let movable =
                matches!(k, NodeKind::Virtual(_)) || graph.cdr_positions.contains(&i);
            if movable {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let update_mask = tape.constant(n, 1, update_mask)?;

    for layer in 0..cfg.n_layers {
        let mut agg: Option<Var> = None;
        let mut coord_total: Option<Var> = None;
        for te in &types {
            let h_dst = tape.gather_rows(h, &te.dst)?;
            let h_src = tape.gather_rows(h, &te.src)?;
            let x_dst = tape.gather_rows(x, &te.dst)?;
            let x_src = tape.gather_rows(x, &te.src)?;
            let dx = tape.sub(x_dst, x_src)?;
            let dx_local = tape.row_rotate(dx, &te.frames)?;
            let m = egnn_message(
                tape,
                binding,
                cfg,
                dropout,
                layer,
                te.t,
                h_dst,
                h_src,
                dx_local,
                edge_feat_vars[te.t.index()],
                train,
            )?;
            // per-type message sum, projected by W_t
            let sums = tape.scatter_add_rows(m, &te.dst, n)?;
            let wt = binding.var(&format!("enc.l{layer}.wt.{}", te.t.name()))?;
            let proj = tape.matmul_transb(sums, wt)?;
            agg = Some(match agg {
                Some(a) => tape.add(a, proj)?,
                None => proj,
            });
            // equivariant coordinate update: mean of scalar-weighted Δx
            let w = mlp_apply(
                tape,
                &coord_spec(cfg, dropout),
                binding,
                &format!("enc.l{layer}.coord.{}", te.t.name()),
                m,
                train,
            )?;
            let scaled = tape.mul_col_broadcast(dx, w)?;
            let summed = tape.scatter_add_rows(scaled, &te.dst, n)?;
            let inv: Vec<T> = te.inv_count.iter().map(|&v| T::from_f64_c(v)).collect();
            let inv = tape.constant(n, 1, inv)?;
            let averaged = tape.mul_col_broadcast(summed, inv)?;
            coord_total = Some(match coord_total {
                Some(c) => tape.add(c, averaged)?,
                None => averaged,
            });
        }
        let agg = match agg {
            Some(a) => a,
            None => tape.zeros(n, cfg.hidden_dim),
        };
        let node_in = tape.concat(&[h, agg], 1)?;
        let update = mlp_apply(
            tape,
            &node_spec(cfg, dropout),
            binding,
            &format!("enc.l{layer}.node"),
            node_in,
            train,
        )?;
        h = tape.add(h, update)?;
        if let Some(c) = coord_total {
            let masked = tape.mul_col_broadcast(c, update_mask)?;
            x = tape.add(x, masked)?;
        }
        tape.ensure_finite(h, &format!("encoder layer {layer} embeddings"))
            .map_err(ModelError::from)?;
        tape.ensure_finite(x, &format!("encoder layer {layer} coordinates"))
            .map_err(ModelError::from)?;
    }
    Ok(EncoderOut { h, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::ParamStore;
    use crate::model::Model;
    use crate::structure::synth::{generate_synthetic_complex, SynthParams};

    #[test]
    fn epitope_marker_is_exactly_additive() {
        let cfg = crate::model::ModelConfig::standard();
        let model: Model<f64> = Model::new(cfg.clone(), 0);
        let tape = Tape::new(0);
        let binding = model.params.bind(&tape).unwrap();
        // two identical feature rows, one epitope-flagged
        let row: Vec<f64> = (0..NODE_FEAT_DIM).map(|i| (i as f64 * 0.05).sin()).collect();
        let feats = tape
            .leaf(2, NODE_FEAT_DIM, [row.clone(), row].concat(), false)
            .unwrap();
        let h0 = encode_features(
            &tape,
            &binding,
            &cfg.encoder,
            0.0,
            feats,
            &[false, true],
            false,
        )
        .unwrap();
        let vals = tape.value(h0);
        let epi = model.params.get("feat.epi").unwrap().data.clone();
        for j in 0..cfg.encoder.embed_dim {
            let diff = vals[cfg.encoder.embed_dim + j] - vals[j];
            assert!((diff - epi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_give_zero_embeddings_plus_marker() {
        let cfg = crate::model::ModelConfig::standard();
        let mut model: Model<f64> = Model::new(cfg.clone(), 0);
        for name in model
            .params
            .names()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
        {
            if name.starts_with("feat.") && name != "feat.epi" {
                let t = model.params.get_mut(&name).unwrap();
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let tape = Tape::new(0);
        let binding = model.params.bind(&tape).unwrap();
        let feats = tape
            .leaf(2, NODE_FEAT_DIM, vec![0.3; 2 * NODE_FEAT_DIM], false)
            .unwrap();
        let h0 = encode_features(
            &tape,
            &binding,
            &cfg.encoder,
            0.0,
            feats,
            &[false, true],
            false,
        )
        .unwrap();
        let vals = tape.value(h0);
        let epi = model.params.get("feat.epi").unwrap().data.clone();
        for j in 0..cfg.encoder.embed_dim {
            assert_eq!(vals[j], 0.0);
            assert_eq!(vals[cfg.encoder.embed_dim + j], epi[j]);
        }
    }

    #[test]
    fn message_geometry_term_matches_outer_product_oracle() {
        let tape = Tape::<f64>::new(0);
        let dx = tape
            .leaf(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0], false)
            .unwrap();
        let g9 = tape.row_outer3(dx).unwrap();
        let v = tape.value(g9);
        let x = [0.5, -1.0, 2.0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((v[3 * i + j] - x[i] * x[j]).abs() < 1e-15);
            }
        }
        // zero displacement → zero geometry block
        assert!(v[9..18].iter().all(|&z| z == 0.0));
    }

    #[test]
    fn isolated_node_keeps_embedding_under_zero_bias_mlps() {
        // with all params zeroed, the node update MLP outputs zero and the
        // residual keeps h fixed; coordinates also stay put
        let cfg = crate::model::ModelConfig::standard();
        let mut model: Model<f64> = Model::new(cfg.clone(), 1);
        let names: Vec<String> = model.params.names().map(|s| s.to_string()).collect();
        for name in names {
            if name.starts_with("enc.") {
                model.params.get_mut(&name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (c, _) = generate_synthetic_complex(12, &SynthParams::default()).unwrap();
        let prep = model.prepare(&c).unwrap();
        let pass = model.forward_prepared(&prep, false, 0).unwrap();
        // encoder output equals lifted h0 (checked via variance of logits being
        // driven by h alone); directly verify coordinates did not move
        let x_init: Vec<f64> = prep
            .graph
            .cdr_positions
            .iter()
            .map(|&i| prep.graph.coords[i][1].to_array())
            .flatten()
            .collect();
        let x_out = pass.tape.value(pass.vars.x_cdr);
        assert_eq!(x_init.len(), x_out.len());
        for (a, b) in x_init.iter().zip(&x_out) {
            assert_eq!(*a, *b);
        }
    }

    #[test]
    fn single_neighbor_coord_update_is_exact_displacement() {
        // one scalar weight of 1 on a single edge: x' = x + (x - x_j)
        let tape = Tape::<f64>::new(0);
        let x = tape
            .leaf(2, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0], false)
            .unwrap();
        let dst = vec![0usize];
        let x_dst = tape.gather_rows(x, &dst).unwrap();
        let x_src = tape.gather_rows(x, &[1]).unwrap();
        let dx = tape.sub(x_dst, x_src).unwrap();
        let w = tape.constant(1, 1, vec![1.0]).unwrap();
        let scaled = tape.mul_col_broadcast(dx, w).unwrap();
        let summed = tape.scatter_add_rows(scaled, &dst, 2).unwrap();
        let inv = tape.constant(2, 1, vec![1.0, 0.0]).unwrap();
        let avg = tape.mul_col_broadcast(summed, inv).unwrap();
        let x2 = tape.add(x, avg).unwrap();
        let v = tape.value(x2);
        assert_eq!(&v[0..3], &[2.0, -2.0, 0.0]);
        assert_eq!(&v[3..6], &[0.0, 2.0, 0.0]);
    }

    /// The frame-localized geometry term is invariant when coordinates and
    /// frames move by the same rigid motion.
    #[test]
    fn message_geometry_invariance_under_rotation() {
        use crate::geom::{backbone_frame, Quaternion, Vec3};
        let axis = Vec3::new(1.0, 2.0, -0.5).normalized().unwrap();
        let half = 40.0f64.to_radians();
        let q = Quaternion {
            w: half.cos(),
            x: axis.x * half.sin(),
            y: axis.y * half.sin(),
            z: axis.z * half.sin(),
        };
        let r = q.to_matrix();
        let t = Vec3::new(5.0, -2.0, 3.0);
        // receiver residue geometry
        let n_at = Vec3::new(-0.4, 1.1, 0.2);
        let ca = Vec3::new(0.0, 0.0, 0.0);
        let c_at = Vec3::new(1.4, 0.2, -0.1);
        let sender = Vec3::new(3.1, -2.0, 1.7);
        let geom_term = |n: Vec3<f64>, ca: Vec3<f64>, c: Vec3<f64>, s: Vec3<f64>| {
            let frame = backbone_frame(n, ca, c).unwrap();
            let m = frame.rotation.rows;
            let mats = [[
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ]];
            let tape = Tape::<f64>::new(0);
            let dx = tape
                .leaf(1, 3, vec![ca.x - s.x, ca.y - s.y, ca.z - s.z], false)
                .unwrap();
            let local = tape.row_rotate(dx, &mats).unwrap();
            tape.value(tape.row_outer3(local).unwrap())
        };
        let g1 = geom_term(n_at, ca, c_at, sender);
        let mv = |p: &Vec3<f64>| r.apply(p).add(&t);
        let g2 = geom_term(mv(&n_at), mv(&ca), mv(&c_at), mv(&sender));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
