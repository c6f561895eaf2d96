//! Built-in verification suites: analytic values, brute-force oracles,
//! equivariance, and gradient checks. The `check` subcommand runs these and
//! the acceptance tests drive the same entry points at full size.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::gradcheck::{finite_difference_check, FdReport};
use crate::diff::optim::clip_global_norm;
use crate::diff::{DiffError, Tape};
use crate::geom::{random_rotation, superpose_rmsd, Vec3d};
use crate::graph::{build_graph, EdgeType, GraphConfig};
use crate::losses::{
    focal_contact_loss, pair_loss, total_loss, weighted_ce, LossBreakdown, LossTerms, LossWeights,
};
use crate::metrics::interface_metrics;
use crate::model::head::{antigen_knn, distance_bias, inject_complementarity};
use crate::model::{Model, ModelConfig};
use crate::scalar::{widen_slice, Scalar};
use crate::structure::synth::{generate_synthetic_complex, SynthParams};
use crate::structure::{compute_contact_labels, transform_complex, Complex, CONTACT_CUTOFF};
use crate::trainer::{batch_loss, prepare_dataset, EarlyStopping, TrainConfig, TrainItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<String, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

fn expect(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: got {got:.12}, want {want:.12} (tol {tol:.1e})"))
    }
}

/// Gaussian distance bias hits e⁻² at d = 2σ (the hookable Eq. 9 value).
pub fn check_distance_bias(cfg: &crate::model::AttentionConfig) -> Result<String, String> {
    let sigma = cfg.bandwidth;
    let got = distance_bias(2.0 * sigma, sigma, cfg.bias_sign);
    expect("distance_bias at 2σ", got, (-2.0f64).exp(), 1e-9)?;
    expect(
        "distance_bias at 3σ",
        distance_bias(3.0 * sigma, sigma, cfg.bias_sign),
        (-4.5f64).exp(),
        1e-9,
    )?;
    expect("distance_bias at 0", distance_bias(0.0, sigma, cfg.bias_sign), 1.0, 0.0)?;
    Ok("e⁻² at 2σ, e⁻⁴·⁵ at 3σ, 1 at 0".into())
}

/// Closed-form loss values.
pub fn check_analytic_values() -> Result<String, String> {
    let tape = Tape::<f64>::new(0);
    // uniform logits, zero contacts → ln 20
    let l = 6;
    let logits = tape.constant(l, 20, vec![0.0; l * 20]).map_err(|e| e.to_string())?;
    let contact = tape.zeros(l, 1);
    let targets: Vec<crate::structure::AminoAcid> =
        (0..l).map(crate::structure::AminoAcid::from_index).collect();
    let ce = weighted_ce(&tape, logits, &targets, contact, 4.47, true).map_err(|e| e.to_string())?;
    expect("uniform CE", tape.value_scalar(ce), 20f64.ln(), 1e-6)?;

    // focal γ=0 equals an independently implemented binary cross-entropy
    let probs = [0.11, 0.5, 0.93, 0.27, 0.66];
    let labels = [true, false, true, true, false];
    let c = tape.constant(5, 1, probs.to_vec()).map_err(|e| e.to_string())?;
    let focal0 = focal_contact_loss(&tape, c, &labels, 0.0).map_err(|e| e.to_string())?;
    let mut bce = 0.0;
    for (p, &y) in probs.iter().zip(&labels) {
        bce -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    bce /= probs.len() as f64;
    expect("focal(γ=0) vs BCE", tape.value_scalar(focal0), bce, 1e-12)?;

    // w = 1 + αĉ at ĉ = 1, α = 4.47
    let w = 1.0 + 4.47 * 1.0;
    expect("contact weight at ĉ=1", w, 5.47, 0.0)?;
    // and the loss itself scales by exactly that factor
    let one = tape.ones(1, 1);
    let zero = tape.zeros(1, 1);
    let lg = tape.constant(1, 20, (0..20).map(|i| 0.17 * i as f64).collect()).map_err(|e| e.to_string())?;
    let t1 = vec![crate::structure::AminoAcid::from_index(2)];
    let base = tape.value_scalar(weighted_ce(&tape, lg, &t1, zero, 4.47, true).map_err(|e| e.to_string())?);
    let up = tape.value_scalar(weighted_ce(&tape, lg, &t1, one, 4.47, true).map_err(|e| e.to_string())?);
    expect("weighted/unweighted ratio", up / base, 5.47, 1e-9)?;

    // pair loss over identical pooled embeddings → ln B
    let b = 4;
    let row = vec![0.4, -0.2, 0.9];
    let all: Vec<f64> = (0..b).flat_map(|_| row.clone()).collect();
    let cdr = tape.constant(b, 3, all.clone()).map_err(|e| e.to_string())?;
    let ag = tape.constant(b, 3, all).map_err(|e| e.to_string())?;
    let pl = pair_loss(&tape, cdr, ag, 0.1).map_err(|e| e.to_string())?;
    expect("pair loss ln B", tape.value_scalar(pl), (b as f64).ln(), 1e-9)?;

    // DockQ of identical complexes
    let (cx, _) = generate_synthetic_complex(7, &SynthParams::default()).map_err(|e| e.to_string())?;
    let m = interface_metrics(&cx, &cx, CONTACT_CUTOFF).map_err(|e| e.to_string())?;
    expect("DockQ identity", m.dockq.ok_or("missing dockq")?, 1.0, 1e-9)?;
    expect("fnat identity", m.fnat.ok_or("missing fnat")?, 1.0, 0.0)?;

    // seven unit terms under the standard weights
    let onev = tape.scalar(1.0);
    let terms = LossTerms {
        seq: onev,
        coord: onev,
        contact: onev,
        fp: onev,
        pair: onev,
        dock: onev,
        aux: onev,
    };
    let (tot, _) = total_loss(&tape, &terms, &LossWeights::default()).map_err(|e| e.to_string())?;
    expect("unit-term total", tape.value_scalar(tot), 3.917, 1e-12)?;

    Ok("ln20 CE, focal≡BCE, 5.47 weight, lnB pair, DockQ=1, 3.917 total".into())
}

fn random_params(rng: &mut ChaCha8Rng, i: usize) -> SynthParams {
    SynthParams {
        cdr_len: 5 + (i % 11),                      // ≤ 15
        antigen_len: 12 + rng.random_range(0..29),  // ≤ 40
        planted_contact_fraction: rng.random_range(0..9) as f64 * 0.1,
        noise: 0.25,
    }
}

/// Contact labels against the exhaustive O(L·M) rule on random instances.
pub fn check_contact_label_oracle(instances: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2001);
    for i in 0..instances {
        let p = random_params(&mut rng, i);
        let (c, labels) = generate_synthetic_complex(3000 + i as u64, &p).map_err(|e| e.to_string())?;
        let derived = compute_contact_labels(&c, CONTACT_CUTOFF).map_err(|e| e.to_string())?;
        let ag = c.antigen_ca();
        for (k, r) in c.cdr_residues().iter().enumerate() {
            let mut dmin = f64::INFINITY;
            for q in &ag {
                dmin = dmin.min(r.ca().dist(q));
            }
            let want = dmin < CONTACT_CUTOFF;
            if derived.labels[k] != want || labels.labels[k] != want {
                return Err(format!("instance {i} position {k}: label mismatch (dmin {dmin:.3})"));
            }
        }
    }
    Ok(format!("{instances} instances exact"))
}

/// KNN neighbor sets against an exhaustive sort oracle.
pub fn check_knn_oracle(instances: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    for i in 0..instances {
        let p = random_params(&mut rng, i);
        let (c, _) = generate_synthetic_complex(4000 + i as u64, &p).map_err(|e| e.to_string())?;
        let x_cdr = c.cdr_ca();
        let x_ag = c.antigen_ca();
        let k = 8usize;
        let ctx = antigen_knn(&x_cdr, &x_ag, k);
        for (pos, xc) in x_cdr.iter().enumerate() {
            let mut order: Vec<usize> = (0..x_ag.len()).collect();
            order.sort_by(|&a, &b| {
                xc.dist(&x_ag[a])
                    .partial_cmp(&xc.dist(&x_ag[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let want = &order[..ctx.k_eff];
            let got = &ctx.flat_ag[pos * ctx.k_eff..(pos + 1) * ctx.k_eff];
            if got != want {
                return Err(format!("instance {i} position {pos}: knn mismatch"));
            }
        }
    }
    Ok(format!("{instances} instances exact"))
}

/// Per-type edge sets against brute-force reconstruction.
pub fn check_edge_set_oracle(instances: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2003);
    let cfg = GraphConfig::default();
    for i in 0..instances {
        let p = random_params(&mut rng, i);
        let (c, _) = generate_synthetic_complex(5000 + i as u64, &p).map_err(|e| e.to_string())?;
        let g = build_graph(&c, &cfg).map_err(|e| e.to_string())?;
        let nh = c.heavy.len();
        let nl = c.light.len();
        let na = c.antigen.len();
        let ca: Vec<Vec3d> = c
            .heavy
            .iter()
            .chain(&c.light)
            .chain(&c.antigen)
            .map(|r| r.ca())
            .collect();
        let chain_of = |n: usize| {
            if n < nh {
                0
            } else if n < nh + nl {
                1
            } else {
                2
            }
        };
        let sorted = |mut v: Vec<(u32, u32)>| {
            v.sort_unstable();
            v
        };
        let got = |t: EdgeType| sorted(g.edges_of(t).iter().map(|e| (e.src, e.dst)).collect());

        // intra radial
        let mut want = Vec::new();
        for a in 0..ca.len() {
            for b in 0..ca.len() {
                if a != b && chain_of(a) == chain_of(b) && ca[a].dist(&ca[b]) < cfg.radial_cutoff {
                    want.push((a as u32, b as u32));
                }
            }
        }
        if got(EdgeType::IntraRadial) != sorted(want) {
            return Err(format!("instance {i}: intra-radial set mismatch"));
        }

        // intra seq offsets 1, 2 both directions
        let mut want = Vec::new();
        for (start, len) in [(0, nh), (nh, nl), (nh + nl, na)] {
            for a in 0..len {
                for off in [1usize, 2] {
                    if a + off < len {
                        want.push(((start + a) as u32, (start + a + off) as u32));
                        want.push(((start + a + off) as u32, (start + a) as u32));
                    }
                }
            }
        }
        if got(EdgeType::IntraSeq) != sorted(want) {
            return Err(format!("instance {i}: intra-seq set mismatch"));
        }

        // inter radial between antibody and antigen only
        let mut want = Vec::new();
        for a in 0..nh + nl {
            for b in nh + nl..ca.len() {
                if ca[a].dist(&ca[b]) < cfg.inter_radial_cutoff {
                    want.push((a as u32, b as u32));
                    want.push((b as u32, a as u32));
                }
            }
        }
        if got(EdgeType::InterRadial) != sorted(want) {
            return Err(format!("instance {i}: inter-radial set mismatch"));
        }

        // intra knn in-degree and membership
        for (start, len) in [(0, nh), (nh, nl), (nh + nl, na)] {
            for a in 0..len {
                let node = start + a;
                let mut order: Vec<usize> = (0..len).filter(|&b| b != a).map(|b| start + b).collect();
                order.sort_by(|&x, &y| {
                    ca[node]
                        .dist(&ca[x])
                        .partial_cmp(&ca[node].dist(&ca[y]))
                        .unwrap()
                        .then(x.cmp(&y))
                });
                let want: std::collections::BTreeSet<u32> =
                    order.iter().take(cfg.knn_k).map(|&x| x as u32).collect();
                let got: std::collections::BTreeSet<u32> = g
                    .edges_of(EdgeType::IntraKnn)
                    .iter()
                    .filter(|e| e.dst as usize == node)
                    .map(|e| e.src)
                    .collect();
                if got != want {
                    return Err(format!("instance {i}: intra-knn mismatch at node {node}"));
                }
            }
        }

        // star and virtual-node counts
        if g.edges_of(EdgeType::GlobHc).len() != nh
            || g.edges_of(EdgeType::GlobLc).len() != nl
            || g.edges_of(EdgeType::GlobAg).len() != na
        {
            return Err(format!("instance {i}: global star edge counts wrong"));
        }
        let nv = cfg.n_virtual;
        if g.edges_of(EdgeType::VnEpitope).len() != 2 * nv * c.epitope.len()
            || g.edges_of(EdgeType::VnCdr).len() != 2 * nv * c.cdr_len()
        {
            return Err(format!("instance {i}: virtual-node edge counts wrong"));
        }
    }
    Ok(format!("{instances} instances exact"))
}

/// Interface metrics against brute-force oracles: exact contact sets (fnat,
/// epitope F1), exact interface-residue selection, and iRMSD against a
/// rotation-search refinement oracle within 1e-3.
pub fn check_interface_metric_oracle(instances: usize, rmsd_search: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2004);
    for i in 0..instances {
        let p = random_params(&mut rng, i);
        let (c, _) = generate_synthetic_complex(6000 + i as u64, &p).map_err(|e| e.to_string())?;
        // perturbed prediction sharing the framework/antigen
        let mut pred = c.clone();
        let (s, e) = pred.cdr_span;
        for r in &mut pred.heavy[s..e] {
            let shift = Vec3d::new(
                (rng.random::<f64>() - 0.5) * 6.0,
                (rng.random::<f64>() - 0.5) * 6.0,
                (rng.random::<f64>() - 0.5) * 6.0,
            );
            for a in r.atoms.iter_mut() {
                *a = a.add(&shift);
            }
        }
        let got = interface_metrics(&pred, &c, CONTACT_CUTOFF).map_err(|e| e.to_string())?;

        // brute force pairs
        let pairs = |cx: &Complex| {
            let mut set = std::collections::BTreeSet::new();
            for (k, r) in cx.cdr_residues().iter().enumerate() {
                for (j, q) in cx.antigen.iter().enumerate() {
                    if r.ca().dist(&q.ca()) < CONTACT_CUTOFF {
                        set.insert((k, j));
                    }
                }
            }
            set
        };
        let native = pairs(&c);
        let predicted = pairs(&pred);
        if native.is_empty() {
            if got.fnat.is_some() {
                return Err(format!("instance {i}: fnat must be missing without native contacts"));
            }
            continue;
        }
        let fnat = native.intersection(&predicted).count() as f64 / native.len() as f64;
        if got.fnat != Some(fnat) {
            return Err(format!("instance {i}: fnat {:?} vs oracle {fnat}", got.fnat));
        }
        let nat_ag: std::collections::BTreeSet<usize> = native.iter().map(|&(_, j)| j).collect();
        let prd_ag: std::collections::BTreeSet<usize> = predicted.iter().map(|&(_, j)| j).collect();
        let tp = nat_ag.intersection(&prd_ag).count() as f64;
        let prec = if prd_ag.is_empty() { 0.0 } else { tp / prd_ag.len() as f64 };
        let rec = tp / nat_ag.len() as f64;
        let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        if (got.epitope_f1.unwrap() - f1).abs() > 1e-12 {
            return Err(format!("instance {i}: epitope F1 {:?} vs {f1}", got.epitope_f1));
        }

        // iRMSD vs rotation-search oracle on a subset (search is expensive)
        if i < rmsd_search {
            let mut iface_p: Vec<Vec3d> = Vec::new();
            let mut iface_r: Vec<Vec3d> = Vec::new();
            let cdr_set: std::collections::BTreeSet<usize> = native.iter().map(|&(k, _)| k).collect();
            for &k in &cdr_set {
                iface_p.push(pred.cdr_residues()[k].ca());
                iface_r.push(c.cdr_residues()[k].ca());
            }
            for &j in &nat_ag {
                iface_p.push(pred.antigen[j].ca());
                iface_r.push(c.antigen[j].ca());
            }
            let direct = superpose_rmsd(&iface_p, &iface_r, iface_p.len() >= 3)
                .map_err(|e| e.to_string())?;
            if (got.irmsd.unwrap() - direct).abs() > 1e-12 {
                return Err(format!("instance {i}: interface set selection differs"));
            }
            if iface_p.len() >= 3 {
                let oracle = rotation_search_rmsd(&iface_p, &iface_r, &mut rng);
                if (direct - oracle).abs() > 1e-3 {
                    return Err(format!(
                        "instance {i}: iRMSD {direct:.6} vs search oracle {oracle:.6}"
                    ));
                }
            }
        }
    }
    Ok(format!("{instances} instances ({rmsd_search} with rotation-search iRMSD)"))
}

fn rotation_search_rmsd(p: &[Vec3d], q: &[Vec3d], rng: &mut ChaCha8Rng) -> f64 {
    let centroid = |pts: &[Vec3d]| {
        pts.iter()
            .fold(Vec3d::zero(), |a, b| a.add(b))
            .scale(1.0 / pts.len() as f64)
    };
    let cp = centroid(p);
    let cq = centroid(q);
    let pc: Vec<Vec3d> = p.iter().map(|v| v.sub(&cp)).collect();
    let qc: Vec<Vec3d> = q.iter().map(|v| v.sub(&cq)).collect();
    let rmsd_for = |r: &crate::geom::Mat3<f64>| {
        let ss: f64 = pc
            .iter()
            .zip(&qc)
            .map(|(a, b)| {
                let d = a.sub(&r.apply(b));
                d.dot(&d)
            })
            .sum();
        (ss / pc.len() as f64).sqrt()
    };
    let mut best_r = crate::geom::Mat3::identity();
    let mut best = rmsd_for(&best_r);
    for _ in 0..3000 {
        let r = random_rotation(rng);
        let v = rmsd_for(&r);
        if v < best {
            best = v;
            best_r = r;
        }
    }
    let mut sigma = 0.4f64;
    for _ in 0..12 {
        for _ in 0..300 {
            let axis = Vec3d::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let Some(axis) = axis.normalized() else { continue };
            let angle = (rng.random::<f64>() - 0.5) * 2.0 * sigma;
            let qrot = crate::geom::Quaternion {
                w: (angle / 2.0).cos(),
                x: axis.x * (angle / 2.0).sin(),
                y: axis.y * (angle / 2.0).sin(),
                z: axis.z * (angle / 2.0).sin(),
            };
            let r = qrot.to_matrix().matmul(&best_r);
            let v = rmsd_for(&r);
            if v < best {
                best = v;
                best_r = r;
            }
        }
        sigma *= 0.5;
    }
    best
}

/// Hard-off gating: ĉ = 0 must reproduce h exactly and zero the attention
/// block, bit for bit.
pub fn check_gating_hard_off(cfg: &ModelConfig) -> Result<String, String> {
    let model: Model<f64> = Model::new(cfg.clone(), 77);
    let tape = Tape::new(0);
    let binding = model.params.bind(&tape).map_err(|e| e.to_string())?;
    let l = 5;
    let m = 9;
    let d = cfg.encoder.hidden_dim;
    let ad = cfg.attention.heads * cfg.attention.head_dim;
    let h_cdr = tape
        .leaf(l, d, (0..l * d).map(|i| (i as f64 * 0.011).sin()).collect(), false)
        .map_err(|e| e.to_string())?;
    let h_ag = tape
        .leaf(m, d, (0..m * d).map(|i| (i as f64 * 0.007).cos()).collect(), false)
        .map_err(|e| e.to_string())?;
    let o_attn = tape
        .leaf(l, ad, (0..l * ad).map(|i| 0.2 + 1e-4 * i as f64).collect(), false)
        .map_err(|e| e.to_string())?;
    let contact = tape.zeros(l, 1);
    let x_cdr: Vec<Vec3d> = (0..l).map(|i| Vec3d::new(i as f64, 0.0, 0.0)).collect();
    let x_ag: Vec<Vec3d> = (0..m).map(|j| Vec3d::new(j as f64, 3.0, 0.0)).collect();
    let knn = antigen_knn(&x_cdr, &x_ag, cfg.decoder.knn_k);
    let (enriched, z) = inject_complementarity(
        &tape, &binding, d, 0.0, h_cdr, h_ag, contact, o_attn, &knn, false,
    )
    .map_err(|e| e.to_string())?;
    if tape.value(enriched) != tape.value(h_cdr) {
        return Err("enriched differs from h under ĉ = 0".into());
    }
    let zv = tape.value(z);
    for r in 0..l {
        if zv[r * (d + ad) + d..(r + 1) * (d + ad)].iter().any(|&v| v != 0.0) {
            return Err("attention block of z is not exactly zero under ĉ = 0".into());
        }
    }
    Ok("enriched ≡ h and zeroed attention block, exact".into())
}

/// Maximum deviation of every scalar output, all seven losses, and the
/// equivariant coordinate check over random rigid motions.
pub fn equivariance_max_dev<T: Scalar>(
    model: &Model<T>,
    weights: &LossWeights,
    complexes: &[Complex],
    motions_per_complex: usize,
    seed: u64,
) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut track = |v: f64| {
        if v > worst {
            worst = v;
        }
    };
    for c in complexes {
        let base_items = prepare_dataset(model, std::slice::from_ref(c)).map_err(|e| e.to_string())?;
        let base_refs: Vec<&TrainItem> = base_items.iter().collect();
        let (_, _, _, base_losses) =
            batch_loss(model, &base_refs, weights, false, 0).map_err(|e| e.to_string())?;
        let base_pass = model
            .forward_prepared(&base_items[0].prep, false, 0)
            .map_err(|e| e.to_string())?;
        let base_logits = widen_slice(&base_pass.logits_values());
        let base_contact = widen_slice(&base_pass.contact_values());
        let base_fp = widen_slice(&base_pass.fingerprint_values());
        let base_x = base_pass.cdr_ca_values();

        for _ in 0..motions_per_complex {
            let r = random_rotation(&mut rng);
            let t = Vec3d::new(
                (rng.random::<f64>() - 0.5) * 40.0,
                (rng.random::<f64>() - 0.5) * 40.0,
                (rng.random::<f64>() - 0.5) * 40.0,
            );
            let moved = transform_complex(c, &r, t);
            let moved_items =
                prepare_dataset(model, std::slice::from_ref(&moved)).map_err(|e| e.to_string())?;
            let moved_refs: Vec<&TrainItem> = moved_items.iter().collect();
            let (_, _, _, moved_losses) =
                batch_loss(model, &moved_refs, weights, false, 0).map_err(|e| e.to_string())?;
            let moved_pass = model
                .forward_prepared(&moved_items[0].prep, false, 0)
                .map_err(|e| e.to_string())?;

            for (a, b) in base_logits.iter().zip(widen_slice(&moved_pass.logits_values())) {
                track((a - b).abs());
            }
            for (a, b) in base_contact.iter().zip(widen_slice(&moved_pass.contact_values())) {
                track((a - b).abs());
            }
            for (a, b) in base_fp.iter().zip(widen_slice(&moved_pass.fingerprint_values())) {
                track((a - b).abs());
            }
            for (name, a, b) in loss_pairs(&base_losses, &moved_losses) {
                let _ = name;
                track((a - b).abs());
            }
            // coordinates must transform with the motion
            for (xb, xm) in base_x.iter().zip(moved_pass.cdr_ca_values()) {
                let want = r.apply(xb).add(&t);
                track(want.sub(&xm).norm());
            }
        }
    }
    Ok(worst)
}

fn loss_pairs(a: &LossBreakdown, b: &LossBreakdown) -> Vec<(&'static str, f64, f64)> {
    vec![
        ("seq", a.seq, b.seq),
        ("coord", a.coord, b.coord),
        ("contact", a.contact, b.contact),
        ("fp", a.fp, b.fp),
        ("pair", a.pair, b.pair),
        ("dock", a.dock, b.dock),
        ("aux", a.aux, b.aux),
    ]
}

/// Standard synthetic complexes for the equivariance suite.
pub fn equivariance_complexes(count: usize, seed: u64) -> Result<Vec<Complex>, String> {
    (0..count)
        .map(|i| {
            let p = SynthParams {
                cdr_len: 6 + (i % 7),
                antigen_len: 16 + 2 * (i % 6),
                planted_contact_fraction: 0.3 + 0.05 * (i % 8) as f64,
                noise: 0.3,
            };
            generate_synthetic_complex(seed + i as u64, &p)
                .map(|(c, _)| c)
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Finite-difference check of the full seven-term objective through the
/// whole model on one small complex.
pub fn gradient_suite(min_samples: usize, seed: u64) -> Result<FdReport, String> {
    let cfg = ModelConfig::standard();
    let model: Model<f64> = Model::new(cfg.clone(), 2024);
    let p = SynthParams {
        cdr_len: 6,
        antigen_len: 12,
        planted_contact_fraction: 0.5,
        noise: 0.2,
    };
    let (c, _) = generate_synthetic_complex(909, &p).map_err(|e| e.to_string())?;
    let items = prepare_dataset(&model, &[c]).map_err(|e| e.to_string())?;
    let weights = LossWeights::default();
    let eval = |params: &crate::diff::params::ParamStore<f64>,
                want_grad: bool|
     -> Result<(f64, Option<std::collections::BTreeMap<String, Vec<f64>>>), DiffError> {
        let probe = Model {
            config: cfg.clone(),
            params: params.clone(),
        };
        let refs: Vec<&TrainItem> = items.iter().collect();
        let (tape, binding, total, _) = batch_loss(&probe, &refs, &weights, false, 0)
            .map_err(|e| DiffError::NonFinite(format!("forward failed: {e}")))?;
        let v = tape.value_scalar(total);
        if want_grad {
            tape.backward(total)?;
            Ok((v, Some(probe.params.grads(&tape, &binding))))
        } else {
            Ok((v, None))
        }
    };
    finite_difference_check(&model.params, eval, 1e-5, min_samples, seed).map_err(|e| e.to_string())
}

/// Training-regimen invariants: the lr schedule, clipping, the first Adam
/// step, and early stopping on a scripted validation sequence.
pub fn check_regimen() -> Result<String, String> {
    let cfg = TrainConfig::default();
    for k in 0..40usize {
        let want = 6.31e-4 * 0.944f64.powi(k as i32);
        if (cfg.lr_at_epoch(k) - want).abs() > 1e-12 {
            return Err(format!("lr schedule off at epoch {k}"));
        }
    }
    // clipping: post-norm = min(pre, 0.5)
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut grads = std::collections::BTreeMap::new();
        for g in 0..4 {
            let v: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 0.4 - 0.2).collect();
            grads.insert(format!("g{g}"), v);
        }
        let pre = clip_global_norm(&mut grads, 0.5);
        let post: f64 = grads
            .values()
            .flat_map(|v| v.iter().map(|x| x * x))
            .sum::<f64>()
            .sqrt();
        if (post - pre.min(0.5)).abs() > 1e-9 {
            return Err(format!("clip: pre {pre} post {post}"));
        }
    }
    // early stopping on a scripted worsening sequence: best at epoch 1,
    // patience 3 → stop exactly at epoch 4
    let mut stopper = EarlyStopping::new(3);
    let script = [1.0, 0.9, 0.95, 0.97, 0.99, 1.01, 1.5];
    let mut stopped_at = None;
    for (epoch, &v) in script.iter().enumerate() {
        stopper.observe(epoch, v);
        if stopper.should_stop(epoch) {
            stopped_at = Some(epoch);
            break;
        }
    }
    if stopped_at != Some(4) {
        return Err(format!("early stopping fired at {stopped_at:?}, want Some(4)"));
    }
    // patience 1 with strictly worsening validation stops after epoch 1
    let mut stopper = EarlyStopping::new(1);
    stopper.observe(0, 1.0);
    if stopper.should_stop(0) {
        return Err("stopped before patience was exhausted".into());
    }
    stopper.observe(1, 2.0);
    if !stopper.should_stop(1) {
        return Err("did not stop at patience exhaustion".into());
    }
    Ok("lr schedule 1e-12, clip 1e-9, scripted early stop exact".into())
}

/// Small randomized composite-graph gradient probe.
pub fn check_primitive_gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ps = crate::diff::params::ParamStore::<f64>::new();
    ps.register(
        "w",
        4,
        5,
        crate::diff::params::Init::UniformFanIn { fan_in: 5 },
        &mut rng,
    );
    let eval = |p: &crate::diff::params::ParamStore<f64>, grad: bool| {
        let tape = Tape::new(0);
        let b = p.bind(&tape)?;
        let w = b.var("w")?;
        let s = tape.silu(w);
        let sm = tape.softmax_rows(s)?;
        let h = tape.huber(sm, 0.4);
        let e = tape.exp(tape.scale(h, 0.5));
        let n = tape.row_norm(e);
        let loss = tape.mean_all(n)?;
        let v = tape.value_scalar(loss);
        if grad {
            tape.backward(loss)?;
            Ok((v, Some(p.grads(&tape, &b))))
        } else {
            Ok((v, None))
        }
    };
    let report = finite_difference_check(&ps, eval, 1e-5, 20, 3).map_err(|e| e.to_string())?;
    if report.max_rel_err > 1e-6 {
        return Err(format!("primitive gradients: {report:?}"));
    }
    Ok(format!("max rel err {:.2e} over {} coords", report.max_rel_err, report.checked))
}

/// Run the named check suite.
pub fn run_checks(level: Level, cfg: &ModelConfig) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, result: Result<String, String>| {
        out.push(CheckOutcome { name, result });
    };

    push("distance_bias", check_distance_bias(&cfg.attention));
    push("analytic_values", check_analytic_values());
    push("regimen", check_regimen());
    push("primitive_gradients", check_primitive_gradients());
    push("gating_hard_off", check_gating_hard_off(cfg));

    let (label_n, knn_n, edge_n, iface_n, iface_search) = match level {
        Level::Fast => (12, 12, 6, 8, 1),
        Level::Full => (50, 50, 50, 50, 5),
    };
    push("contact_label_oracle", check_contact_label_oracle(label_n));
    push("knn_oracle", check_knn_oracle(knn_n));
    push("edge_set_oracle", check_edge_set_oracle(edge_n));
    push(
        "interface_metric_oracle",
        check_interface_metric_oracle(iface_n, iface_search),
    );

    let equivariance = (|| -> Result<String, String> {
        let (n_complex, motions, tol) = match level {
            Level::Fast => (2usize, 2usize, 1e-8),
            Level::Full => (4, 5, 1e-8),
        };
        let complexes = equivariance_complexes(n_complex, 7100)?;
        let model: Model<f64> = Model::new(cfg.clone(), 4242);
        let dev = equivariance_max_dev(&model, &LossWeights::default(), &complexes, motions, 99)?;
        if dev > tol {
            return Err(format!("max deviation {dev:.3e} exceeds {tol:.0e}"));
        }
        Ok(format!("max deviation {dev:.3e} over {n_complex}×{motions} motions"))
    })();
    push("equivariance", equivariance);

    if level == Level::Full {
        let grad = (|| -> Result<String, String> {
            let report = gradient_suite(256, 17)?;
            if report.max_rel_err > 1e-4 {
                return Err(format!("{report:?}"));
            }
            Ok(format!(
                "max rel err {:.2e} over {} sampled parameters",
                report.max_rel_err, report.checked
            ))
        })();
        push("gradient_full_model", grad);
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suite_is_green() {
        let outcomes = run_checks(Level::Fast, &ModelConfig::standard());
        for o in &outcomes {
            assert!(o.passed(), "{}: {:?}", o.name, o.result);
        }
    }

    #[test]
    fn sign_flip_mutation_is_caught_by_distance_bias_check() {
        let mut cfg = ModelConfig::standard();
        cfg.attention.bias_sign = -1.0;
        let result = check_distance_bias(&cfg.attention);
        assert!(result.is_err());
        // and the registry reports it under the distance_bias name
        let outcomes = run_checks(Level::Fast, &cfg);
        let bias = outcomes.iter().find(|o| o.name == "distance_bias").unwrap();
        assert!(!bias.passed());
    }
}
