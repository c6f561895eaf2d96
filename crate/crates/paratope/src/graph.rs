//! Heterogeneous graph construction: residue/global/virtual nodes, 10 typed
//! edge sets, raw node features, and geometric edge features.
//!
//! All geometry here is computed in f64 regardless of the model precision;
//! features are cast at tensor-assembly time. Raw features are built from
//! rotation/translation-invariant quantities only (distances, angles,
//! relative orientations), so the downstream scalar pipeline is invariant
//! under rigid motions of the input complex.

use std::io::Write;

use thiserror::Error;

use crate::geom::{
    backbone_frame, bond_angle, dihedral, rbf_expand, rotation_to_quaternion, Mat3, RbfSpec, Vec3d,
};
use crate::structure::{Complex, Residue, Segment};

pub const NODE_FEAT_DIM: usize = 108;
pub const EDGE_FEAT_DIM: usize = 151;

/// Node feature layout offsets.
pub const FEAT_AA: usize = 0; // 20: amino one-hot (zero when masked)
pub const FEAT_BOND_RBF: usize = 20; // 3 bonds × 16 bins
pub const FEAT_ANGLES: usize = 68; // 6 angles × (sin, cos)
pub const FEAT_FRAME: usize = 80; // 9: frame axes relative to the previous residue
pub const FEAT_POS: usize = 89; // 16: sinusoidal chain position
pub const FEAT_SEGMENT: usize = 105; // 3: segment one-hot

/// Chemical block = amino one-hot + segment one-hot; the rest is geometric.
pub const CHEM_DIMS: usize = 23;
pub const GEOM_DIMS: usize = 85;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph construction requires a non-empty antigen")]
    EmptyAntigen,
    #[error("graph construction requires a non-empty CDR span")]
    EmptyCdr,
    #[error("invalid graph config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The ten edge types. Residue-residue types carry geometric features;
/// global and virtual edges use learnable feature vectors owned by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeType {
    IntraRadial,
    IntraSeq,
    IntraKnn,
    InterRadial,
    InterKnn,
    GlobHc,
    GlobLc,
    GlobAg,
    VnEpitope,
    VnCdr,
}

impl EdgeType {
    pub const ALL: [EdgeType; 10] = [
        EdgeType::IntraRadial,
        EdgeType::IntraSeq,
        EdgeType::IntraKnn,
        EdgeType::InterRadial,
        EdgeType::InterKnn,
        EdgeType::GlobHc,
        EdgeType::GlobLc,
        EdgeType::GlobAg,
        EdgeType::VnEpitope,
        EdgeType::VnCdr,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::IntraRadial => "intra_radial",
            EdgeType::IntraSeq => "intra_seq",
            EdgeType::IntraKnn => "intra_knn",
            EdgeType::InterRadial => "inter_radial",
            EdgeType::InterKnn => "inter_knn",
            EdgeType::GlobHc => "glob_hc",
            EdgeType::GlobLc => "glob_lc",
            EdgeType::GlobAg => "glob_ag",
            EdgeType::VnEpitope => "vn_epitope",
            EdgeType::VnCdr => "vn_cdr",
        }
    }

    /// Types whose edges connect two residue nodes and carry geometric features.
    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            EdgeType::IntraRadial
                | EdgeType::IntraSeq
                | EdgeType::IntraKnn
                | EdgeType::InterRadial
                | EdgeType::InterKnn
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalToken {
    Boh,
    Bol,
    Boa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Residue(Segment),
    Global(GlobalToken),
    Virtual(usize),
}

/// A directed edge: message flows src → dst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
}

#[derive(Debug, Clone)]
pub struct GraphConfig {
    pub radial_cutoff: f64,
    pub knn_k: usize,
    pub inter_radial_cutoff: f64,
    pub inter_knn_k: usize,
    pub n_virtual: usize,
    /// Basis for intra-residue bond lengths (16 bins over 1..2 Å).
    pub bond_rbf: RbfSpec<f64>,
    /// Basis for inter-residue atom-pair distances (8 bins over 0..20 Å).
    pub edge_rbf: RbfSpec<f64>,
    pub positional_dims: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            radial_cutoff: 10.0,
            knn_k: 8,
            inter_radial_cutoff: 12.0,
            inter_knn_k: 8,
            n_virtual: 3,
            bond_rbf: RbfSpec::uniform(1.0, 2.0, 16).unwrap(),
            edge_rbf: RbfSpec::uniform(0.0, 20.0, 8).unwrap(),
            positional_dims: 16,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.radial_cutoff <= 0.0 || self.inter_radial_cutoff <= 0.0 {
            return Err(GraphError::BadConfig("cutoffs must be positive"));
        }
        if self.knn_k == 0 || self.inter_knn_k == 0 {
            return Err(GraphError::BadConfig("knn k must be at least 1"));
        }
        if self.bond_rbf.count() != 16 || self.edge_rbf.count() != 8 {
            return Err(GraphError::BadConfig("rbf bin counts are fixed by the feature layout"));
        }
        if self.positional_dims != 16 {
            return Err(GraphError::BadConfig("positional encoding is 16-d in this layout"));
        }
        Ok(())
    }
}

/// The heterogeneous graph over one complex.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pub kinds: Vec<NodeKind>,
    /// Per-node backbone coordinates; global/virtual nodes replicate their
    /// single (computed) coordinate across the four slots.
    pub coords: Vec<[Vec3d; 4]>,
    /// Raw 108-d features for residue nodes (global/virtual features are
    /// learnable and owned by the model).
    pub node_feats: Vec<Vec<f64>>,
    /// Directed edges per type, indexed by `EdgeType::index`.
    pub edges: [Vec<Edge>; 10],
    /// Flat (E × 151) feature matrix per geometric type; None for learnable.
    pub edge_feats: [Option<Vec<f64>>; 10],
    pub residue_count: usize,
    /// Node indices of CDR residues, in span order.
    pub cdr_positions: Vec<usize>,
    /// Node indices of antigen residues, in chain order.
    pub antigen_positions: Vec<usize>,
    /// Node indices of epitope residues.
    pub epitope_positions: Vec<usize>,
}

impl HeteroGraph {
    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn edges_of(&self, t: EdgeType) -> &[Edge] {
        &self.edges[t.index()]
    }

    pub fn edge_feats_of(&self, t: EdgeType) -> Option<&[f64]> {
        self.edge_feats[t.index()].as_deref()
    }

    /// Total directed edge count.
    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    /// Debugging dump: node table, per-type edge lists, feature matrices.
    /// Plain text, not stability-guaranteed.
    pub fn write_debug_dump<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        writeln!(w, "# nodes {}", self.node_count())?;
        for (i, k) in self.kinds.iter().enumerate() {
            let ca = self.coords[i][1];
            writeln!(w, "node {i} {:?} ca {:.3} {:.3} {:.3}", k, ca.x, ca.y, ca.z)?;
        }
        for t in EdgeType::ALL {
            let es = self.edges_of(t);
            writeln!(w, "# edges {} {}", t.name(), es.len())?;
            for e in es {
                writeln!(w, "{} -> {}", e.src, e.dst)?;
            }
        }
        writeln!(w, "# node_feats {} x {}", self.node_feats.len(), NODE_FEAT_DIM)?;
        for (i, f) in self.node_feats.iter().enumerate() {
            write!(w, "{i}")?;
            for v in f {
                write!(w, " {v:.6}")?;
            }
            writeln!(w)?;
        }
        for t in EdgeType::ALL {
            if let Some(fs) = self.edge_feats_of(t) {
                writeln!(w, "# edge_feats {} {} x {}", t.name(), fs.len() / EDGE_FEAT_DIM, EDGE_FEAT_DIM)?;
            }
        }
        Ok(())
    }
}

fn frame_of(r: &Residue) -> Option<Mat3<f64>> {
    backbone_frame(r.n(), r.ca(), r.c()).ok().map(|f| f.rotation)
}

fn sincos_or_zero(angle: Option<f64>) -> [f64; 2] {
    match angle {
        Some(a) => [a.sin(), a.cos()],
        None => [0.0, 0.0],
    }
}

/// Raw 108-d feature vectors for every residue, ordered heavy, light, antigen.
///
/// Masked residues (aa = Unknown) get an all-zero identity block. Degenerate
/// geometry zero-fills the affected angle/frame entries with a warning.
pub fn build_node_features(c: &Complex, cfg: &GraphConfig) -> Result<Vec<Vec<f64>>, GraphError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(c.heavy.len() + c.light.len() + c.antigen.len());
    for (segment, chain) in [
        (Segment::Heavy, &c.heavy),
        (Segment::Light, &c.light),
        (Segment::Antigen, &c.antigen),
    ] {
        for (i, r) in chain.iter().enumerate() {
            let mut f = vec![0.0f64; NODE_FEAT_DIM];
            // amino one-hot; the masked marker stays all-zero
            if let Some(a) = r.aa.index() {
                f[FEAT_AA + a] = 1.0;
            }
            // intra-residue bond-length RBFs
            for (b, d) in [
                r.n().dist(&r.ca()),
                r.ca().dist(&r.c()),
                r.c().dist(&r.o()),
            ]
            .into_iter()
            .enumerate()
            {
                let exp = rbf_expand(d, &cfg.bond_rbf)?;
                f[FEAT_BOND_RBF + 16 * b..FEAT_BOND_RBF + 16 * (b + 1)].copy_from_slice(&exp);
            }
            // three intra-residue bond angles: N-Cα-C, Cα-C-O, N-Cα-O
            let prev = (i > 0).then(|| &chain[i - 1]);
            let next = chain.get(i + 1);
            let angles = [
                bond_angle(r.n(), r.ca(), r.c()).ok(),
                bond_angle(r.ca(), r.c(), r.o()).ok(),
                bond_angle(r.n(), r.ca(), r.o()).ok(),
                // φ, ψ, ω
                prev.and_then(|p| dihedral(p.c(), r.n(), r.ca(), r.c()).ok()),
                next.and_then(|n| dihedral(r.n(), r.ca(), r.c(), n.n()).ok()),
                next.and_then(|n| dihedral(r.ca(), r.c(), n.n(), n.ca()).ok()),
            ];
            if angles[..3].iter().any(|a| a.is_none()) {
                log::warn!("degenerate backbone geometry at {:?}[{}]", segment, i);
            }
            for (a, angle) in angles.into_iter().enumerate() {
                let sc = sincos_or_zero(angle);
                f[FEAT_ANGLES + 2 * a] = sc[0];
                f[FEAT_ANGLES + 2 * a + 1] = sc[1];
            }
            // frame axes expressed in the previous residue's frame; identity
            // for chain starts. Rows of R_i · R_{i-1}ᵀ.
            let rel = match (frame_of(r), prev.and_then(frame_of)) {
                (Some(ri), Some(rp)) => Some(ri.matmul(&rp.transpose())),
                (Some(_), None) if i == 0 => Some(Mat3::identity()),
                _ => None,
            };
            match rel {
                Some(m) => {
                    for (k, row) in m.rows.iter().enumerate() {
                        f[FEAT_FRAME + 3 * k..FEAT_FRAME + 3 * (k + 1)].copy_from_slice(row);
                    }
                }
                None => log::warn!("degenerate frame at {:?}[{}]; zero-filled", segment, i),
            }
            // sinusoidal chain-position encoding
            let pos = r.chain_index as f64;
            for k in 0..cfg.positional_dims / 2 {
                let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / cfg.positional_dims as f64);
                f[FEAT_POS + 2 * k] = (pos * freq).sin();
                f[FEAT_POS + 2 * k + 1] = (pos * freq).cos();
            }
            let seg_idx = match segment {
                Segment::Heavy => 0,
                Segment::Light => 1,
                Segment::Antigen => 2,
            };
            f[FEAT_SEGMENT + seg_idx] = 1.0;
            out.push(f);
        }
    }
    Ok(out)
}

/// Geometric edge feature vector for a residue-residue edge. `dst` is the
/// receiver whose local frame anchors the relative features.
pub fn build_edge_features(
    dst: &Residue,
    src: &Residue,
    t: EdgeType,
    cfg: &GraphConfig,
) -> Result<Vec<f64>, GraphError> {
    let mut f = vec![0.0f64; EDGE_FEAT_DIM];
    f[t.index()] = 1.0;
    let frame_dst = backbone_frame(dst.n(), dst.ca(), dst.c()).ok();
    let frame_src = backbone_frame(src.n(), src.ca(), src.c()).ok();
    if frame_dst.is_none() || frame_src.is_none() {
        log::warn!("degenerate frame on edge; identity-quaternion fallback");
    }
    // Cα of the sender in the receiver's local frame
    if let Some(fd) = &frame_dst {
        let local = fd.to_local(&src.ca());
        f[10] = local.x;
        f[11] = local.y;
        f[12] = local.z;
    }
    // 16 backbone atom-pair distances, each in 8 RBF bins
    let mut off = 13;
    for a in 0..4 {
        for b in 0..4 {
            let d = dst.atoms[a].dist(&src.atoms[b]);
            let exp = rbf_expand(d, &cfg.edge_rbf)?;
            f[off..off + 8].copy_from_slice(&exp);
            off += 8;
        }
    }
    // relative orientation quaternion (identity fallback)
    let quat = match (&frame_dst, &frame_src) {
        (Some(fd), Some(fs)) => {
            let m = fd.rotation.matmul(&fs.rotation.transpose());
            rotation_to_quaternion(&m).ok()
        }
        _ => None,
    };
    let q = quat.map(|q| q.to_array()).unwrap_or([1.0, 0.0, 0.0, 0.0]);
    f[141..145].copy_from_slice(&q);
    // frame axes against the unit displacement
    if let (Some(fd), Some(fs)) = (&frame_dst, &frame_src) {
        if let Some(u) = src.ca().sub(&dst.ca()).normalized() {
            for k in 0..3 {
                f[145 + k] = fd.rotation.row(k).dot(&u);
                f[148 + k] = fs.rotation.row(k).dot(&u);
            }
        }
    }
    Ok(f)
}

fn knn_indices(
    from: Vec3d,
    candidates: impl Iterator<Item = (usize, Vec3d)>,
    k: usize,
) -> Vec<usize> {
    let mut ds: Vec<(f64, usize)> = candidates.map(|(i, p)| (from.dist(&p), i)).collect();
    // ties broken by ascending node index for determinism
    ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    ds.into_iter().take(k).map(|(_, i)| i).collect()
}

fn centroid_of(nodes: &[usize], coords: &[[Vec3d; 4]]) -> Vec3d {
    let mut c = Vec3d::zero();
    for &i in nodes {
        c = c.add(&coords[i][1]);
    }
    if nodes.is_empty() {
        c
    } else {
        c.scale(1.0 / nodes.len() as f64)
    }
}

/// Build the full heterogeneous graph for a complex.
pub fn build_graph(c: &Complex, cfg: &GraphConfig) -> Result<HeteroGraph, GraphError> {
    cfg.validate()?;
    if c.antigen.is_empty() {
        return Err(GraphError::EmptyAntigen);
    }
    if c.cdr_len() == 0 {
        return Err(GraphError::EmptyCdr);
    }

    let nh = c.heavy.len();
    let nl = c.light.len();
    let na = c.antigen.len();
    let n_res = nh + nl + na;

    let mut kinds = Vec::with_capacity(n_res + 3 + cfg.n_virtual);
    let mut coords = Vec::with_capacity(kinds.capacity());
    let mut residues: Vec<&Residue> = Vec::with_capacity(n_res);
    for (seg, chain) in [
        (Segment::Heavy, &c.heavy),
        (Segment::Light, &c.light),
        (Segment::Antigen, &c.antigen),
    ] {
        for r in chain {
            kinds.push(NodeKind::Residue(seg));
            coords.push(r.atoms);
            residues.push(r);
        }
    }

    let heavy_nodes: Vec<usize> = (0..nh).collect();
    let light_nodes: Vec<usize> = (nh..nh + nl).collect();
    let antigen_nodes: Vec<usize> = (nh + nl..n_res).collect();
    let antibody_nodes: Vec<usize> = (0..nh + nl).collect();
    let cdr_positions: Vec<usize> = (c.cdr_span.0..c.cdr_span.1).collect();
    let epitope_positions: Vec<usize> = c.epitope.iter().map(|&j| nh + nl + j).collect();

    // global tokens at chain centroids (complex centroid when a chain is empty)
    let all_nodes: Vec<usize> = (0..n_res).collect();
    for (token, members) in [
        (GlobalToken::Boh, &heavy_nodes),
        (GlobalToken::Bol, &light_nodes),
        (GlobalToken::Boa, &antigen_nodes),
    ] {
        let p = if members.is_empty() {
            centroid_of(&all_nodes, &coords)
        } else {
            centroid_of(members, &coords)
        };
        kinds.push(NodeKind::Global(token));
        coords.push([p; 4]);
    }
    let glob_base = n_res;

    // virtual nodes spread along the epitope→CDR axis around their centroid
    let vn_members: Vec<usize> = epitope_positions
        .iter()
        .chain(cdr_positions.iter())
        .copied()
        .collect();
    let vn_centroid = centroid_of(&vn_members, &coords);
    let epi_centroid = centroid_of(&epitope_positions, &coords);
    let cdr_centroid = centroid_of(&cdr_positions, &coords);
    let axis = epi_centroid.sub(&cdr_centroid);
    for k in 0..cfg.n_virtual {
        let t = if cfg.n_virtual > 1 {
            k as f64 / (cfg.n_virtual - 1) as f64 - 0.5
        } else {
            0.0
        };
        let p = vn_centroid.add(&axis.scale(t * 0.5));
        kinds.push(NodeKind::Virtual(k));
        coords.push([p; 4]);
    }
    let vn_base = glob_base + 3;

    let mut edges: [Vec<Edge>; 10] = Default::default();
    let mut push = |t: EdgeType, src: usize, dst: usize| {
        edges[t.index()].push(Edge {
            src: src as u32,
            dst: dst as u32,
        });
    };

    let chains: [&[usize]; 3] = [&heavy_nodes, &light_nodes, &antigen_nodes];
    for chain in chains {
        // radial: all same-chain pairs under the cutoff, both directions
        for (a, &i) in chain.iter().enumerate() {
            for &j in &chain[a + 1..] {
                if coords[i][1].dist(&coords[j][1]) < cfg.radial_cutoff {
                    push(EdgeType::IntraRadial, i, j);
                    push(EdgeType::IntraRadial, j, i);
                }
            }
        }
        // sequential: offsets 1 and 2, both directions
        for (a, &i) in chain.iter().enumerate() {
            for off in [1usize, 2] {
                if a + off < chain.len() {
                    let j = chain[a + off];
                    push(EdgeType::IntraSeq, i, j);
                    push(EdgeType::IntraSeq, j, i);
                }
            }
        }
        // knn: each residue receives from its k nearest same-chain neighbors
        for &i in chain {
            let neigh = knn_indices(
                coords[i][1],
                chain.iter().filter(|&&j| j != i).map(|&j| (j, coords[j][1])),
                cfg.knn_k,
            );
            for j in neigh {
                push(EdgeType::IntraKnn, j, i);
            }
        }
    }

    // inter-chain: antibody ↔ antigen
    for &i in &antibody_nodes {
        for &j in &antigen_nodes {
            if coords[i][1].dist(&coords[j][1]) < cfg.inter_radial_cutoff {
                push(EdgeType::InterRadial, i, j);
                push(EdgeType::InterRadial, j, i);
            }
        }
    }
    for &i in &antibody_nodes {
        let neigh = knn_indices(
            coords[i][1],
            antigen_nodes.iter().map(|&j| (j, coords[j][1])),
            cfg.inter_knn_k,
        );
        for j in neigh {
            push(EdgeType::InterKnn, j, i);
        }
    }
    for &j in &antigen_nodes {
        let neigh = knn_indices(
            coords[j][1],
            antibody_nodes.iter().map(|&i| (i, coords[i][1])),
            cfg.inter_knn_k,
        );
        for i in neigh {
            push(EdgeType::InterKnn, i, j);
        }
    }

    // global-to-chain stars
    for (t, token_idx, members) in [
        (EdgeType::GlobHc, glob_base, &heavy_nodes),
        (EdgeType::GlobLc, glob_base + 1, &light_nodes),
        (EdgeType::GlobAg, glob_base + 2, &antigen_nodes),
    ] {
        for &i in members {
            push(t, token_idx, i);
        }
    }

    // virtual-node wiring: complete bipartite, bidirectional
    for k in 0..cfg.n_virtual {
        let vn = vn_base + k;
        for &e in &epitope_positions {
            push(EdgeType::VnEpitope, vn, e);
            push(EdgeType::VnEpitope, e, vn);
        }
        for &r in &cdr_positions {
            push(EdgeType::VnCdr, vn, r);
            push(EdgeType::VnCdr, r, vn);
        }
    }

    // geometric edge features
    let mut edge_feats: [Option<Vec<f64>>; 10] = Default::default();
    for t in EdgeType::ALL {
        if !t.is_geometric() {
            continue;
        }
        let es = &edges[t.index()];
        let mut flat = Vec::with_capacity(es.len() * EDGE_FEAT_DIM);
        for e in es {
            let f = build_edge_features(
                residues[e.dst as usize],
                residues[e.src as usize],
                t,
                cfg,
            )?;
            flat.extend_from_slice(&f);
        }
        edge_feats[t.index()] = Some(flat);
    }

    let node_feats = build_node_features(c, cfg)?;

    Ok(HeteroGraph {
        kinds,
        coords,
        node_feats,
        edges,
        edge_feats,
        residue_count: n_res,
        cdr_positions,
        antigen_positions: antigen_nodes,
        epitope_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::structure::synth::{generate_synthetic_complex, SynthParams};
    use crate::structure::{mask_cdr_sequence, AminoAcid};

    fn straight_chain_complex(n: usize, spacing: f64) -> Complex {
        let ca: Vec<Vec3d> = (0..n).map(|i| Vec3::new(i as f64 * spacing, 0.0, 0.0)).collect();
        let heavy: Vec<Residue> = ca
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                crate::structure::Residue {
                    aa: AminoAcid::from_index(i % 20),
                    atoms: [
                        p.add(&Vec3::new(-0.5, 1.2, 0.0)),
                        p,
                        p.add(&Vec3::new(1.4, 0.3, 0.0)),
                        p.add(&Vec3::new(1.8, 0.4, 1.1)),
                    ],
                    chain_index: i,
                }
            })
            .collect();
        let antigen = vec![crate::structure::Residue {
            aa: AminoAcid::from_index(5),
            atoms: [
                Vec3::new(-1.0, 6.0, 0.0),
                Vec3::new(0.0, 6.0, 0.0),
                Vec3::new(1.0, 7.0, 0.0),
                Vec3::new(2.0, 7.0, 0.5),
            ],
            chain_index: 0,
        }];
        Complex {
            id: "chain".into(),
            heavy,
            light: vec![],
            antigen,
            cdr_span: (0, n.min(2)),
            epitope: vec![0],
        }
    }

    fn rotate_complex(c: &Complex, r: &Mat3<f64>, t: Vec3d) -> Complex {
        let mut out = c.clone();
        for chain in [&mut out.heavy, &mut out.light, &mut out.antigen] {
            for res in chain.iter_mut() {
                for a in res.atoms.iter_mut() {
                    *a = r.apply(a).add(&t);
                }
            }
        }
        out
    }

    fn test_rotation() -> (Mat3<f64>, Vec3d) {
        // fixed rotation: 50° about a skew axis, plus a translation
        let axis = Vec3::new(0.6, -0.3, 0.9).normalized().unwrap();
        let half = 25.0f64.to_radians();
        let q = crate::geom::Quaternion {
            w: half.cos(),
            x: axis.x * half.sin(),
            y: axis.y * half.sin(),
            z: axis.z * half.sin(),
        };
        (q.to_matrix(), Vec3::new(7.0, -3.0, 11.0))
    }

    #[test]
    fn tiny_chain_edge_counts() {
        let c = straight_chain_complex(3, 3.8);
        let cfg = GraphConfig {
            radial_cutoff: 100.0,
            ..GraphConfig::default()
        };
        let g = build_graph(&c, &cfg).unwrap();
        // heavy chain radial: 3 undirected pairs = 6 directed (antigen has 1 residue, no pairs)
        assert_eq!(g.edges_of(EdgeType::IntraRadial).len(), 6);
        // sequential: undirected offsets {1,1,2} = 6 directed
        assert_eq!(g.edges_of(EdgeType::IntraSeq).len(), 6);
        let mut offsets: Vec<i64> = g
            .edges_of(EdgeType::IntraSeq)
            .iter()
            .filter(|e| e.src < e.dst)
            .map(|e| e.dst as i64 - e.src as i64)
            .collect();
        offsets.sort();
        assert_eq!(offsets, vec![1, 1, 2]);
    }

    #[test]
    fn virtual_node_edge_counts() {
        let p = SynthParams {
            cdr_len: 5,
            planted_contact_fraction: 0.8,
            ..SynthParams::default()
        };
        let (mut c, _) = generate_synthetic_complex(19, &p).unwrap();
        c.epitope.truncate(4);
        assert_eq!(c.epitope.len(), 4);
        let g = build_graph(&c, &GraphConfig::default()).unwrap();
        assert_eq!(g.edges_of(EdgeType::VnEpitope).len(), 3 * 4 * 2);
        assert_eq!(g.edges_of(EdgeType::VnCdr).len(), 3 * 5 * 2);
    }

    #[test]
    fn epitope_to_cdr_two_hop_shortcut() {
        let (c, _) = generate_synthetic_complex(23, &SynthParams::default()).unwrap();
        let g = build_graph(&c, &GraphConfig::default()).unwrap();
        // adjacency over all edge types
        let n = g.node_count();
        let mut adj = vec![Vec::new(); n];
        for t in EdgeType::ALL {
            for e in g.edges_of(t) {
                adj[e.src as usize].push(e.dst as usize);
            }
        }
        for &epi in &g.epitope_positions {
            for &cdr in &g.cdr_positions {
                // BFS limited to two hops
                let mut found = adj[epi].contains(&cdr);
                if !found {
                    'outer: for &mid in &adj[epi] {
                        if adj[mid].contains(&cdr) {
                            found = true;
                            break 'outer;
                        }
                    }
                }
                assert!(found, "no ≤2-hop path {epi} -> {cdr}");
            }
        }
    }

    #[test]
    fn knn_in_degree_is_min_k_chain() {
        let (c, _) = generate_synthetic_complex(31, &SynthParams::default()).unwrap();
        let cfg = GraphConfig::default();
        let g = build_graph(&c, &cfg).unwrap();
        let nh = c.heavy.len();
        let nl = c.light.len();
        let chain_size = |node: usize| {
            if node < nh {
                nh
            } else if node < nh + nl {
                nl
            } else {
                c.antigen.len()
            }
        };
        let mut indeg = vec![0usize; g.residue_count];
        for e in g.edges_of(EdgeType::IntraKnn) {
            indeg[e.dst as usize] += 1;
        }
        for i in 0..g.residue_count {
            assert_eq!(indeg[i], cfg.knn_k.min(chain_size(i) - 1), "node {i}");
        }
    }

    #[test]
    fn masked_cdr_has_zero_identity_block() {
        let (c, _) = generate_synthetic_complex(3, &SynthParams::default()).unwrap();
        let masked = mask_cdr_sequence(&c);
        let feats = build_node_features(&masked, &GraphConfig::default()).unwrap();
        for k in c.cdr_span.0..c.cdr_span.1 {
            assert!(feats[k][FEAT_AA..FEAT_AA + 20].iter().all(|&v| v == 0.0));
        }
        // non-CDR residues keep a one-hot
        assert_eq!(
            feats[0][FEAT_AA..FEAT_AA + 20].iter().sum::<f64>(),
            1.0
        );
    }

    #[test]
    fn frame_block_rows_are_unit_vectors() {
        let (c, _) = generate_synthetic_complex(4, &SynthParams::default()).unwrap();
        let feats = build_node_features(&c, &GraphConfig::default()).unwrap();
        for f in &feats {
            for k in 0..3 {
                let row = &f[FEAT_FRAME + 3 * k..FEAT_FRAME + 3 * (k + 1)];
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn node_features_invariant_under_rigid_motion() {
        let (c, _) = generate_synthetic_complex(8, &SynthParams::default()).unwrap();
        let (r, t) = test_rotation();
        let moved = rotate_complex(&c, &r, t);
        let f1 = build_node_features(&c, &GraphConfig::default()).unwrap();
        let f2 = build_node_features(&moved, &GraphConfig::default()).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn edge_features_invariant_and_distances_match_oracle() {
        let (c, _) = generate_synthetic_complex(13, &SynthParams::default()).unwrap();
        let cfg = GraphConfig::default();
        let (r, t) = test_rotation();
        let moved = rotate_complex(&c, &r, t);
        let a = &c.heavy[2];
        let b = &c.heavy[5];
        let am = &moved.heavy[2];
        let bm = &moved.heavy[5];
        let f1 = build_edge_features(a, b, EdgeType::IntraKnn, &cfg).unwrap();
        let f2 = build_edge_features(am, bm, EdgeType::IntraKnn, &cfg).unwrap();
        for (x, y) in f1.iter().zip(&f2) {
            assert!((x - y).abs() < 1e-6);
        }
        // type one-hot
        assert_eq!(f1[EdgeType::IntraKnn.index()], 1.0);
        // atom-pair distances: check the rbf block peaks against direct distances
        let mut off = 13;
        for ai in 0..4 {
            for bi in 0..4 {
                let d = a.atoms[ai].dist(&b.atoms[bi]);
                let exp = rbf_expand(d, &cfg.edge_rbf).unwrap();
                assert_eq!(&f1[off..off + 8], &exp[..], "pair {ai},{bi}");
                off += 8;
            }
        }
    }

    #[test]
    fn coincident_residue_edge_features() {
        let (c, _) = generate_synthetic_complex(13, &SynthParams::default()).unwrap();
        let a = &c.heavy[2];
        let f = build_edge_features(a, a, EdgeType::IntraSeq, &GraphConfig::default()).unwrap();
        assert!(f[10].abs() < 1e-12 && f[11].abs() < 1e-12 && f[12].abs() < 1e-12);
        assert!((f[141] - 1.0).abs() < 1e-9);
        assert!(f[142].abs() < 1e-9 && f[143].abs() < 1e-9 && f[144].abs() < 1e-9);
    }

    #[test]
    fn topology_invariant_under_rigid_motion() {
        let (c, _) = generate_synthetic_complex(29, &SynthParams::default()).unwrap();
        let (r, t) = test_rotation();
        let moved = rotate_complex(&c, &r, t);
        let g1 = build_graph(&c, &GraphConfig::default()).unwrap();
        let g2 = build_graph(&moved, &GraphConfig::default()).unwrap();
        for t in EdgeType::ALL {
            assert_eq!(g1.edges_of(t), g2.edges_of(t), "{}", t.name());
        }
    }

    #[test]
    fn empty_antigen_or_cdr_is_error() {
        let (c, _) = generate_synthetic_complex(1, &SynthParams::default()).unwrap();
        let mut no_ag = c.clone();
        no_ag.antigen.clear();
        no_ag.epitope.clear();
        assert!(matches!(
            build_graph(&no_ag, &GraphConfig::default()),
            Err(GraphError::EmptyAntigen)
        ));
    }

    #[test]
    fn per_type_edge_sets_match_brute_force_oracle() {
        for seed in [2u64, 47, 99] {
            let (c, _) = generate_synthetic_complex(seed, &SynthParams::default()).unwrap();
            let cfg = GraphConfig::default();
            let g = build_graph(&c, &cfg).unwrap();
            let nh = c.heavy.len();
            let nl = c.light.len();
            let ca: Vec<Vec3d> = c
                .heavy
                .iter()
                .chain(&c.light)
                .chain(&c.antigen)
                .map(|r| r.ca())
                .collect();
            let chain_of = |i: usize| {
                if i < nh {
                    0
                } else if i < nh + nl {
                    1
                } else {
                    2
                }
            };
            // radial oracle
            let mut want: Vec<(u32, u32)> = Vec::new();
            for i in 0..ca.len() {
                for j in 0..ca.len() {
                    if i != j && chain_of(i) == chain_of(j) && ca[i].dist(&ca[j]) < cfg.radial_cutoff
                    {
                        want.push((i as u32, j as u32));
                    }
                }
            }
            let mut got: Vec<(u32, u32)> = g
                .edges_of(EdgeType::IntraRadial)
                .iter()
                .map(|e| (e.src, e.dst))
                .collect();
            want.sort();
            got.sort();
            assert_eq!(got, want, "radial seed {seed}");

            // inter-knn oracle for antibody receivers
            for i in 0..nh + nl {
                let mut ds: Vec<(f64, usize)> = (nh + nl..ca.len())
                    .map(|j| (ca[i].dist(&ca[j]), j))
                    .collect();
                ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let want: Vec<u32> = ds.iter().take(cfg.inter_knn_k).map(|&(_, j)| j as u32).collect();
                let mut got: Vec<u32> = g
                    .edges_of(EdgeType::InterKnn)
                    .iter()
                    .filter(|e| e.dst == i as u32)
                    .map(|e| e.src)
                    .collect();
                got.sort_by_key(|&j| {
                    ds.iter().position(|&(_, dj)| dj == j as usize).unwrap()
                });
                assert_eq!(got, want, "inter-knn receiver {i} seed {seed}");
            }
        }
    }

    #[test]
    fn debug_dump_writes_all_sections() {
        let (c, _) = generate_synthetic_complex(6, &SynthParams::default()).unwrap();
        let g = build_graph(&c, &GraphConfig::default()).unwrap();
        let mut buf = Vec::new();
        g.write_debug_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# nodes"));
        for t in EdgeType::ALL {
            assert!(text.contains(&format!("# edges {}", t.name())));
        }
        assert!(text.contains("# node_feats"));
    }
}
