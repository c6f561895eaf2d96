//! The full model: parameter registration, the forward pipeline
//! (graph → encoder → cross-attention → three-stage decoder → logits),
//! greedy decoding, and the prediction record format.

pub mod config;
pub mod encoder;
pub mod head;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AttentionConfig, DecoderConfig, EncoderConfig, ModelConfig};

use crate::diff::mlp::register_mlp;
use crate::diff::params::{Binding, Init, ParamStore};
use crate::diff::{DiffError, Tape, Var};
use crate::geom::Vec3d;
use crate::graph::{build_graph, EdgeType, GraphError, HeteroGraph, EDGE_FEAT_DIM, NODE_FEAT_DIM};
use crate::scalar::Scalar;
use crate::structure::{
    initialize_cdr_coords, mask_cdr_sequence, AminoAcid, Complex, StructureError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
}

pub type ModelResult<V> = Result<V, ModelError>;

/// A complex prepared for the model: masked sequence, initialized CDR
/// geometry, and the prebuilt graph.
#[derive(Debug, Clone)]
pub struct PreparedComplex {
    pub input: Complex,
    pub graph: HeteroGraph,
}

/// Tape handles produced by one forward pass.
pub struct ForwardVars {
    pub h_cdr: Var,
    pub h_ag: Var,
    pub x_cdr: Var,
    pub o_full: Var,
    pub o_attn: Var,
    pub fingerprints: Var,
    pub contact: Var,
    pub enriched: Var,
    pub z: Var,
    pub logits: Var,
    pub d_min: Var,
    /// Raw 108-d features of the CDR rows (constant; reconstruction target).
    pub raw_cdr_feats: Var,
}

/// One forward evaluation: the recording tape, bound parameters, and the
/// variables needed by losses and decoding.
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    pub binding: Binding,
    pub vars: ForwardVars,
    pub cdr_len: usize,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn logits_values(&self) -> Vec<T> {
        self.tape.value(self.vars.logits)
    }

    pub fn contact_values(&self) -> Vec<T> {
        self.tape.value(self.vars.contact)
    }

    pub fn fingerprint_values(&self) -> Vec<T> {
        self.tape.value(self.vars.fingerprints)
    }

    pub fn cdr_ca_values(&self) -> Vec<Vec3d> {
        let v = self.tape.value(self.vars.x_cdr);
        v.chunks(3)
            .map(|c| Vec3d::new(c[0].to_f64_c(), c[1].to_f64_c(), c[2].to_f64_c()))
            .collect()
    }

    /// Per-position argmax with ties broken by the lowest amino index.
    pub fn decode(&self) -> Vec<AminoAcid> {
        decode_logits(&self.logits_values(), self.cdr_len)
    }
}

pub fn decode_logits<T: Scalar>(logits: &[T], len: usize) -> Vec<AminoAcid> {
    (0..len)
        .map(|i| {
            let row = &logits[i * 20..(i + 1) * 20];
            let mut best = 0usize;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            AminoAcid::from_index(best)
        })
        .collect()
}

/// Plain-value outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub contact_probs: Vec<f64>,
    pub fingerprints: Vec<f64>,
    pub attention: Vec<f64>,
    pub enriched: Vec<f64>,
    pub cdr_ca: Vec<Vec3d>,
    pub sequence: Vec<AminoAcid>,
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Register and initialize all parameters. Deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        config.validate().map_err(ModelError::BadConfig).expect("valid config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let enc = &config.encoder;
        let dropout = config.dropout;

        register_mlp(&mut p, "feat.geom", &encoder::geom_spec(enc, dropout), &mut rng);
        register_mlp(&mut p, "feat.chem", &encoder::chem_spec(enc, dropout), &mut rng);
        register_mlp(&mut p, "feat.fuse", &encoder::fuse_spec(enc, dropout), &mut rng);
        p.register("feat.epi", 1, enc.embed_dim, Init::UniformFanIn { fan_in: enc.embed_dim }, &mut rng);
        register_mlp(&mut p, "feat.lift", &encoder::lift_spec(enc, dropout), &mut rng);

        // learnable raw features for global tokens and virtual nodes
        for name in ["node.boh", "node.bol", "node.boa"] {
            p.register(name, 1, NODE_FEAT_DIM, Init::UniformFanIn { fan_in: NODE_FEAT_DIM }, &mut rng);
        }
        for k in 0..config.graph.n_virtual {
            p.register(&format!("node.vn{k}"), 1, NODE_FEAT_DIM, Init::UniformFanIn { fan_in: NODE_FEAT_DIM }, &mut rng);
        }
        // learnable edge features for non-geometric edge types
        for t in EdgeType::ALL {
            if !t.is_geometric() {
                p.register(
                    &format!("edge.{}", t.name()),
                    1,
                    EDGE_FEAT_DIM,
                    Init::UniformFanIn { fan_in: EDGE_FEAT_DIM },
                    &mut rng,
                );
            }
        }

        for layer in 0..enc.n_layers {
            for t in EdgeType::ALL {
                register_mlp(
                    &mut p,
                    &format!("enc.l{layer}.msg.{}", t.name()),
                    &encoder::msg_spec(enc, dropout),
                    &mut rng,
                );
                p.register(
                    &format!("enc.l{layer}.wt.{}", t.name()),
                    enc.hidden_dim,
                    enc.message_dim,
                    Init::UniformFanIn { fan_in: enc.message_dim },
                    &mut rng,
                );
                register_mlp(
                    &mut p,
                    &format!("enc.l{layer}.coord.{}", t.name()),
                    &encoder::coord_spec(enc, dropout),
                    &mut rng,
                );
            }
            register_mlp(
                &mut p,
                &format!("enc.l{layer}.node"),
                &encoder::node_spec(enc, dropout),
                &mut rng,
            );
        }

        let d = enc.hidden_dim;
        for name in ["attn.wq", "attn.wk", "attn.wv"] {
            p.register(name, d, d, Init::UniformFanIn { fan_in: d }, &mut rng);
        }

        register_mlp(&mut p, "fp", &head::fp_spec(&config.attention, &config.decoder, d, dropout), &mut rng);
        let nbins = config.decoder.contact_rbf.count();
        p.register("ct.proj.w0", d, nbins, Init::UniformFanIn { fan_in: nbins }, &mut rng);
        p.register("ct.proj.b0", 1, d, Init::Zeros, &mut rng);
        register_mlp(&mut p, "ct.mlp", &head::contact_spec(&config.decoder, d, dropout), &mut rng);
        // gate starts at g = 0.5
        p.register("gate.w0", 1, d + 1, Init::Zeros, &mut rng);
        p.register("gate.b0", 1, 1, Init::Zeros, &mut rng);
        register_mlp(&mut p, "inj", &head::inject_spec(d, dropout), &mut rng);
        register_mlp(&mut p, "seq", &head::seq_spec(&config.attention, d, dropout), &mut rng);
        p.register("aux.w0", NODE_FEAT_DIM, d, Init::UniformFanIn { fan_in: d }, &mut rng);
        p.register("aux.b0", 1, NODE_FEAT_DIM, Init::Zeros, &mut rng);

        Self { config, params: p }
    }

    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Mask the CDR sequence, initialize CDR geometry, and build the graph.
    /// The result can be cached and reused across epochs.
    pub fn prepare(&self, complex: &Complex) -> ModelResult<PreparedComplex> {
        let masked = mask_cdr_sequence(complex);
        let input = initialize_cdr_coords(&masked)?;
        let graph = build_graph(&input, &self.config.graph)?;
        Ok(PreparedComplex { input, graph })
    }

    /// Run the full pipeline on a prepared complex.
    pub fn forward_prepared(
        &self,
        prep: &PreparedComplex,
        train: bool,
        dropout_seed: u64,
    ) -> ModelResult<ForwardPass<T>> {
        let tape = Tape::new(dropout_seed);
        let binding = self.params.bind(&tape)?;
        let vars = self.forward_on_tape(&tape, &binding, prep, train)?;
        let cdr_len = prep.graph.cdr_positions.len();
        Ok(ForwardPass {
            tape,
            binding,
            vars,
            cdr_len,
        })
    }

    /// Run the pipeline on an existing tape so several complexes can share
    /// one recording (required by the batch-scope losses).
    pub fn forward_on_tape(
        &self,
        tape: &Tape<T>,
        binding: &Binding,
        prep: &PreparedComplex,
        train: bool,
    ) -> ModelResult<ForwardVars> {
        let cfg = &self.config;
        let graph = &prep.graph;
        let n = graph.node_count();
        let n_res = graph.residue_count;

        // raw node features: residue rows are constants, special rows learnable
        let mut flat = Vec::with_capacity(n_res * NODE_FEAT_DIM);
        for f in &graph.node_feats {
            flat.extend(f.iter().map(|&v| T::from_f64_c(v)));
        }
        let residue_feats = tape.constant(n_res, NODE_FEAT_DIM, flat)?;
        let mut parts = vec![residue_feats];
        for name in ["node.boh", "node.bol", "node.boa"] {
            parts.push(binding.var(name)?);
        }
        for k in 0..cfg.graph.n_virtual {
            parts.push(binding.var(&format!("node.vn{k}"))?);
        }
        let feats = tape.concat(&parts, 0)?;

        let mut epi_mask = vec![false; n];
        for &i in &graph.epitope_positions {
            epi_mask[i] = true;
        }
        let h0 = encoder::encode_features(
            tape,
            binding,
            &cfg.encoder,
            cfg.dropout,
            feats,
            &epi_mask,
            train,
        )?;
        let lifted = crate::diff::mlp::mlp_apply(
            tape,
            &encoder::lift_spec(&cfg.encoder, cfg.dropout),
            binding,
            "feat.lift",
            h0,
            train,
        )?;

        // Cα coordinates for every node
        let coords: Vec<T> = graph
            .coords
            .iter()
            .flat_map(|a| a[1].to_array())
            .map(T::from_f64_c)
            .collect();
        let x0 = tape.constant(n, 3, coords)?;

        // per-type edge features: geometric constants or broadcast learnables
        let mut edge_feat_vars = [tape.zeros(0, EDGE_FEAT_DIM); 10];
        for t in EdgeType::ALL {
            let count = graph.edges_of(t).len();
            if count == 0 {
                continue;
            }
            edge_feat_vars[t.index()] = match graph.edge_feats_of(t) {
                Some(flat) => {
                    let data: Vec<T> = flat.iter().map(|&v| T::from_f64_c(v)).collect();
                    tape.constant(count, EDGE_FEAT_DIM, data)?
                }
                None => {
                    let learned = binding.var(&format!("edge.{}", t.name()))?;
                    let ones = tape.ones(count, 1);
                    tape.matmul(ones, learned)?
                }
            };
        }

        let enc_out = encoder::encoder_layers(
            tape,
            binding,
            &cfg.encoder,
            cfg.dropout,
            graph,
            &edge_feat_vars,
            lifted,
            x0,
            train,
        )?;

        let h_cdr = tape.gather_rows(enc_out.h, &graph.cdr_positions)?;
        let h_ag = tape.gather_rows(enc_out.h, &graph.antigen_positions)?;
        let x_cdr = tape.gather_rows(enc_out.x, &graph.cdr_positions)?;
        let x_ag = tape.gather_rows(enc_out.x, &graph.antigen_positions)?;

        let attn = head::cross_attention(tape, binding, &cfg.attention, h_cdr, h_ag, x_cdr, x_ag)?;
        let fingerprints = head::fingerprint(
            tape,
            binding,
            &cfg.attention,
            &cfg.decoder,
            cfg.encoder.hidden_dim,
            cfg.dropout,
            attn.o_full,
            train,
        )?;

        // neighbor sets from the updated coordinates
        let x_cdr_pts: Vec<Vec3d> = tape
            .value(x_cdr)
            .chunks(3)
            .map(|c| Vec3d::new(c[0].to_f64_c(), c[1].to_f64_c(), c[2].to_f64_c()))
            .collect();
        let x_ag_pts: Vec<Vec3d> = tape
            .value(x_ag)
            .chunks(3)
            .map(|c| Vec3d::new(c[0].to_f64_c(), c[1].to_f64_c(), c[2].to_f64_c()))
            .collect();
        let knn = head::antigen_knn(&x_cdr_pts, &x_ag_pts, cfg.decoder.knn_k);

        let context = head::contact_context_aggregate(
            tape,
            binding,
            &cfg.decoder,
            h_ag,
            x_cdr,
            x_ag,
            &knn,
        )?;
        let d_min = head::min_antigen_distance(tape, x_cdr, x_ag, &knn)?;
        let contact = head::predict_contacts(
            tape,
            binding,
            &cfg.decoder,
            cfg.encoder.hidden_dim,
            cfg.dropout,
            h_cdr,
            context,
            d_min,
            fingerprints,
            train,
        )?;
        let (enriched, z) = head::inject_complementarity(
            tape,
            binding,
            cfg.encoder.hidden_dim,
            cfg.dropout,
            h_cdr,
            h_ag,
            contact,
            attn.o_attn,
            &knn,
            train,
        )?;
        let logits = head::sequence_logits(
            tape,
            binding,
            &cfg.attention,
            &cfg.decoder,
            cfg.encoder.hidden_dim,
            cfg.dropout,
            z,
            train,
        )?;
        tape.ensure_finite(logits, "sequence logits")?;
        tape.ensure_finite(contact, "contact probabilities")?;

        let cdr_rows: Vec<usize> = graph.cdr_positions.clone();
        let raw_cdr_feats = tape.gather_rows(feats, &cdr_rows)?;

        Ok(ForwardVars {
            h_cdr,
            h_ag,
            x_cdr,
            o_full: attn.o_full,
            o_attn: attn.o_attn,
            fingerprints,
            contact,
            enriched,
            z,
            logits,
            d_min,
            raw_cdr_feats,
        })
    }

    /// Convenience: prepare + forward in one call.
    pub fn forward(
        &self,
        complex: &Complex,
        train: bool,
        dropout_seed: u64,
    ) -> ModelResult<ForwardPass<T>> {
        let prep = self.prepare(complex)?;
        self.forward_prepared(&prep, train, dropout_seed)
    }

    /// Full plain-value output for a prepared complex (eval mode).
    pub fn run(&self, prep: &PreparedComplex) -> ModelResult<ForwardOutput> {
        let pass = self.forward_prepared(prep, false, 0)?;
        Ok(ForwardOutput {
            logits: crate::scalar::widen_slice(&pass.logits_values()),
            contact_probs: crate::scalar::widen_slice(&pass.contact_values()),
            fingerprints: crate::scalar::widen_slice(&pass.fingerprint_values()),
            attention: crate::scalar::widen_slice(&pass.tape.value(pass.vars.o_full)),
            enriched: crate::scalar::widen_slice(&pass.tape.value(pass.vars.z)),
            cdr_ca: pass.cdr_ca_values(),
            sequence: pass.decode(),
        })
    }

    /// Assemble the designed complex: input structure with predicted CDR
    /// sequence and backbone atoms shifted rigidly by the Cα displacement.
    pub fn predicted_complex(
        &self,
        prep: &PreparedComplex,
        output: &ForwardOutput,
    ) -> Complex {
        let mut out = prep.input.clone();
        let (s, _) = out.cdr_span;
        for (k, (aa, new_ca)) in output.sequence.iter().zip(&output.cdr_ca).enumerate() {
            let res = &mut out.heavy[s + k];
            let shift = new_ca.sub(&res.ca());
            for a in res.atoms.iter_mut() {
                *a = a.add(&shift);
            }
            res.aa = *aa;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// prediction records
// ---------------------------------------------------------------------------

/// One designed complex, as written by `predict`: the designed sequence,
/// per-position contact probabilities and logits, and the CDR Cα trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub sequence: String,
    pub contact_probs: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
    pub cdr_ca: Vec<[f64; 3]>,
}

impl PredictionRecord {
    pub fn from_output(id: &str, out: &ForwardOutput) -> Self {
        Self {
            id: id.to_string(),
            sequence: out.sequence.iter().map(|a| a.one_letter()).collect(),
            contact_probs: out.contact_probs.clone(),
            logits: out.logits.chunks(20).map(|c| c.to_vec()).collect(),
            cdr_ca: out.cdr_ca.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    /// Schema validation: aligned lengths, probabilities strictly in (0, 1),
    /// finite logits and coordinates.
    pub fn validate(&self) -> Result<(), String> {
        let l = self.sequence.chars().count();
        if self.contact_probs.len() != l || self.logits.len() != l || self.cdr_ca.len() != l {
            return Err(format!("{}: field lengths disagree", self.id));
        }
        for &p in &self.contact_probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(format!("{}: contact probability {p} outside (0, 1)", self.id));
            }
        }
        for row in &self.logits {
            if row.len() != 20 || row.iter().any(|v| !v.is_finite()) {
                return Err(format!("{}: bad logits row", self.id));
            }
        }
        if self.cdr_ca.iter().flatten().any(|v| !v.is_finite()) {
            return Err(format!("{}: non-finite coordinates", self.id));
        }
        Ok(())
    }
}

pub fn write_predictions<W: std::io::Write>(
    mut w: W,
    records: &[PredictionRecord],
) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("prediction serialization"))?;
    }
    Ok(())
}

pub fn read_predictions<R: std::io::BufRead>(r: R) -> Result<Vec<PredictionRecord>, String> {
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", ln + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", ln + 1))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
