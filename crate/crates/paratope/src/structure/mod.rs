//! Antibody-antigen complex data model, canonical JSON ingestion, contact
//! labeling, CDR masking, and CDR coordinate initialization.

pub mod pdb;
pub mod synth;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec3d};

/// Default contact cutoff d_c in Å.
pub const CONTACT_CUTOFF: f64 = 8.0;

/// Idealized backbone bond lengths in Å.
pub const BOND_N_CA: f64 = 1.46;
pub const BOND_CA_C: f64 = 1.52;
pub const BOND_C_O: f64 = 1.23;

/// Idealized Cα-Cα spacing used when extrapolating CDR coordinates.
pub const CA_SPACING: f64 = 3.8;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("json: {0}")]
    Json(String),
    #[error("unknown amino acid code {code:?} in field {field}")]
    BadAminoCode { code: String, field: String },
    #[error("cdr_span [{start}, {end}) invalid for heavy chain of length {len}")]
    BadCdrSpan { start: usize, end: usize, len: usize },
    #[error("epitope index {index} out of range for antigen of length {len}")]
    BadEpitopeIndex { index: usize, len: usize },
    #[error("non-finite coordinate in {chain}[{index}]")]
    NonFiniteCoord { chain: &'static str, index: usize },
    #[error("{0}")]
    EmptySet(&'static str),
    #[error("pdb: {0}")]
    Pdb(String),
    #[error("synthetic generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("invalid generator params: {0}")]
    BadParams(&'static str),
    #[error("cdr initialization: {0}")]
    CdrInit(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geom(#[from] geom::GeomError),
}

const AA_LETTERS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
const AA_THREE: [&str; 20] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR",
];

/// Amino acid type: the 20 canonical residues or the masked/unknown marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AminoAcid {
    Canonical(u8), // 0..20, ordered by one-letter code
    Unknown,
}

impl AminoAcid {
    pub fn from_one_letter(c: char) -> Option<Self> {
        if c == 'X' {
            return Some(AminoAcid::Unknown);
        }
        AA_LETTERS
            .iter()
            .position(|&l| l as char == c)
            .map(|i| AminoAcid::Canonical(i as u8))
    }

    pub fn from_three_letter(s: &str) -> Option<Self> {
        if s == "UNK" {
            return Some(AminoAcid::Unknown);
        }
        AA_THREE.iter().position(|&t| t == s).map(|i| AminoAcid::Canonical(i as u8))
    }

    pub fn one_letter(&self) -> char {
        match self {
            AminoAcid::Canonical(i) => AA_LETTERS[*i as usize] as char,
            AminoAcid::Unknown => 'X',
        }
    }

    pub fn three_letter(&self) -> &'static str {
        match self {
            AminoAcid::Canonical(i) => AA_THREE[*i as usize],
            AminoAcid::Unknown => "UNK",
        }
    }

    /// Class index in 0..20, None for the masked marker.
    pub fn index(&self) -> Option<usize> {
        match self {
            AminoAcid::Canonical(i) => Some(*i as usize),
            AminoAcid::Unknown => None,
        }
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 20);
        AminoAcid::Canonical(i as u8)
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.one_letter())
    }
}

/// Backbone atom order within a residue.
pub const ATOM_NAMES: [&str; 4] = ["N", "CA", "C", "O"];

/// One residue: amino acid type plus the four backbone atoms [N, Cα, C, O].
#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub aa: AminoAcid,
    pub atoms: [Vec3d; 4],
    pub chain_index: usize,
}

impl Residue {
    pub fn n(&self) -> Vec3d {
        self.atoms[0]
    }
    pub fn ca(&self) -> Vec3d {
        self.atoms[1]
    }
    pub fn c(&self) -> Vec3d {
        self.atoms[2]
    }
    pub fn o(&self) -> Vec3d {
        self.atoms[3]
    }
}

/// Which segment of the complex a residue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Heavy,
    Light,
    Antigen,
}

/// An antibody-antigen complex with a single annotated CDR span (CDR-H3)
/// and an epitope designation on the antigen.
#[derive(Debug, Clone, PartialEq)]
pub struct Complex {
    pub id: String,
    pub heavy: Vec<Residue>,
    pub light: Vec<Residue>,
    pub antigen: Vec<Residue>,
    /// Contiguous [start, end) index range within the heavy chain.
    pub cdr_span: (usize, usize),
    /// Sorted, deduplicated antigen residue indices designated as epitope.
    pub epitope: Vec<usize>,
}

impl Complex {
    pub fn cdr_len(&self) -> usize {
        self.cdr_span.1 - self.cdr_span.0
    }

    pub fn cdr_residues(&self) -> &[Residue] {
        &self.heavy[self.cdr_span.0..self.cdr_span.1]
    }

    pub fn cdr_ca(&self) -> Vec<Vec3d> {
        self.cdr_residues().iter().map(|r| r.ca()).collect()
    }

    pub fn antigen_ca(&self) -> Vec<Vec3d> {
        self.antigen.iter().map(|r| r.ca()).collect()
    }

    pub fn cdr_sequence(&self) -> Vec<AminoAcid> {
        self.cdr_residues().iter().map(|r| r.aa).collect()
    }

    /// Validate the type invariants; warn (not fail) on unusual bond lengths.
    pub fn validate(&self) -> Result<(), StructureError> {
        let (s, e) = self.cdr_span;
        if s >= e || e > self.heavy.len() {
            return Err(StructureError::BadCdrSpan {
                start: s,
                end: e,
                len: self.heavy.len(),
            });
        }
        for &idx in &self.epitope {
            if idx >= self.antigen.len() {
                return Err(StructureError::BadEpitopeIndex {
                    index: idx,
                    len: self.antigen.len(),
                });
            }
        }
        for (name, chain) in [
            ("heavy", &self.heavy),
            ("light", &self.light),
            ("antigen", &self.antigen),
        ] {
            for (i, r) in chain.iter().enumerate() {
                if r.atoms.iter().any(|a| !a.is_finite()) {
                    return Err(StructureError::NonFiniteCoord { chain: name, index: i });
                }
                let n_ca = r.n().dist(&r.ca());
                let ca_c = r.ca().dist(&r.c());
                if !(0.5..3.0).contains(&n_ca) || !(0.5..3.0).contains(&ca_c) {
                    log::warn!(
                        "{}: unusual backbone bond lengths at {}[{}]: N-CA {:.2} CA-C {:.2}",
                        self.id, name, i, n_ca, ca_c
                    );
                }
            }
        }
        Ok(())
    }
}

/// Binary contact labels over the CDR span (Eq. 2 supervision).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactLabels {
    pub labels: Vec<bool>,
}

impl ContactLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count_contacts(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

/// Label each CDR position as contact iff its Cα lies strictly within `d_c`
/// of any antigen Cα.
pub fn compute_contact_labels(c: &Complex, d_c: f64) -> Result<ContactLabels, StructureError> {
    if c.antigen.is_empty() {
        return Err(StructureError::EmptySet("contact labels need a non-empty antigen"));
    }
    let ag = c.antigen_ca();
    let labels = c
        .cdr_residues()
        .iter()
        .map(|r| {
            let d = geom::min_pairwise_distance(&[r.ca()], &ag).expect("non-empty");
            d < d_c
        })
        .collect();
    Ok(ContactLabels { labels })
}

/// Antigen residues within `d_c` of any CDR Cα — the fallback epitope
/// derivation when no explicit epitope list is provided.
pub fn derive_epitope(c: &Complex, d_c: f64) -> Vec<usize> {
    let cdr = c.cdr_ca();
    c.antigen
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            geom::min_pairwise_distance(&[r.ca()], &cdr)
                .map(|d| d < d_c)
                .unwrap_or(false)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Apply a rigid motion (rotation then translation) to every atom.
pub fn transform_complex(c: &Complex, r: &geom::Mat3<f64>, t: Vec3d) -> Complex {
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

/// Copy of the complex with CDR amino types set to the masked marker;
/// coordinates are untouched. Idempotent.
pub fn mask_cdr_sequence(c: &Complex) -> Complex {
    let mut out = c.clone();
    for r in &mut out.heavy[c.cdr_span.0..c.cdr_span.1] {
        r.aa = AminoAcid::Unknown;
    }
    out
}

/// Build a residue with idealized backbone geometry around a Cα position.
///
/// `dir` is the chain direction at the residue and `perp` a reference vector
/// used to fix the backbone plane; both are orthonormalized internally.
pub(crate) fn build_residue(
    ca: Vec3d,
    dir: Vec3d,
    perp: Vec3d,
    aa: AminoAcid,
    chain_index: usize,
) -> Residue {
    let x = dir.normalized().unwrap_or(geom::Vec3::new(1.0, 0.0, 0.0));
    let mut p = perp.sub(&x.scale(perp.dot(&x)));
    p = match p.normalized() {
        Some(v) => v,
        // reference vector parallel to the chain direction: pick any normal
        None => {
            let alt = if x.x.abs() < 0.9 {
                geom::Vec3::new(1.0, 0.0, 0.0)
            } else {
                geom::Vec3::new(0.0, 1.0, 0.0)
            };
            alt.sub(&x.scale(alt.dot(&x))).normalized().unwrap()
        }
    };
    // N-Cα-C angle ≈ 111°
    let (cos_t, sin_t) = (111.0f64.to_radians().cos(), 111.0f64.to_radians().sin());
    let c = ca.add(&x.scale(BOND_CA_C));
    let n = ca.add(&x.scale(cos_t * BOND_N_CA).add(&p.scale(sin_t * BOND_N_CA)));
    let o = c.add(&x.cross(&p).scale(BOND_C_O));
    Residue {
        aa,
        atoms: [n, ca, c, o],
        chain_index,
    }
}

/// Replace the CDR residues' coordinates with an initialized guess:
/// Cα positions linearly interpolated between the framework anchors flanking
/// the span (idealized 3.8 Å steps when only one anchor exists), with
/// idealized backbone geometry around each Cα. Sequence is untouched.
pub fn initialize_cdr_coords(c: &Complex) -> Result<Complex, StructureError> {
    let (s, e) = c.cdr_span;
    let l = e - s;
    let before = if s > 0 { Some(&c.heavy[s - 1]) } else { None };
    let after = if e < c.heavy.len() { Some(&c.heavy[e]) } else { None };
    let ca_positions: Vec<Vec3d> = match (before, after) {
        (Some(a), Some(b)) => {
            let (pa, pb) = (a.ca(), b.ca());
            if pa.dist(&pb) > 1e-6 {
                (0..l)
                    .map(|k| {
                        let t = (k + 1) as f64 / (l + 1) as f64;
                        pa.add(&pb.sub(&pa).scale(t))
                    })
                    .collect()
            } else {
                // coincident anchors: step along the anchor's backbone direction
                let f = geom::backbone_frame(a.n(), a.ca(), a.c())
                    .map_err(|_| StructureError::CdrInit("degenerate anchor frame"))?;
                let dir = f.rotation.row(0);
                (0..l)
                    .map(|k| pa.add(&dir.scale(CA_SPACING * (k + 1) as f64)))
                    .collect()
            }
        }
        (Some(a), None) => {
            let f = geom::backbone_frame(a.n(), a.ca(), a.c())
                .map_err(|_| StructureError::CdrInit("degenerate anchor frame"))?;
            let dir = f.rotation.row(0);
            (0..l)
                .map(|k| a.ca().add(&dir.scale(CA_SPACING * (k + 1) as f64)))
                .collect()
        }
        (None, Some(b)) => {
            let f = geom::backbone_frame(b.n(), b.ca(), b.c())
                .map_err(|_| StructureError::CdrInit("degenerate anchor frame"))?;
            let dir = f.rotation.row(0).scale(-1.0);
            (0..l)
                .map(|k| b.ca().add(&dir.scale(CA_SPACING * (l - k) as f64)))
                .collect()
        }
        (None, None) => return Err(StructureError::CdrInit("cdr span covers the whole chain")),
    };
    // reference normal from an anchor frame keeps the construction covariant
    let anchor = before.or(after).unwrap();
    let perp = geom::backbone_frame(anchor.n(), anchor.ca(), anchor.c())
        .map(|f| f.rotation.row(2))
        .unwrap_or(geom::Vec3::new(0.0, 0.0, 1.0));
    let mut out = c.clone();
    for (k, &ca) in ca_positions.iter().enumerate() {
        let prev = if k == 0 {
            before.map(|r| r.ca()).unwrap_or(ca_positions[0])
        } else {
            ca_positions[k - 1]
        };
        let next = if k + 1 == l {
            after.map(|r| r.ca()).unwrap_or(ca_positions[l - 1])
        } else {
            ca_positions[k + 1]
        };
        let mut dir = next.sub(&prev);
        if dir.norm() < 1e-9 {
            dir = geom::Vec3::new(1.0, 0.0, 0.0);
        }
        let res = &c.heavy[s + k];
        out.heavy[s + k] = build_residue(ca, dir, perp, res.aa, res.chain_index);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// canonical JSON format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ResidueDoc {
    aa: String,
    #[serde(rename = "N")]
    n: [f64; 3],
    #[serde(rename = "CA")]
    ca: [f64; 3],
    #[serde(rename = "C")]
    c: [f64; 3],
    #[serde(rename = "O")]
    o: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ComplexDoc {
    id: String,
    heavy: Vec<ResidueDoc>,
    light: Vec<ResidueDoc>,
    antigen: Vec<ResidueDoc>,
    cdr_span: [usize; 2],
    epitope: Vec<usize>,
}

fn residue_from_doc(doc: &ResidueDoc, field: &str, index: usize) -> Result<Residue, StructureError> {
    let mut chars = doc.aa.chars();
    let aa = match (chars.next(), chars.next()) {
        (Some(ch), None) => AminoAcid::from_one_letter(ch),
        _ => None,
    }
    .ok_or_else(|| StructureError::BadAminoCode {
        code: doc.aa.clone(),
        field: format!("{field}[{index}].aa"),
    })?;
    Ok(Residue {
        aa,
        atoms: [
            Vec3d::from_array(doc.n),
            Vec3d::from_array(doc.ca),
            Vec3d::from_array(doc.c),
            Vec3d::from_array(doc.o),
        ],
        chain_index: index,
    })
}

fn residue_to_doc(r: &Residue) -> ResidueDoc {
    ResidueDoc {
        aa: r.aa.one_letter().to_string(),
        n: r.n().to_array(),
        ca: r.ca().to_array(),
        c: r.c().to_array(),
        o: r.o().to_array(),
    }
}

/// Parse one canonical-format complex document.
pub fn parse_complex_json(document: &[u8]) -> Result<Complex, StructureError> {
    let doc: ComplexDoc =
        serde_json::from_slice(document).map_err(|e| StructureError::Json(e.to_string()))?;
    let convert = |rs: &[ResidueDoc], field: &str| -> Result<Vec<Residue>, StructureError> {
        rs.iter()
            .enumerate()
            .map(|(i, r)| residue_from_doc(r, field, i))
            .collect()
    };
    let mut epitope = doc.epitope.clone();
    epitope.sort_unstable();
    epitope.dedup();
    let complex = Complex {
        id: doc.id,
        heavy: convert(&doc.heavy, "heavy")?,
        light: convert(&doc.light, "light")?,
        antigen: convert(&doc.antigen, "antigen")?,
        cdr_span: (doc.cdr_span[0], doc.cdr_span[1]),
        epitope,
    };
    complex.validate()?;
    Ok(complex)
}

/// Serialize a complex to the canonical JSON format (one line, full float
/// precision so that parse ∘ serialize is the identity).
pub fn serialize_complex_json(c: &Complex) -> String {
    let doc = ComplexDoc {
        id: c.id.clone(),
        heavy: c.heavy.iter().map(residue_to_doc).collect(),
        light: c.light.iter().map(residue_to_doc).collect(),
        antigen: c.antigen.iter().map(residue_to_doc).collect(),
        cdr_span: [c.cdr_span.0, c.cdr_span.1],
        epitope: c.epitope.clone(),
    };
    serde_json::to_string(&doc).expect("complex serialization")
}

/// Read a newline-delimited dataset file (one complex per line).
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Complex>, StructureError> {
    let mut out = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = parse_complex_json(line.as_bytes())
            .map_err(|e| StructureError::Json(format!("line {}: {}", ln + 1, e)))?;
        out.push(c);
    }
    if out.is_empty() {
        return Err(StructureError::EmptySet("dataset contains no complexes"));
    }
    Ok(out)
}

/// Write a newline-delimited dataset file.
pub fn write_dataset<W: Write>(mut writer: W, complexes: &[Complex]) -> Result<(), StructureError> {
    for c in complexes {
        writeln!(writer, "{}", serialize_complex_json(c))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    pub(crate) fn tiny_complex() -> Complex {
        let res = |x: f64, y: f64, z: f64, aa: char, idx: usize| Residue {
            aa: AminoAcid::from_one_letter(aa).unwrap(),
            atoms: [
                Vec3::new(x - 1.0, y, z),
                Vec3::new(x, y, z),
                Vec3::new(x + 1.0, y + 1.0, z),
                Vec3::new(x + 2.0, y + 1.0, z + 0.5),
            ],
            chain_index: idx,
        };
        Complex {
            id: "tiny".into(),
            heavy: vec![res(0.0, 0.0, 0.0, 'A', 0), res(4.0, 0.0, 0.0, 'G', 1), res(8.0, 0.0, 0.0, 'W', 2)],
            light: vec![],
            antigen: vec![res(4.0, 6.0, 0.0, 'K', 0)],
            cdr_span: (1, 2),
            epitope: vec![0],
        }
    }

    #[test]
    fn minimal_document_parses() {
        let doc = br#"{"id":"m","heavy":[{"aa":"A","N":[-1,0,0],"CA":[0,0,0],"C":[1,1,0],"O":[2,1,0]}],
            "light":[],"antigen":[{"aa":"G","N":[5,0,0],"CA":[6,0,0],"C":[7,1,0],"O":[8,1,0]}],
            "cdr_span":[0,1],"epitope":[0]}"#;
        let c = parse_complex_json(doc).unwrap();
        assert_eq!(c.cdr_len(), 1);
        assert_eq!(c.heavy[0].aa.one_letter(), 'A');
    }

    #[test]
    fn out_of_range_span_rejected() {
        let doc = br#"{"id":"m","heavy":[{"aa":"A","N":[-1,0,0],"CA":[0,0,0],"C":[1,1,0],"O":[2,1,0]}],
            "light":[],"antigen":[],"cdr_span":[0,2],"epitope":[]}"#;
        assert!(matches!(
            parse_complex_json(doc),
            Err(StructureError::BadCdrSpan { .. })
        ));
    }

    #[test]
    fn bad_amino_code_names_field() {
        let doc = br#"{"id":"m","heavy":[{"aa":"B","N":[-1,0,0],"CA":[0,0,0],"C":[1,1,0],"O":[2,1,0]}],
            "light":[],"antigen":[],"cdr_span":[0,1],"epitope":[]}"#;
        match parse_complex_json(doc) {
            Err(StructureError::BadAminoCode { field, .. }) => assert_eq!(field, "heavy[0].aa"),
            other => panic!("expected BadAminoCode, got {other:?}"),
        }
    }


    #[test]
    fn json_round_trip_identity() {
        let c = synth::generate_synthetic_complex(11, &synth::SynthParams::default())
            .unwrap()
            .0;
        let s1 = serialize_complex_json(&c);
        let c2 = parse_complex_json(s1.as_bytes()).unwrap();
        assert_eq!(c, c2);
        let s2 = serialize_complex_json(&c2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn contact_labels_strict_inequality() {
        let mut c = tiny_complex();
        // sole antigen Cα at y = 7.99 from the CDR residue at y = 0
        c.antigen[0].atoms[1] = Vec3::new(4.0, 7.99, 0.0);
        let l = compute_contact_labels(&c, 8.0).unwrap();
        assert!(l.labels[0]);
        c.antigen[0].atoms[1] = Vec3::new(4.0, 8.0, 0.0);
        let l = compute_contact_labels(&c, 8.0).unwrap();
        assert!(!l.labels[0]);
    }

    #[test]
    fn contact_labels_all_far() {
        let mut c = tiny_complex();
        c.antigen[0].atoms[1] = Vec3::new(4.0, 90.0, 0.0);
        let l = compute_contact_labels(&c, 8.0).unwrap();
        assert!(l.labels.iter().all(|&b| !b));
    }

    #[test]
    fn contact_labels_match_exhaustive_oracle() {
        let (c, _) = synth::generate_synthetic_complex(
            3,
            &synth::SynthParams {
                cdr_len: 12,
                antigen_len: 40,
                planted_contact_fraction: 0.4,
                noise: 0.2,
            },
        )
        .unwrap();
        let got = compute_contact_labels(&c, 8.0).unwrap();
        let ag = c.antigen_ca();
        for (k, r) in c.cdr_residues().iter().enumerate() {
            let mut best = f64::INFINITY;
            for q in &ag {
                best = best.min(r.ca().dist(q));
            }
            assert_eq!(got.labels[k], best < 8.0, "position {k}");
        }
    }

    #[test]
    fn contact_labels_empty_antigen_is_error() {
        let mut c = tiny_complex();
        c.antigen.clear();
        c.epitope.clear();
        assert!(matches!(
            compute_contact_labels(&c, 8.0),
            Err(StructureError::EmptySet(_))
        ));
    }

    #[test]
    fn masking_only_touches_cdr_and_is_idempotent() {
        let c = tiny_complex();
        let m = mask_cdr_sequence(&c);
        assert_eq!(m.heavy[1].aa, AminoAcid::Unknown);
        assert_eq!(m.heavy[0], c.heavy[0]);
        assert_eq!(m.heavy[2], c.heavy[2]);
        assert_eq!(m.heavy[1].atoms, c.heavy[1].atoms);
        assert_eq!(mask_cdr_sequence(&m), m);
        let count = m.heavy.iter().filter(|r| r.aa == AminoAcid::Unknown).count();
        assert_eq!(count, c.cdr_len());
    }

    #[test]
    fn cdr_initialization_interpolates_between_anchors() {
        let (c, _) = synth::generate_synthetic_complex(5, &synth::SynthParams::default()).unwrap();
        let init = initialize_cdr_coords(&c).unwrap();
        let (s, e) = c.cdr_span;
        let a = c.heavy[s - 1].ca();
        let b = c.heavy[e].ca();
        for (k, r) in init.cdr_residues().iter().enumerate() {
            let t = (k + 1) as f64 / (c.cdr_len() + 1) as f64;
            let want = a.add(&b.sub(&a).scale(t));
            assert!(r.ca().dist(&want) < 1e-9);
            // idealized bonds
            assert!((r.n().dist(&r.ca()) - BOND_N_CA).abs() < 1e-9);
            assert!((r.ca().dist(&r.c()) - BOND_CA_C).abs() < 1e-9);
            assert!((r.c().dist(&r.o()) - BOND_C_O).abs() < 1e-9);
        }
        // sequence untouched
        assert_eq!(init.cdr_sequence(), c.cdr_sequence());
    }

    #[test]
    fn parse_fuzz_never_panics() {
        use rand::Rng;
        use rand::SeedableRng;
        let base = serialize_complex_json(&tiny_complex());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let mut bytes = base.clone().into_bytes();
            let edits = rng.random_range(1..4);
            for _ in 0..edits {
                let i = rng.random_range(0..bytes.len());
                match rng.random_range(0..3) {
                    0 => {
                        bytes[i] = rng.random_range(32..127) as u8;
                    }
                    1 => {
                        bytes.remove(i);
                    }
                    _ => {
                        bytes.insert(i, rng.random_range(32..127) as u8);
                    }
                }
            }
            match parse_complex_json(&bytes) {
                Ok(c) => c.validate().expect("parsed complex must satisfy invariants"),
                Err(_) => {} // typed error is the other acceptable outcome
            }
        }
    }
}
