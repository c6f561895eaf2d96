//! Sequence, structure, and interface quality metrics, plus dataset-level
//! aggregation and report output.
//!
//! Contact sets follow the 8 Å Cα-Cα rule restricted to (CDR, antigen)
//! pairs. CDR RMSD is frame-fixed by default: predictions share the
//! reference's framework and antigen coordinates, so no superposition is
//! needed (a flag exposes the superposed variant).=Missing values (no native
//! contacts, or CAAR with no contact positions) are excluded from aggregates.

use std::collections::BTreeSet;
use std::io::Write;

use thiserror::Error;

use crate::geom::{superpose_rmsd, GeomError, Vec3d};
use crate::model::PredictionRecord;
use crate::structure::{compute_contact_labels, AminoAcid, Complex, CONTACT_CUTOFF};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("complexes are not comparable: {0}")]
    Incomparable(String),
    #[error("prediction/reference ids do not align: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Structure(#[from] crate::structure::StructureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fraction of exactly recovered amino acids.
pub fn aar(pred: &[AminoAcid], truth: &[AminoAcid]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len().max(1) as f64)
}

/// AAR restricted to native contact positions; None when there are none.
pub fn caar(
    pred: &[AminoAcid],
    truth: &[AminoAcid],
    native_contacts: &[bool],
) -> Result<Option<f64>, MetricsError> {
    if pred.len() != truth.len() || pred.len() != native_contacts.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((a, b), &c) in pred.iter().zip(truth).zip(native_contacts) {
        if c {
            total += 1;
            if a == b {
                hits += 1;
            }
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// exp(mean negative log-likelihood of the true amino acids).
pub fn perplexity(logits: &[f64], truth: &[AminoAcid]) -> Result<f64, MetricsError> {
    if logits.len() != truth.len() * 20 {
        return Err(MetricsError::LengthMismatch(logits.len(), truth.len() * 20));
    }
    let mut nll = 0.0;
    let mut count = 0usize;
    for (i, aa) in truth.iter().enumerate() {
        let Some(y) = aa.index() else { continue };
        let row = &logits[i * 20..(i + 1) * 20];
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        nll += -(row[y] - mx - z.ln());
        count += 1;
    }
    Ok((nll / count.max(1) as f64).exp())
}

/// Cα RMSD over the CDR span. Frame-fixed unless `superpose` is set.
pub fn cdr_rmsd(pred: &Complex, reference: &Complex, superpose: bool) -> Result<f64, MetricsError> {
    if pred.cdr_len() != reference.cdr_len() {
        return Err(MetricsError::Incomparable(format!(
            "CDR lengths {} vs {}",
            pred.cdr_len(),
            reference.cdr_len()
        )));
    }
    Ok(superpose_rmsd(&pred.cdr_ca(), &reference.cdr_ca(), superpose)?)
}

/// (CDR position, antigen index) Cα contact pairs under the cutoff.
fn contact_pairs(c: &Complex, d_c: f64) -> BTreeSet<(usize, usize)> {
    let ag = c.antigen_ca();
    let mut out = BTreeSet::new();
    for (k, r) in c.cdr_residues().iter().enumerate() {
        for (j, q) in ag.iter().enumerate() {
            if r.ca().dist(q) < d_c {
                out.insert((k, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceMetrics {
    pub fnat: Option<f64>,
    pub irmsd: Option<f64>,
    pub dockq: Option<f64>,
    pub epitope_f1: Option<f64>,
}

/// Interface quality: fraction of native contacts, interface RMSD after
/// optimal superposition, the DockQ composite, and epitope F1 between
/// predicted and native contacted-antigen sets. All four are missing when
/// the reference has no native contacts.
pub fn interface_metrics(
    pred: &Complex,
    reference: &Complex,
    d_c: f64,
) -> Result<InterfaceMetrics, MetricsError> {
    if pred.cdr_len() != reference.cdr_len() || pred.antigen.len() != reference.antigen.len() {
        return Err(MetricsError::Incomparable(
            "chain lengths differ between prediction and reference".into(),
        ));
    }
    let native = contact_pairs(reference, d_c);
    if native.is_empty() {
        return Ok(InterfaceMetrics {
            fnat: None,
            irmsd: None,
            dockq: None,
            epitope_f1: None,
        });
    }
    let predicted = contact_pairs(pred, d_c);
    let recovered = native.intersection(&predicted).count();
    let fnat = recovered as f64 / native.len() as f64;

    // native interface residues: any CDR or antigen residue in ≥ 1 contact
    let mut iface_cdr = BTreeSet::new();
    let mut iface_ag = BTreeSet::new();
    for &(k, j) in &native {
        iface_cdr.insert(k);
        iface_ag.insert(j);
    }
    let collect = |c: &Complex| -> Vec<Vec3d> {
        iface_cdr
            .iter()
            .map(|&k| c.cdr_residues()[k].ca())
            .chain(iface_ag.iter().map(|&j| c.antigen[j].ca()))
            .collect()
    };
    let p_iface = collect(pred);
    let r_iface = collect(reference);
    let irmsd = superpose_rmsd(&p_iface, &r_iface, p_iface.len() >= 3)?;

    let lrmsd = superpose_rmsd(&pred.cdr_ca(), &reference.cdr_ca(), false)?;
    let dockq = (fnat
        + 1.0 / (1.0 + (irmsd / 1.5).powi(2))
        + 1.0 / (1.0 + (lrmsd / 8.5).powi(2)))
        / 3.0;

    let native_ag: BTreeSet<usize> = native.iter().map(|&(_, j)| j).collect();
    let pred_ag: BTreeSet<usize> = predicted.iter().map(|&(_, j)| j).collect();
    let tp = native_ag.intersection(&pred_ag).count() as f64;
    let precision = if pred_ag.is_empty() { 0.0 } else { tp / pred_ag.len() as f64 };
    let recall = tp / native_ag.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    Ok(InterfaceMetrics {
        fnat: Some(fnat),
        irmsd: Some(irmsd),
        dockq: Some(dockq),
        epitope_f1: Some(f1),
    })
}

/// Area under the ROC curve by the rank statistic (average ranks on ties).
/// None when only one class is present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&b| b).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&b, _)| b)
        .map(|(_, &r)| r)
        .sum();
    let u = pos_rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// All metric values for one complex. Missing values stay empty in reports.
#[derive(Debug, Clone)]
pub struct ComplexEval {
    pub id: String,
    pub aar: f64,
    pub caar: Option<f64>,
    pub ppl: f64,
    pub rmsd: f64,
    pub fnat: Option<f64>,
    pub irmsd: Option<f64>,
    pub dockq: Option<f64>,
    pub epitope_f1: Option<f64>,
}

pub const METRIC_NAMES: [&str; 8] = [
    "aar", "caar", "ppl", "rmsd", "fnat", "irmsd", "dockq", "epitope_f1",
];

impl ComplexEval {
    fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "aar" => Some(self.aar),
            "caar" => self.caar,
            "ppl" => Some(self.ppl),
            "rmsd" => Some(self.rmsd),
            "fnat" => self.fnat,
            "irmsd" => self.irmsd,
            "dockq" => self.dockq,
            "epitope_f1" => self.epitope_f1,
            _ => None,
        }
    }
}

/// Per-complex rows plus per-metric mean and (population) standard deviation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<ComplexEval>,
}

impl EvalReport {
    /// (metric, mean, std, count) over available values.
    pub fn aggregate(&self) -> Vec<(&'static str, Option<f64>, Option<f64>, usize)> {
        METRIC_NAMES
            .iter()
            .map(|&m| {
                let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.get(m)).collect();
                if vals.is_empty() {
                    return (m, None, None, 0);
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / vals.len() as f64;
                (m, Some(mean), Some(var.sqrt()), vals.len())
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str =
        "id,aar,caar,ppl,rmsd,fnat,irmsd,dockq,epitope_f1";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MetricsError> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.6},{},{:.6},{:.6},{},{},{},{}",
                r.id,
                r.aar,
                fmt(r.caar),
                r.ppl,
                r.rmsd,
                fmt(r.fnat),
                fmt(r.irmsd),
                fmt(r.dockq),
                fmt(r.epitope_f1)
            )?;
        }
        for (kind, pick) in [("mean", 0usize), ("std", 1)] {
            let agg = self.aggregate();
            let cell = |m: usize| -> String {
                let (_, mean, std, _) = agg[m];
                let v = if pick == 0 { mean } else { std };
                fmt(v)
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                kind,
                cell(0),
                cell(1),
                cell(2),
                cell(3),
                cell(4),
                cell(5),
                cell(6),
                cell(7)
            )?;
        }
        Ok(())
    }

    /// Human-readable table.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}\n",
            "id", "aar", "caar", "ppl", "rmsd", "fnat", "irmsd", "dockq", "epitope_f1"
        ));
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:7.3}")).unwrap_or_else(|| format!("{:>7}", "-"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:7.3} {} {:7.3} {:7.3} {} {} {} {:>10}\n",
                r.id,
                r.aar,
                fmt(r.caar),
                r.ppl,
                r.rmsd,
                fmt(r.fnat),
                fmt(r.irmsd),
                fmt(r.dockq),
                fmt(r.epitope_f1).trim_start()
            ));
        }
        for (m, mean, std, n) in self.aggregate() {
            if let (Some(mean), Some(std)) = (mean, std) {
                out.push_str(&format!("{m:<12} mean {mean:.4} ± {std:.4}  (n = {n})\n"));
            } else {
                out.push_str(&format!("{m:<12} no values\n"));
            }
        }
        out
    }
}

/// Rebuild the designed complex from a prediction record on top of its
/// reference structure (shared framework and antigen).
pub fn realize_prediction(
    record: &PredictionRecord,
    reference: &Complex,
) -> Result<Complex, MetricsError> {
    let l = reference.cdr_len();
    if record.sequence.chars().count() != l || record.cdr_ca.len() != l {
        return Err(MetricsError::Incomparable(format!(
            "{}: prediction length does not match the reference CDR",
            record.id
        )));
    }
    let mut out = reference.clone();
    let (s, _) = out.cdr_span;
    for (k, ch) in record.sequence.chars().enumerate() {
        let aa = AminoAcid::from_one_letter(ch).ok_or_else(|| {
            MetricsError::Incomparable(format!("{}: bad amino code {ch:?}", record.id))
        })?;
        let res = &mut out.heavy[s + k];
        let new_ca = Vec3d::new(record.cdr_ca[k][0], record.cdr_ca[k][1], record.cdr_ca[k][2]);
        let shift = new_ca.sub(&res.ca());
        for a in res.atoms.iter_mut() {
            *a = a.add(&shift);
        }
        res.aa = aa;
    }
    Ok(out)
}

/// Evaluate one prediction against its reference.
pub fn evaluate_pair(
    record: &PredictionRecord,
    reference: &Complex,
    superpose: bool,
) -> Result<ComplexEval, MetricsError> {
    let pred = realize_prediction(record, reference)?;
    let truth = reference.cdr_sequence();
    let designed = pred.cdr_sequence();
    let labels = compute_contact_labels(reference, CONTACT_CUTOFF)?;
    let logits: Vec<f64> = record.logits.iter().flatten().copied().collect();
    let iface = interface_metrics(&pred, reference, CONTACT_CUTOFF)?;
    Ok(ComplexEval {
        id: record.id.clone(),
        aar: aar(&designed, &truth)?,
        caar: caar(&designed, &truth, &labels.labels)?,
        ppl: perplexity(&logits, &truth)?,
        rmsd: cdr_rmsd(&pred, reference, superpose)?,
        fnat: iface.fnat,
        irmsd: iface.irmsd,
        dockq: iface.dockq,
        epitope_f1: iface.epitope_f1,
    })
}

/// Evaluate a prediction set against reference complexes, aligned by id.
pub fn evaluate_dataset(
    records: &[PredictionRecord],
    references: &[Complex],
    superpose: bool,
) -> Result<EvalReport, MetricsError> {
    let by_id: std::collections::BTreeMap<&str, &Complex> =
        references.iter().map(|c| (c.id.as_str(), c)).collect();
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::IdMismatch(format!(
            "predictions without references: {}",
            missing.join(", ")
        )));
    }
    let rows = records
        .iter()
        .map(|r| evaluate_pair(r, by_id[r.id.as_str()], superpose))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::structure::synth::{generate_synthetic_complex, SynthParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perfect_record(c: &Complex) -> PredictionRecord {
        let l = c.cdr_len();
        let mut logits = vec![vec![0.0f64; 20]; l];
        for (k, r) in c.cdr_residues().iter().enumerate() {
            logits[k][r.aa.index().unwrap()] = 25.0;
        }
        PredictionRecord {
            id: c.id.clone(),
            sequence: c.cdr_sequence().iter().map(|a| a.one_letter()).collect(),
            contact_probs: vec![0.5; l],
            logits,
            cdr_ca: c.cdr_ca().iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    #[test]
    fn identical_sequences_score_one() {
        let (c, labels) = generate_synthetic_complex(4, &SynthParams::default()).unwrap();
        let seq = c.cdr_sequence();
        assert_eq!(aar(&seq, &seq).unwrap(), 1.0);
        assert_eq!(caar(&seq, &seq, &labels.labels).unwrap(), Some(1.0));
        // zero contacts → missing
        let no_contacts = vec![false; seq.len()];
        assert_eq!(caar(&seq, &seq, &no_contacts).unwrap(), None);
        assert!(aar(&seq, &seq[1..]).is_err());
    }

    #[test]
    fn aar_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let l = 12;
            let a: Vec<AminoAcid> = (0..l).map(|_| AminoAcid::from_index(rng.random_range(0..20))).collect();
            let b: Vec<AminoAcid> = (0..l).map(|_| AminoAcid::from_index(rng.random_range(0..20))).collect();
            let labels: Vec<bool> = (0..l).map(|_| rng.random::<f64>() < 0.5).collect();
            let mut hits = 0;
            let mut chits = 0;
            let mut ctot = 0;
            for i in 0..l {
                if a[i] == b[i] {
                    hits += 1;
                }
                if labels[i] {
                    ctot += 1;
                    if a[i] == b[i] {
                        chits += 1;
                    }
                }
            }
            assert_eq!(aar(&a, &b).unwrap(), hits as f64 / l as f64);
            let want = (ctot > 0).then(|| chits as f64 / ctot as f64);
            assert_eq!(caar(&a, &b, &labels).unwrap(), want);
        }
    }

    #[test]
    fn perplexity_cases() {
        let truth: Vec<AminoAcid> = (0..5).map(AminoAcid::from_index).collect();
        let uniform = vec![0.7; 5 * 20];
        assert!((perplexity(&uniform, &truth).unwrap() - 20.0).abs() < 1e-9);
        // strongly correct logits → approaches 1
        let mut sharp = vec![0.0; 5 * 20];
        for (i, aa) in truth.iter().enumerate() {
            sharp[i * 20 + aa.index().unwrap()] = 40.0;
        }
        assert!((perplexity(&sharp, &truth).unwrap() - 1.0).abs() < 1e-6);
        // random vs oracle
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..5 * 20).map(|_| rng.random::<f64>() * 3.0).collect();
        let got = perplexity(&logits, &truth).unwrap();
        let mut nll = 0.0;
        for (i, aa) in truth.iter().enumerate() {
            let row = &logits[i * 20..(i + 1) * 20];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            nll -= (row[aa.index().unwrap()].exp() / z).ln();
        }
        let want = (nll / 5.0).exp();
        assert!((got - want).abs() < 1e-9);
        assert!(got >= 1.0);
    }

    #[test]
    fn rmsd_cases() {
        let (c, _) = generate_synthetic_complex(6, &SynthParams::default()).unwrap();
        assert_eq!(cdr_rmsd(&c, &c, false).unwrap(), 0.0);
        let mut shifted = c.clone();
        for r in &mut shifted.heavy[c.cdr_span.0..c.cdr_span.1] {
            for a in r.atoms.iter_mut() {
                *a = a.add(&Vec3::new(1.0, 0.0, 0.0));
            }
        }
        assert!((cdr_rmsd(&shifted, &c, false).unwrap() - 1.0).abs() < 1e-12);
        assert!(cdr_rmsd(&shifted, &c, true).unwrap() < 1e-9);
    }

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let (c, _) = generate_synthetic_complex(7, &SynthParams::default()).unwrap();
        let rec = perfect_record(&c);
        let eval = evaluate_pair(&rec, &c, false).unwrap();
        assert_eq!(eval.aar, 1.0);
        assert_eq!(eval.caar, Some(1.0));
        assert!(eval.ppl < 1.0 + 1e-9);
        assert!(eval.rmsd < 1e-12);
        assert_eq!(eval.fnat, Some(1.0));
        assert!(eval.irmsd.unwrap() < 1e-9);
        assert!((eval.dockq.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(eval.epitope_f1, Some(1.0));
    }

    #[test]
    fn translated_far_away_loses_all_contacts() {
        let (c, _) = generate_synthetic_complex(8, &SynthParams::default()).unwrap();
        let mut rec = perfect_record(&c);
        for p in rec.cdr_ca.iter_mut() {
            p[2] += 100.0;
        }
        let eval = evaluate_pair(&rec, &c, false).unwrap();
        assert_eq!(eval.fnat, Some(0.0));
        assert_eq!(eval.epitope_f1, Some(0.0));
        assert!(eval.rmsd > 99.0);
        assert!(eval.dockq.unwrap() < 0.4);
    }

    #[test]
    fn interface_metrics_match_brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..8u64 {
            let p = SynthParams {
                cdr_len: 5 + (seed as usize % 11),
                antigen_len: 20 + (seed as usize * 2),
                planted_contact_fraction: 0.2 + 0.08 * seed as f64,
                noise: 0.25,
            };
            let (c, _) = generate_synthetic_complex(seed + 100, &p).unwrap();
            // perturb CDR coordinates
            let mut rec = perfect_record(&c);
            for pca in rec.cdr_ca.iter_mut() {
                for v in pca.iter_mut() {
                    *v += (rng.random::<f64>() - 0.5) * 6.0;
                }
            }
            let pred = realize_prediction(&rec, &c).unwrap();
            let got = interface_metrics(&pred, &c, CONTACT_CUTOFF).unwrap();

            // oracle contact sets
            let pairs = |cx: &Complex| {
                let mut set = BTreeSet::new();
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
            assert!(!native.is_empty());
            let fnat = native.intersection(&predicted).count() as f64 / native.len() as f64;
            assert_eq!(got.fnat, Some(fnat));

            let nat_ag: BTreeSet<usize> = native.iter().map(|&(_, j)| j).collect();
            let prd_ag: BTreeSet<usize> = predicted.iter().map(|&(_, j)| j).collect();
            let tp = nat_ag.intersection(&prd_ag).count() as f64;
            let prec = if prd_ag.is_empty() { 0.0 } else { tp / prd_ag.len() as f64 };
            let rec_ = tp / nat_ag.len() as f64;
            let f1 = if prec + rec_ == 0.0 { 0.0 } else { 2.0 * prec * rec_ / (prec + rec_) };
            assert!((got.epitope_f1.unwrap() - f1).abs() < 1e-12);

            // DockQ stays in [0, 1] and recomposes from its parts
            let d = got.dockq.unwrap();
            assert!((0.0..=1.0).contains(&d));
            let lrmsd = superpose_rmsd(&pred.cdr_ca(), &c.cdr_ca(), false).unwrap();
            let want = (fnat
                + 1.0 / (1.0 + (got.irmsd.unwrap() / 1.5).powi(2))
                + 1.0 / (1.0 + (lrmsd / 8.5).powi(2)))
                / 3.0;
            assert!((d - want).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_invariant_under_joint_rigid_motion() {
        let (c, _) = generate_synthetic_complex(33, &SynthParams::default()).unwrap();
        let mut rec = perfect_record(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for pca in rec.cdr_ca.iter_mut() {
            for v in pca.iter_mut() {
                *v += (rng.random::<f64>() - 0.5) * 4.0;
            }
        }
        let pred = realize_prediction(&rec, &c).unwrap();
        let before = interface_metrics(&pred, &c, CONTACT_CUTOFF).unwrap();
        // rotate both pred and ref jointly
        let rot = crate::geom::Quaternion {
            w: 0.9,
            x: 0.1,
            y: (1.0f64 - 0.81 - 0.01 - 0.09).sqrt(),
            z: 0.3,
        };
        let r = rot.to_matrix();
        let t = Vec3::new(-5.0, 2.0, 8.0);
        let mv = |cx: &Complex| {
            let mut out = cx.clone();
            for chain in [&mut out.heavy, &mut out.light, &mut out.antigen] {
                for res in chain.iter_mut() {
                    for a in res.atoms.iter_mut() {
                        *a = r.apply(a).add(&t);
                    }
                }
            }
            out
        };
        let after = interface_metrics(&mv(&pred), &mv(&c), CONTACT_CUTOFF).unwrap();
        assert_eq!(before.fnat, after.fnat);
        assert_eq!(before.epitope_f1, after.epitope_f1);
        assert!((before.irmsd.unwrap() - after.irmsd.unwrap()).abs() < 1e-9);
        assert!((before.dockq.unwrap() - after.dockq.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn reindexing_antigen_preserves_set_metrics() {
        let (c, _) = generate_synthetic_complex(44, &SynthParams::default()).unwrap();
        let mut rec = perfect_record(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pca in rec.cdr_ca.iter_mut() {
            for v in pca.iter_mut() {
                *v += (rng.random::<f64>() - 0.5) * 5.0;
            }
        }
        let pred = realize_prediction(&rec, &c).unwrap();
        let before = interface_metrics(&pred, &c, CONTACT_CUTOFF).unwrap();
        // reverse antigen residue order in both complexes identically
        let rev = |cx: &Complex| {
            let mut out = cx.clone();
            out.antigen.reverse();
            for (i, r) in out.antigen.iter_mut().enumerate() {
                r.chain_index = i;
            }
            let n = out.antigen.len();
            out.epitope = out.epitope.iter().map(|&j| n - 1 - j).collect();
            out.epitope.sort_unstable();
            out
        };
        let after = interface_metrics(&rev(&pred), &rev(&c), CONTACT_CUTOFF).unwrap();
        assert_eq!(before.fnat, after.fnat);
        assert_eq!(before.epitope_f1, after.epitope_f1);
        assert!((before.irmsd.unwrap() - after.irmsd.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn auroc_basics() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), Some(1.0));
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]), Some(0.0));
        let mid = auroc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        assert!((mid - 0.5).abs() < 1e-12);
        assert_eq!(auroc(&[0.5, 0.6], &[true, true]), None);
    }

    #[test]
    fn aggregate_and_csv() {
        let (c1, _) = generate_synthetic_complex(61, &SynthParams::default()).unwrap();
        let (c2, _) = generate_synthetic_complex(62, &SynthParams::default()).unwrap();
        let recs = vec![perfect_record(&c1), perfect_record(&c2)];
        let report = evaluate_dataset(&recs, &[c1.clone(), c2.clone()], false).unwrap();
        assert_eq!(report.rows.len(), 2);
        // single complex: mean = value, std = 0
        let single = EvalReport {
            rows: vec![report.rows[0].clone()],
        };
        let agg = single.aggregate();
        assert_eq!(agg[0].1, Some(report.rows[0].aar));
        assert_eq!(agg[0].2, Some(0.0));
        // two known rows: hand-computed mean/std of aar
        let a = report.rows[0].aar;
        let b = report.rows[1].aar;
        let mean = (a + b) / 2.0;
        let std = (((a - mean).powi(2) + (b - mean).powi(2)) / 2.0).sqrt();
        let agg = report.aggregate();
        assert!((agg[0].1.unwrap() - mean).abs() < 1e-12);
        assert!((agg[0].2.unwrap() - std).abs() < 1e-12);
        // permutation invariance of aggregates
        let report_rev = EvalReport {
            rows: report.rows.iter().rev().cloned().collect(),
        };
        for (x, y) in report.aggregate().iter().zip(report_rev.aggregate()) {
            assert_eq!(x.1, y.1);
            assert_eq!(x.2, y.2);
        }
        // csv golden header
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,aar,caar,ppl,rmsd,fnat,irmsd,dockq,epitope_f1\n"));
        assert!(text.lines().count() == 2 + 2 + 1);
        // id mismatch errors name offenders
        let err = evaluate_dataset(&recs, &[c1], false).unwrap_err();
        assert!(err.to_string().contains(&c2.id));
    }
}
