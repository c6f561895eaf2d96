//! PDB v3.3 ATOM-record subset: backbone extraction for complex ingestion
//! and a matching writer for round-trips.
//!
//! Only N/CA/C/O atom records are consumed; HETATM, occupancy and altloc are
//! ignored. Residues missing any of the four backbone atoms are dropped with
//! a warning. Insertion codes are unsupported and rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{AminoAcid, Complex, Residue, StructureError};
use crate::geom::Vec3d;

struct AtomRecord {
    name: String,
    res_name: String,
    chain: char,
    res_seq: i64,
    pos: Vec3d,
}

fn parse_atom_line(line: &str, ln: usize) -> Result<Option<AtomRecord>, StructureError> {
    if !line.starts_with("ATOM") {
        return Ok(None);
    }
    if line.len() < 54 {
        return Err(StructureError::Pdb(format!("line {ln}: ATOM record too short")));
    }
    let field = |a: usize, b: usize| line[a..b].trim().to_string();
    let icode = line.as_bytes()[26] as char;
    if icode != ' ' {
        return Err(StructureError::Pdb(format!(
            "line {ln}: insertion codes are not supported (found {icode:?})"
        )));
    }
    let res_seq: i64 = field(22, 26)
        .parse()
        .map_err(|_| StructureError::Pdb(format!("line {ln}: bad residue sequence number")))?;
    let coord = |a: usize, b: usize| -> Result<f64, StructureError> {
        field(a, b)
            .parse()
            .map_err(|_| StructureError::Pdb(format!("line {ln}: bad coordinate")))
    };
    Ok(Some(AtomRecord {
        name: field(12, 16),
        res_name: field(17, 20),
        chain: line.as_bytes()[21] as char,
        res_seq,
        pos: Vec3d::new(coord(30, 38)?, coord(38, 46)?, coord(46, 54)?),
    }))
}

fn collect_chain(
    records: &[AtomRecord],
    chain: char,
) -> Result<Vec<Residue>, StructureError> {
    // residues keyed and ordered by residue sequence number
    let mut by_res: BTreeMap<i64, (Option<AminoAcid>, [Option<Vec3d>; 4])> = BTreeMap::new();
    for r in records.iter().filter(|r| r.chain == chain) {
        let slot = match r.name.as_str() {
            "N" => 0,
            "CA" => 1,
            "C" => 2,
            "O" => 3,
            _ => continue,
        };
        let entry = by_res.entry(r.res_seq).or_insert((None, [None; 4]));
        if entry.0.is_none() {
            entry.0 = Some(AminoAcid::from_three_letter(&r.res_name).unwrap_or(AminoAcid::Unknown));
        }
        // first record wins; duplicates (altloc variants) are ignored
        if entry.1[slot].is_none() {
            entry.1[slot] = Some(r.pos);
        }
    }
    if by_res.is_empty() {
        return Err(StructureError::Pdb(format!("chain {chain:?} not found")));
    }
    let mut out = Vec::new();
    for (res_seq, (aa, atoms)) in by_res {
        if atoms.iter().any(|a| a.is_none()) {
            log::warn!("chain {chain} residue {res_seq}: missing backbone atom, dropped");
            continue;
        }
        out.push(Residue {
            aa: aa.unwrap(),
            atoms: [
                atoms[0].unwrap(),
                atoms[1].unwrap(),
                atoms[2].unwrap(),
                atoms[3].unwrap(),
            ],
            chain_index: out.len(),
        });
    }
    if out.is_empty() {
        return Err(StructureError::Pdb(format!(
            "chain {chain:?} has no residue with a complete backbone"
        )));
    }
    Ok(out)
}

/// Parse a PDB fragment into a complex.
///
/// `antigen_ids` may name several chains; they are concatenated in the given
/// order and indexed as one antigen segment. `epitope` indices refer to that
/// concatenated list.
pub fn parse_pdb_subset(
    text: &[u8],
    heavy_id: char,
    light_id: Option<char>,
    antigen_ids: &[char],
    cdr_span: (usize, usize),
    epitope: &[usize],
    id: &str,
) -> Result<Complex, StructureError> {
    let text = std::str::from_utf8(text)
        .map_err(|_| StructureError::Pdb("file is not valid UTF-8".into()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rec) = parse_atom_line(line, i + 1)? {
            records.push(rec);
        }
    }
    let heavy = collect_chain(&records, heavy_id)?;
    let light = match light_id {
        Some(ch) => collect_chain(&records, ch)?,
        None => Vec::new(),
    };
    let mut antigen = Vec::new();
    for &ch in antigen_ids {
        let part = collect_chain(&records, ch)?;
        for mut r in part {
            r.chain_index = antigen.len();
            antigen.push(r);
        }
    }
    let mut epitope = epitope.to_vec();
    epitope.sort_unstable();
    epitope.dedup();
    let complex = Complex {
        id: id.to_string(),
        heavy,
        light,
        antigen,
        cdr_span,
        epitope,
    };
    complex.validate()?;
    Ok(complex)
}

fn write_chain(out: &mut String, chain: &[Residue], chain_id: char, serial: &mut usize) {
    for (ri, r) in chain.iter().enumerate() {
        for (ai, name) in super::ATOM_NAMES.iter().enumerate() {
            let p = r.atoms[ai];
            // PDB v3.3 ATOM record layout, fixed columns
            let _ = write!(
                out,
                "ATOM  {:>5} {:<4} {:<3} {}{:>4}    {:8.3}{:8.3}{:8.3}  1.00  0.00\n",
                *serial,
                format!(" {name}"),
                r.aa.three_letter(),
                chain_id,
                ri + 1,
                p.x,
                p.y,
                p.z
            );
            *serial += 1;
        }
    }
}

/// Serialize a complex as PDB ATOM records: heavy chain H, light chain L,
/// antigen chain A.
pub fn serialize_pdb(c: &Complex) -> String {
    let mut out = String::new();
    let mut serial = 1;
    write_chain(&mut out, &c.heavy, 'H', &mut serial);
    if !c.light.is_empty() {
        write_chain(&mut out, &c.light, 'L', &mut serial);
    }
    write_chain(&mut out, &c.antigen, 'A', &mut serial);
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::synth;

    const FRAGMENT: &str = "\
ATOM      1  N   ALA H   1      -1.000   0.000   0.000  1.00  0.00
ATOM      2  CA  ALA H   1       0.000   0.000   0.000  1.00  0.00
ATOM      3  C   ALA H   1       1.000   1.000   0.000  1.00  0.00
ATOM      4  O   ALA H   1       2.000   1.000   0.500  1.00  0.00
ATOM      5  N   GLY H   2       3.000   0.000   0.000  1.00  0.00
ATOM      6  CA  GLY H   2       4.000   0.000   0.000  1.00  0.00
ATOM      7  C   GLY H   2       5.000   1.000   0.000  1.00  0.00
ATOM      8  O   GLY H   2       6.000   1.000   0.500  1.00  0.00
ATOM      9  N   TRP H   3       7.000   0.000   0.000  1.00  0.00
ATOM     10  CA  TRP H   3       8.000   0.000   0.000  1.00  0.00
ATOM     11  C   TRP H   3       9.000   1.000   0.000  1.00  0.00
ATOM     12  O   TRP H   3      10.000   1.000   0.500  1.00  0.00
ATOM     13  N   LYS A   1       3.000   6.000   0.000  1.00  0.00
ATOM     14  CA  LYS A   1       4.000   6.000   0.000  1.00  0.00
ATOM     15  C   LYS A   1       5.000   7.000   0.000  1.00  0.00
ATOM     16  O   LYS A   1       6.000   7.000   0.500  1.00  0.00
END
";

    #[test]
    fn three_residue_fragment_parses() {
        let c = parse_pdb_subset(FRAGMENT.as_bytes(), 'H', None, &['A'], (1, 2), &[0], "frag")
            .unwrap();
        assert_eq!(c.heavy.len(), 3);
        assert_eq!(c.antigen.len(), 1);
        assert_eq!(c.heavy[1].aa.one_letter(), 'G');
        assert_eq!(c.heavy[0].ca(), Vec3d::new(0.0, 0.0, 0.0));
        assert_eq!(c.heavy[2].o(), Vec3d::new(10.0, 1.0, 0.5));
    }

    #[test]
    fn incomplete_residue_is_dropped() {
        // remove the O record of residue 2
        let text: String = FRAGMENT
            .lines()
            .filter(|l| !l.contains(" O   GLY"))
            .map(|l| format!("{l}\n"))
            .collect();
        let c = parse_pdb_subset(text.as_bytes(), 'H', None, &['A'], (0, 1), &[0], "frag")
            .unwrap();
        assert_eq!(c.heavy.len(), 2);
    }

    #[test]
    fn absent_chain_is_error() {
        let r = parse_pdb_subset(FRAGMENT.as_bytes(), 'H', Some('L'), &['A'], (1, 2), &[], "x");
        assert!(matches!(r, Err(StructureError::Pdb(_))));
    }

    #[test]
    fn insertion_code_rejected() {
        let line = "ATOM      1  N   ALA H   1A     -1.000   0.000   0.000  1.00  0.00\n";
        let r = parse_pdb_subset(line.as_bytes(), 'H', None, &[], (0, 1), &[], "x");
        assert!(matches!(r, Err(StructureError::Pdb(_))));
    }

    #[test]
    fn synthetic_round_trip_within_format_precision() {
        let (c, _) = synth::generate_synthetic_complex(9, &synth::SynthParams::default()).unwrap();
        let text = serialize_pdb(&c);
        let light_id = if c.light.is_empty() { None } else { Some('L') };
        let back = parse_pdb_subset(
            text.as_bytes(),
            'H',
            light_id,
            &['A'],
            c.cdr_span,
            &c.epitope,
            &c.id,
        )
        .unwrap();
        assert_eq!(back.heavy.len(), c.heavy.len());
        assert_eq!(back.light.len(), c.light.len());
        assert_eq!(back.antigen.len(), c.antigen.len());
        for (a, b) in c.heavy.iter().zip(&back.heavy) {
            assert_eq!(a.aa, b.aa);
            for (pa, pb) in a.atoms.iter().zip(&b.atoms) {
                assert!(pa.dist(pb) < 1e-3 * 3f64.sqrt() + 1e-9);
            }
        }
    }
}
