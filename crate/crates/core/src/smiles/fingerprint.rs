//! Morgan-style circular fingerprints and Tanimoto similarity.

use serde::Serialize;
use thiserror::Error;

use super::graph::MoleculeGraph;
use crate::hash::StableHasher;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint needs at least one bit")]
    ZeroBits,
    #[error("fingerprint sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

/// Fixed-size bitset folded from circular atom-environment codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fingerprint {
    bits: Vec<u64>,
    nbits: usize,
    radius: u32,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: u32) -> Result<Self, FingerprintError> {
        if nbits == 0 {
            return Err(FingerprintError::ZeroBits);
        }
        Ok(Self {
            bits: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        })
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits);
        self.bits[bit / 64] |= 1 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.nbits && self.bits[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&i| self.contains(i))
    }

    fn fold(&mut self, code: u64) {
        self.set((code % self.nbits as u64) as usize);
    }
}

/// Radius-0 code: hash of (element, degree, charge, aromatic, explicit H or 0).
pub fn atom_invariant(graph: &MoleculeGraph, atom: usize, degree: usize) -> u64 {
    let a = &graph.atoms[atom];
    StableHasher::new()
        .write_str(&a.element)
        .write_u64(degree as u64)
        .write_i64(i64::from(a.charge))
        .write_u64(u64::from(a.aromatic))
        .write_u64(u64::from(a.explicit_h.unwrap_or(0)))
        .finish()
}

/// ECFP-style fingerprint. Each round rehashes an atom's previous code with
/// the sorted `(bond code, neighbour code)` list; every code of every round
/// is folded into a bit. Isolated atoms keep their radius-0 code.
pub fn morgan_fingerprint(graph: &MoleculeGraph, radius: u32, nbits: usize) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::empty(nbits, radius)?;
    let adj = graph.adjacency();
    let mut codes: Vec<u64> = (0..graph.atoms.len())
        .map(|i| atom_invariant(graph, i, adj[i].len()))
        .collect();
    for &c in &codes {
        fp.fold(c);
    }
    for _ in 0..radius {
        let next: Vec<u64> = codes
            .iter()
            .enumerate()
            .map(|(i, &own)| {
                if adj[i].is_empty() {
                    return own;
                }
                let mut env: Vec<(u64, u64)> = adj[i].iter().map(|&(j, o)| (o.code(), codes[j])).collect();
                env.sort_unstable();
                let mut h = StableHasher::new();
                h.write_u64(own).write_u64(env.len() as u64);
                for (b, c) in env {
                    h.write_u64(b).write_u64(c);
                }
                h.finish()
            })
            .collect();
        for &c in &next {
            fp.fold(c);
        }
        codes = next;
    }
    Ok(fp)
}

/// `|a ∧ b| / |a ∨ b|`, 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::SizeMismatch(a.nbits, b.nbits));
    }
    let (mut and, mut or) = (0u32, 0u32);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        and += (x & y).count_ones();
        or += (x | y).count_ones();
    }
    Ok(if or == 0 { 1.0 } else { f64::from(and) / f64::from(or) })
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn fp(s: &str) -> Fingerprint {
        morgan_fingerprint(&parse(s).unwrap(), 2, 2048).unwrap()
    }

    fn from_bits(bits: &[usize], nbits: usize) -> Fingerprint {
        let mut f = Fingerprint::empty(nbits, 0).unwrap();
        for &b in bits {
            f.set(b);
        }
        f
    }

    #[test]
    fn set_arithmetic() {
        let a = from_bits(&[1, 2], 16);
        let b = from_bits(&[2, 3], 16);
        assert!((tanimoto(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &from_bits(&[5, 9], 16)).unwrap(), 0.0);
        let e = from_bits(&[], 16);
        assert_eq!(tanimoto(&e, &e).unwrap(), 1.0);
        assert_eq!(
            tanimoto(&a, &from_bits(&[], 8)),
            Err(FingerprintError::SizeMismatch(16, 8))
        );
    }

    #[test]
    fn single_atom_has_only_its_invariant() {
        let g = parse("C").unwrap();
        let f = morgan_fingerprint(&g, 2, 2048).unwrap();
        let bit = (atom_invariant(&g, 0, 0) % 2048) as usize;
        assert_eq!(f.ones().collect::<Vec<_>>(), vec![bit]);
    }

    #[test]
    fn deterministic_and_similar() {
        assert_eq!(fp("CCO"), fp("CCO"));
        let t = tanimoto(&fp("CCO"), &fp("CCN")).unwrap();
        assert!(t > 0.0 && t < 1.0, "{t}");
        assert!(matches!(
            morgan_fingerprint(&parse("C").unwrap(), 1, 0),
            Err(FingerprintError::ZeroBits)
        ));
    }

    #[test]
    fn radius_zero_counts_atom_types() {
        let f = morgan_fingerprint(&parse("CCO").unwrap(), 0, 4096).unwrap();
        // two terminal/central carbons differ by degree, plus oxygen
        assert_eq!(f.popcount(), 3);
    }
}
