//! Shared fixtures for the integration and acceptance tests.

#![allow(dead_code)]

use xmodal_pref_core::data::PairRecord;
use xmodal_pref_core::hash::fnv1a;
use xmodal_pref_core::smiles;

const ATOMS: [(&str, &str); 8] = [
    ("C", "carbon"),
    ("N", "nitrogen"),
    ("O", "oxygen"),
    ("S", "sulfur"),
    ("P", "phosphorus"),
    ("F", "fluorine"),
    ("I", "iodine"),
    ("B", "boron"),
];

const BONDS: [(&str, &str); 3] = [("", "single"), ("=", "double"), ("#", "triple")];

fn chains(len: usize, prefix: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    if prefix.len() == len {
        out.push(prefix.clone());
        return;
    }
    for a in 0..ATOMS.len() {
        if prefix.iter().any(|&(x, _)| x == a) {
            continue;
        }
        for b in 0..BONDS.len() {
            let first = prefix.is_empty();
            if first && b != 0 {
                continue;
            }
            if b != 0 && prefix.iter().any(|&(_, y)| y == b) {
                continue;
            }
            prefix.push((a, b));
            chains(len, prefix, out);
            prefix.pop();
        }
    }
}

/// `n` caption/SMILES pairs. Every molecule is a short chain of distinct
/// atoms joined by distinct explicit bonds, so no character repeats within a
/// target; the caption spells the chain out and is unique per molecule.
pub fn toy_corpus(n: usize) -> Vec<PairRecord> {
    let mut structures = Vec::new();
    for len in 2..=4 {
        chains(len, &mut Vec::new(), &mut structures);
    }
    let mut pairs: Vec<(String, String)> = structures
        .into_iter()
        .map(|chain| {
            let mut smiles = String::new();
            let mut caption = format!("A chain starting at {}", ATOMS[chain[0].0].1);
            for (i, &(a, b)) in chain.iter().enumerate() {
                smiles.push_str(BONDS[b].0);
                smiles.push_str(ATOMS[a].0);
                if i > 0 {
                    caption.push_str(&format!(", {}-bonded to {}", BONDS[b].1, ATOMS[a].1));
                }
            }
            caption.push('.');
            (smiles, caption)
        })
        .filter(|(s, _)| smiles::is_valid(s).0)
        .collect();
    pairs.sort_by_key(|(s, _)| (fnv1a(s.as_bytes()), s.clone()));
    assert!(pairs.len() >= n, "only {} toy molecules available", pairs.len());
    pairs
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (molecule, caption))| PairRecord {
            id: format!("toy-{i:03}"),
            molecule,
            caption,
            category: None,
        })
        .collect()
}
