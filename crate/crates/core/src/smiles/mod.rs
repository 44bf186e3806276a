//! SMILES lexing, parsing, validity checking and circular fingerprints.
//!
//! The graph keeps heavy atoms only; implicit hydrogens enter the
//! fingerprint through `explicit_h` alone. Stereo markers are lexed but
//! carry no meaning in the graph.

mod fingerprint;
mod graph;
mod lexer;

use serde::Serialize;

pub use fingerprint::{atom_invariant, morgan_fingerprint, tanimoto, Fingerprint, FingerprintError};
pub use graph::{parse, Atom, Bond, BondOrder, ErrorClass, MoleculeGraph, ParseError};
pub use lexer::{tokenize, LexError, SmilesToken, TokenKind};

/// One reason a string failed [`is_valid`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub class: ErrorClass,
    pub message: String,
}

/// Default maximum valence of neutral, non-aromatic organic-subset atoms.
pub fn max_valence(element: &str) -> Option<f64> {
    Some(match element {
        "B" => 3.0,
        "C" => 4.0,
        "N" => 3.0,
        "O" => 2.0,
        "P" => 5.0,
        "S" => 6.0,
        "F" | "Cl" | "Br" | "I" => 1.0,
        _ => return None,
    })
}

/// Valence diagnostics for `graph`; bracket and aromatic atoms are exempt.
pub fn valence_diagnostics(graph: &MoleculeGraph) -> Vec<Diagnostic> {
    let mut sums = vec![0.0f64; graph.atoms.len()];
    for b in &graph.bonds {
        sums[b.a] += b.order.valence();
        sums[b.b] += b.order.valence();
    }
    graph
        .atoms
        .iter()
        .zip(sums)
        .enumerate()
        .filter(|(_, (a, _))| !a.bracket && !a.aromatic && a.charge == 0)
        .filter_map(|(i, (a, sum))| {
            let max = max_valence(&a.element)?;
            (sum > max).then(|| Diagnostic {
                class: ErrorClass::Valence,
                message: format!("atom {i} ({}) has bond-order sum {sum} > {max}", a.element),
            })
        })
        .collect()
}

/// Parses and checks valences; `true` with no diagnostics when valid.
pub fn is_valid(smiles: &str) -> (bool, Vec<Diagnostic>) {
    match parse(smiles) {
        Ok(g) => {
            let d = valence_diagnostics(&g);
            (d.is_empty(), d)
        }
        Err(e) => (
            false,
            vec![Diagnostic {
                class: e.class(),
                message: e.to_string(),
            }],
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validity_examples() {
        assert_eq!(is_valid("CCO"), (true, vec![]));
        assert!(is_valid("c1ccccc1").0);
        let (ok, d) = is_valid("C(C)(C)(C)(C)C");
        assert!(!ok);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].class, ErrorClass::Valence);
        assert!(!is_valid("FCl(C)").0);
        assert!(!is_valid("O=O=O").0);
        assert!(is_valid("[CH5+]").0);
        assert!(is_valid("OP(=O)(O)O").0);
        assert!(is_valid("OS(=O)(=O)O").0);
        assert!(!is_valid("C1CC").0);
    }

    fn chain() -> impl Strategy<Value = String> {
        let atom = prop::sample::select(vec!["C", "N", "O", "c1ccccc1", "[NH4+]", "Cl"]);
        let bond = prop::sample::select(vec!["", "-", "="]);
        prop::collection::vec((bond, atom, any::<bool>()), 1..8).prop_map(|parts| {
            let mut s = String::from("C");
            for (b, a, branch) in parts {
                if branch {
                    s.push_str(&format!("({b}{a})"));
                } else {
                    s.push_str(b);
                    s.push_str(a);
                }
            }
            s
        })
    }

    proptest! {
        #[test]
        fn validity_implies_parse_implies_lex(s in "[CNOc1-2()=#.\\[\\]H+]{0,20}") {
            if is_valid(&s).0 {
                prop_assert!(parse(&s).is_ok());
            }
            if parse(&s).is_ok() {
                prop_assert!(tokenize(&s).is_ok());
            }
        }

        #[test]
        fn tanimoto_properties(a in chain(), b in chain()) {
            let (Ok(ga), Ok(gb)) = (parse(&a), parse(&b)) else { return Ok(()); };
            let fa = morgan_fingerprint(&ga, 2, 1024).unwrap();
            let fb = morgan_fingerprint(&gb, 2, 1024).unwrap();
            let t = tanimoto(&fa, &fb).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert_eq!(t, tanimoto(&fb, &fa).unwrap());
            prop_assert_eq!(tanimoto(&fa, &fa).unwrap(), 1.0);
            prop_assert_eq!(&fa, &morgan_fingerprint(&parse(&a).unwrap(), 2, 1024).unwrap());
        }

        #[test]
        fn accepted_ring_labels_pair_up(s in "C[1-3C=()]{0,16}") {
            if parse(&s).is_ok() {
                let tokens = tokenize(&s).unwrap();
                for label in 0..10 {
                    let n = tokens.iter().filter(|t| t.ring_label() == Some(label)).count();
                    prop_assert_eq!(n % 2, 0);
                }
            }
        }
    }
}
