//! SMILES parser producing a [`MoleculeGraph`].

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::lexer::{tokenize, LexError, SmilesToken, TokenKind};

const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc",
    "Lv", "Ts", "Og",
];

const AROMATIC_BRACKET: [&str; 8] = ["se", "as", "b", "c", "n", "o", "p", "s"];

fn is_element(symbol: &str) -> bool {
    ELEMENTS.contains(&symbol)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Atom {
    /// Element symbol in canonical case (`"C"`, `"Cl"`), also for aromatic atoms.
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    pub explicit_h: Option<u32>,
    pub isotope: Option<u32>,
    /// Written in brackets; bracket atoms are exempt from the valence check.
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    /// Small integer code used by fingerprints.
    pub fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Atoms plus bonds; disconnected components (from `.`) share one graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MoleculeGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MoleculeGraph {
    /// `(neighbour, order)` lists per atom, in bond order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    fn bonded(&self, a: usize, b: usize) -> bool {
        self.bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
    }
}

/// Broad class of a SMILES diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Lex,
    EmptyInput,
    UnmatchedRingClosure,
    UnbalancedParentheses,
    DanglingBond,
    LeadingBond,
    Structure,
    BracketAtom,
    Valence,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("empty SMILES")]
    EmptyInput,
    #[error("ring closure {label} opened at offset {position} is never closed")]
    UnmatchedRingClosure { label: u32, position: usize },
    #[error("unbalanced parenthesis at offset {position}")]
    UnbalancedParentheses { position: usize },
    #[error("bond at offset {position} has no following atom")]
    DanglingBond { position: usize },
    #[error("bond at offset {position} has no preceding atom")]
    LeadingBond { position: usize },
    #[error("ring closure at offset {position} has no preceding atom")]
    LeadingRingClosure { position: usize },
    #[error("branch at offset {position} has no preceding atom")]
    LeadingBranch { position: usize },
    #[error("empty branch at offset {position}")]
    EmptyBranch { position: usize },
    #[error("misplaced '.' at offset {position}")]
    MisplacedDot { position: usize },
    #[error("ring closure {label} at offset {position} bonds an atom to itself")]
    SelfBond { label: u32, position: usize },
    #[error("ring closure {label} at offset {position} duplicates an existing bond")]
    DuplicateBond { label: u32, position: usize },
    #[error("ring closure {label} at offset {position} has conflicting bond orders")]
    RingBondMismatch { label: u32, position: usize },
    #[error("malformed bracket atom at offset {position}: {message}")]
    MalformedBracketAtom { position: usize, message: String },
    #[error("unknown element {symbol:?} at offset {position}")]
    UnknownElement { symbol: String, position: usize },
}

impl ParseError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ParseError::Lex(_) => ErrorClass::Lex,
            ParseError::EmptyInput => ErrorClass::EmptyInput,
            ParseError::UnmatchedRingClosure { .. } => ErrorClass::UnmatchedRingClosure,
            ParseError::UnbalancedParentheses { .. } => ErrorClass::UnbalancedParentheses,
            ParseError::DanglingBond { .. } => ErrorClass::DanglingBond,
            ParseError::LeadingBond { .. } => ErrorClass::LeadingBond,
            ParseError::MalformedBracketAtom { .. } | ParseError::UnknownElement { .. } => ErrorClass::BracketAtom,
            _ => ErrorClass::Structure,
        }
    }
}

fn parse_bracket(token: &SmilesToken) -> Result<Atom, ParseError> {
    let position = token.position;
    let malformed = |message: &str| ParseError::MalformedBracketAtom {
        position,
        message: message.to_string(),
    };
    let inner: Vec<char> = token.text[1..token.text.len() - 1].chars().collect();
    let mut i = 0;
    let number = |i: &mut usize| -> Option<u32> {
        let start = *i;
        while *i < inner.len() && inner[*i].is_ascii_digit() {
            *i += 1;
        }
        (start < *i).then(|| inner[start..*i].iter().collect::<String>().parse().ok())?
    };

    let isotope = number(&mut i);

    let (element, aromatic) = match inner.get(i) {
        Some(c) if c.is_ascii_uppercase() => {
            let two: String = inner[i..(i + 2).min(inner.len())].iter().collect();
            if two.len() == 2 && two.chars().nth(1).is_some_and(|d| d.is_ascii_lowercase()) && is_element(&two) {
                i += 2;
                (two, false)
            } else if is_element(&c.to_string()) {
                i += 1;
                (c.to_string(), false)
            } else {
                return Err(ParseError::UnknownElement {
                    symbol: c.to_string(),
                    position,
                });
            }
        }
        Some(c) if c.is_ascii_lowercase() => {
            let rest: String = inner[i..].iter().collect();
            match AROMATIC_BRACKET.iter().find(|s| rest.starts_with(*s)) {
                Some(s) => {
                    i += s.len();
                    let mut cs = s.chars();
                    let first = cs.next().unwrap().to_ascii_uppercase();
                    (std::iter::once(first).chain(cs).collect(), true)
                }
                None => {
                    return Err(ParseError::UnknownElement {
                        symbol: c.to_string(),
                        position,
                    })
                }
            }
        }
        _ => return Err(malformed("missing element symbol")),
    };

    // chirality is accepted and ignored
    while inner.get(i) == Some(&'@') {
        i += 1;
    }

    let explicit_h = if inner.get(i) == Some(&'H') {
        i += 1;
        Some(number(&mut i).unwrap_or(1))
    } else {
        None
    };

    let mut charge = 0i32;
    if let Some(&sign) = inner.get(i).filter(|c| **c == '+' || **c == '-') {
        let unit = if sign == '+' { 1 } else { -1 };
        i += 1;
        if let Some(n) = number(&mut i) {
            charge = unit * n as i32;
        } else {
            charge = unit;
            while inner.get(i) == Some(&sign) {
                charge += unit;
                i += 1;
            }
        }
    }

    if inner.get(i) == Some(&':') {
        i += 1;
        if number(&mut i).is_none() {
            return Err(malformed("atom class needs digits"));
        }
    }
    if i != inner.len() {
        return Err(malformed("unexpected trailing characters"));
    }
    Ok(Atom {
        element,
        aromatic,
        charge,
        explicit_h,
        isotope,
        bracket: true,
    })
}

fn organic_atom(text: &str) -> Atom {
    let aromatic = text.chars().all(|c| c.is_ascii_lowercase());
    let element = if aromatic {
        text.to_ascii_uppercase()
    } else {
        text.to_string()
    };
    Atom {
        element,
        aromatic,
        charge: 0,
        explicit_h: None,
        isotope: None,
        bracket: false,
    }
}

fn explicit_order(text: &str) -> BondOrder {
    match text {
        "=" => BondOrder::Double,
        "#" => BondOrder::Triple,
        ":" => BondOrder::Aromatic,
        // '-', '/' and '\' (stereo ignored)
        _ => BondOrder::Single,
    }
}

/// Parses SMILES into a graph with a branch stack and a ring-closure table.
pub fn parse(smiles: &str) -> Result<MoleculeGraph, ParseError> {
    let tokens = tokenize(smiles)?;
    if tokens.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let mut graph = MoleculeGraph {
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
    let mut rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)> = BTreeMap::new();
    let mut last_kind: Option<TokenKind> = None;

    let default_order = |g: &MoleculeGraph, a: usize, b: usize| {
        if g.atoms[a].aromatic && g.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    };

    for token in &tokens {
        let position = token.position;
        match token.kind {
            TokenKind::OrganicAtom | TokenKind::BracketAtom => {
                let atom = if token.kind == TokenKind::BracketAtom {
                    parse_bracket(token)?
                } else {
                    organic_atom(&token.text)
                };
                graph.atoms.push(atom);
                let idx = graph.atoms.len() - 1;
                if let Some(p) = prev {
                    let order = match pending.take() {
                        Some((o, _)) => o,
                        None => default_order(&graph, p, idx),
                    };
                    graph.bonds.push(Bond { a: p, b: idx, order });
                }
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if prev.is_none() {
                    return Err(ParseError::LeadingBond { position });
                }
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond { position: at });
                }
                pending = Some((explicit_order(&token.text), position));
            }
            TokenKind::RingClosure => {
                let label = token.ring_label().expect("ring token has a label");
                let Some(cur) = prev else {
                    return Err(ParseError::LeadingRingClosure { position });
                };
                let here = pending.take();
                match rings.remove(&label) {
                    Some((open, there, _)) => {
                        if open == cur {
                            return Err(ParseError::SelfBond { label, position });
                        }
                        let order = match (there, here.map(|(o, _)| o)) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(ParseError::RingBondMismatch { label, position })
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => default_order(&graph, open, cur),
                        };
                        if graph.bonded(open, cur) {
                            return Err(ParseError::DuplicateBond { label, position });
                        }
                        graph.bonds.push(Bond { a: open, b: cur, order });
                    }
                    None => {
                        rings.insert(label, (cur, here.map(|(o, _)| o), position));
                    }
                }
            }
            TokenKind::BranchOpen => {
                if prev.is_none() {
                    return Err(ParseError::LeadingBranch { position });
                }
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond { position: at });
                }
                branches.push((prev, position));
            }
            TokenKind::BranchClose => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond { position: at });
                }
                if last_kind == Some(TokenKind::BranchOpen) {
                    return Err(ParseError::EmptyBranch { position });
                }
                match branches.pop() {
                    Some((p, _)) => prev = p,
                    None => return Err(ParseError::UnbalancedParentheses { position }),
                }
            }
            TokenKind::Dot => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond { position: at });
                }
                if prev.is_none() || !branches.is_empty() {
                    return Err(ParseError::MisplacedDot { position });
                }
                prev = None;
            }
        }
        last_kind = Some(token.kind);
    }

    if let Some((_, at)) = pending {
        return Err(ParseError::DanglingBond { position: at });
    }
    if let Some(&(_, position)) = branches.first() {
        return Err(ParseError::UnbalancedParentheses { position });
    }
    if let Some((&label, &(_, _, position))) = rings.iter().min_by_key(|(_, v)| v.2) {
        return Err(ParseError::UnmatchedRingClosure { label, position });
    }
    if last_kind == Some(TokenKind::Dot) {
        return Err(ParseError::MisplacedDot {
            position: tokens.last().map_or(0, |t| t.position),
        });
    }
    Ok(graph)
}
