//! Lossless SMILES tokenizer.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    OrganicAtom,
    BracketAtom,
    Bond,
    RingClosure,
    BranchOpen,
    BranchClose,
    Dot,
}

/// One lexical unit; `position` is a character offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SmilesToken {
    pub kind: TokenKind,
    pub text: String,
    pub position: usize,
}

impl SmilesToken {
    /// Numeric label of a ring-closure token (`"1"` → 1, `"%12"` → 12).
    pub fn ring_label(&self) -> Option<u32> {
        match self.kind {
            TokenKind::RingClosure => self.text.trim_start_matches('%').parse().ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unexpected character {ch:?} at offset {position}")]
    UnexpectedCharacter { ch: char, position: usize },
    #[error("unterminated bracket atom starting at offset {position}")]
    UnterminatedBracket { position: usize },
    #[error("ring label after '%' at offset {position} needs two digits")]
    IncompleteRingLabel { position: usize },
}

impl LexError {
    pub fn position(&self) -> usize {
        match *self {
            LexError::UnexpectedCharacter { position, .. }
            | LexError::UnterminatedBracket { position }
            | LexError::IncompleteRingLabel { position } => position,
        }
    }
}

/// Greedy longest-match lexing of the organic subset, bracket atoms, bonds,
/// ring closures, branches and dots. Concatenating the token texts gives
/// back the input.
pub fn tokenize(smiles: &str) -> Result<Vec<SmilesToken>, LexError> {
    let chars: Vec<char> = smiles.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        let (kind, len) = match c {
            'C' if next == Some('l') => (TokenKind::OrganicAtom, 2),
            'B' if next == Some('r') => (TokenKind::OrganicAtom, 2),
            'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => (TokenKind::OrganicAtom, 1),
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => (TokenKind::OrganicAtom, 1),
            '[' => match chars[i + 1..].iter().position(|&d| d == ']') {
                Some(off) => (TokenKind::BracketAtom, off + 2),
                None => return Err(LexError::UnterminatedBracket { position: i }),
            },
            '-' | '=' | '#' | ':' | '/' | '\\' => (TokenKind::Bond, 1),
            '0'..='9' => (TokenKind::RingClosure, 1),
            '%' => match (next, chars.get(i + 2)) {
                (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => (TokenKind::RingClosure, 3),
                _ => return Err(LexError::IncompleteRingLabel { position: i }),
            },
            '(' => (TokenKind::BranchOpen, 1),
            ')' => (TokenKind::BranchClose, 1),
            '.' => (TokenKind::Dot, 1),
            _ => return Err(LexError::UnexpectedCharacter { ch: c, position: i }),
        };
        tokens.push(SmilesToken {
            kind,
            text: chars[i..i + len].iter().collect(),
            position: i,
        });
        i += len;
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn simple_chain() {
        assert_eq!(kinds("CCO"), vec![TokenKind::OrganicAtom; 3]);
    }

    #[test]
    fn two_letter_organics() {
        let t = tokenize("ClCBr").unwrap();
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["Cl", "C", "Br"]);
        assert_eq!(t[2].position, 3);
    }

    #[test]
    fn percent_ring_labels() {
        let t = tokenize("C%12CC%12").unwrap();
        let labels: Vec<_> = t.iter().filter_map(|t| t.ring_label()).collect();
        assert_eq!(labels, [12, 12]);
        assert_eq!(t[1].text, "%12");
        assert!(matches!(
            tokenize("C%1"),
            Err(LexError::IncompleteRingLabel { position: 1 })
        ));
    }

    #[test]
    fn bracket_atoms_and_errors() {
        let t = tokenize("[NH4+].[Cl-]").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].text, "[NH4+]");
        assert_eq!(t[2].position, 7);
        assert_eq!(kinds("C("), vec![TokenKind::OrganicAtom, TokenKind::BranchOpen]);
        assert_eq!(tokenize("C["), Err(LexError::UnterminatedBracket { position: 1 }));
        assert_eq!(
            tokenize("CXC"),
            Err(LexError::UnexpectedCharacter { ch: 'X', position: 1 })
        );
        assert_eq!(
            tokenize("C\u{e9}"),
            Err(LexError::UnexpectedCharacter {
                ch: '\u{e9}',
                position: 1
            })
        );
    }

    #[test]
    fn stereo_bonds_are_tokens() {
        assert_eq!(kinds("F/C=C\\F")[1], TokenKind::Bond);
        assert_eq!(kinds("F/C=C\\F")[5], TokenKind::Bond);
    }

    proptest! {
        #[test]
        fn lexing_is_lossless(s in "[BCNOPSFIclbrnops0-9%()\\[\\]=#:/\\\\.+@H-]{0,40}") {
            if let Ok(tokens) = tokenize(&s) {
                let joined: String = tokens.iter().map(|t| t.text.as_str()).collect();
                prop_assert_eq!(joined, s.clone());
                let mut expect = 0;
                for t in &tokens {
                    prop_assert_eq!(t.position, expect);
                    expect += t.text.chars().count();
                }
            }
        }
    }
}
