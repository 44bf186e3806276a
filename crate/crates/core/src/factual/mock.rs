//! Deterministic offline question generation and answering.

use super::{bag_overlap, normalize_answer, Answer, AnswerSpan, ClientError, QuestionAnswerer, QuestionGenerator};

/// Template question generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockQg;

impl QuestionGenerator for MockQg {
    fn generate_question(&self, span: &AnswerSpan, _caption: &str) -> Result<String, ClientError> {
        Ok(format!("What does the text state about {}?", span.text))
    }
}

/// Extractive answerer: slides a window the size of the question's focus
/// over the reference and returns the window sharing the most normalised
/// tokens with it (earliest on ties), or no answer when nothing is shared.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockQa;

/// Text after the last "about " and before the last '?'.
pub fn question_focus(question: &str) -> &str {
    let start = question.rfind("about ").map_or(0, |i| i + "about ".len());
    let rest = &question[start..];
    rest[..rest.rfind('?').unwrap_or(rest.len())].trim()
}

fn strip_edges(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

impl QuestionAnswerer for MockQa {
    fn answer_question(&self, question: &str, reference: &str) -> Result<Answer, ClientError> {
        let focus = question_focus(question);
        let focus_norm = normalize_answer(focus);
        let width = focus.split_whitespace().count().max(1);
        let tokens: Vec<&str> = reference.split_whitespace().collect();
        let width = width.min(tokens.len());
        let mut best: Option<(usize, usize)> = None;
        if width > 0 && !focus_norm.is_empty() {
            for start in 0..=tokens.len() - width {
                let window = normalize_answer(&tokens[start..start + width].join(" "));
                let score = bag_overlap(&window, &focus_norm);
                if score > 0 && best.is_none_or(|(_, b)| score > b) {
                    best = Some((start, score));
                }
            }
        }
        Ok(match best {
            Some((start, _)) => Answer {
                text: Some(strip_edges(&tokens[start..start + width].join(" ")).to_string()),
                score: 1.0,
            },
            None => Answer { text: None, score: 0.0 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(t: &str) -> AnswerSpan {
        AnswerSpan {
            text: t.into(),
            start: 0,
            end: t.chars().count(),
        }
    }

    #[test]
    fn template() {
        let q = MockQg.generate_question(&span("fatty acid"), "").unwrap();
        assert_eq!(q, "What does the text state about fatty acid?");
        assert_eq!(q, MockQg.generate_question(&span("fatty acid"), "x").unwrap());
        assert_eq!(question_focus(&q), "fatty acid");
        assert_eq!(question_focus("Tell me about about face?"), "face");
    }

    #[test]
    fn answers() {
        let q = "What does the text state about fatty acid?";
        let a = MockQa
            .answer_question(q, "It is a fatty acid, found in plants.")
            .unwrap();
        assert_eq!(
            a,
            Answer {
                text: Some("fatty acid".into()),
                score: 1.0
            }
        );
        let none = MockQa.answer_question(q, "A steroid hormone.").unwrap();
        assert_eq!(none, Answer { text: None, score: 0.0 });
        let partial = MockQa.answer_question(q, "Methyl ester of an acid.").unwrap();
        assert_eq!(partial.text.as_deref(), Some("an acid"));
        assert_eq!(MockQa.answer_question(q, "").unwrap().text, None);
        assert_eq!(
            MockQa.answer_question(q, "acid fatty acid").unwrap().text.as_deref(),
            Some("acid fatty")
        );
    }
}
