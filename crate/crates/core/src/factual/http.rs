//! JSON-over-HTTP client for external question generation and answering
//! services.
//!
//! Request body: `{"task": "qg"|"qa", "context": ..., "answer"?: ...,
//! "question"?: ...}`. Response body: `{"output": ..., "score"?: ...}`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Answer, AnswerSpan, ClientError, FactualError, QuestionAnswerer, QuestionGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaServiceConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub max_concurrent: usize,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl Default for QaServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_secs: 10.0,
            max_concurrent: 4,
            retries: 2,
        }
    }
}

impl QaServiceConfig {
    pub fn validate(&self) -> Result<(), FactualError> {
        if self.max_concurrent == 0 {
            return Err(FactualError::Config("max_concurrent must be >= 1".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(FactualError::Config(format!(
                "timeout_secs must be > 0, got {}",
                self.timeout_secs
            )));
        }
        if !self.endpoint.starts_with("http://") {
            return Err(FactualError::Config(format!(
                "endpoint must be an http:// URL, got {:?}",
                self.endpoint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub task: String,
    pub context: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    pub output: String,
    #[serde(default)]
    pub score: Option<f64>,
}

/// One call as recorded in the audit transcript.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub request: ServiceRequest,
    pub attempts: u32,
    pub response: Option<ServiceResponse>,
    pub error: Option<String>,
}

pub struct HttpClient {
    config: QaServiceConfig,
    agent: ureq::Agent,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl HttpClient {
    pub fn new(config: QaServiceConfig) -> Result<Self, FactualError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            transcript: Mutex::new(Vec::new()),
        })
    }

    fn post_once(&self, body: &str) -> Result<ServiceResponse, ClientError> {
        let text = self
            .agent
            .post(&self.config.endpoint)
            .content_type("application/json")
            .send(body)
            .map_err(|e| ClientError::Transport(e.to_string()))?
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let response: ServiceResponse =
            serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))?;
        if let Some(s) = response.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(ClientError::Protocol(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(response)
    }

    /// Posts `request`, retrying transport failures, and records the call.
    pub fn call(&self, request: ServiceRequest) -> Result<ServiceResponse, ClientError> {
        let body = serde_json::to_string(&request).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.post_once(&body) {
                Err(ClientError::Transport(e)) if attempts <= self.config.retries => {
                    log::warn!("service call failed (attempt {attempts}): {e}");
                }
                other => break other,
            }
        };
        let entry = TranscriptEntry {
            request,
            attempts,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        self.transcript.lock().expect("transcript lock").push(entry);
        result
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    /// Writes the transcript as JSON lines, in call-completion order.
    pub fn write_transcript(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in self.transcript() {
            serde_json::to_writer(&mut w, &e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

impl QuestionGenerator for HttpClient {
    fn generate_question(&self, span: &AnswerSpan, caption: &str) -> Result<String, ClientError> {
        let r = self.call(ServiceRequest {
            task: "qg".into(),
            context: caption.into(),
            answer: Some(span.text.clone()),
            question: None,
        })?;
        Ok(r.output)
    }
}

impl QuestionAnswerer for HttpClient {
    fn answer_question(&self, question: &str, reference: &str) -> Result<Answer, ClientError> {
        let r = self.call(ServiceRequest {
            task: "qa".into(),
            context: reference.into(),
            answer: None,
            question: Some(question.into()),
        })?;
        let text = (!r.output.trim().is_empty()).then_some(r.output);
        let score = r.score.unwrap_or(if text.is_some() { 1.0 } else { 0.0 });
        Ok(Answer { text, score })
    }
}

/// Shares one client between the generator and answerer slots.
impl<T: QuestionGenerator + ?Sized> QuestionGenerator for std::sync::Arc<T> {
    fn generate_question(&self, span: &AnswerSpan, caption: &str) -> Result<String, ClientError> {
        (**self).generate_question(span, caption)
    }
}

impl<T: QuestionAnswerer + ?Sized> QuestionAnswerer for std::sync::Arc<T> {
    fn answer_question(&self, question: &str, reference: &str) -> Result<Answer, ClientError> {
        (**self).answer_question(question, reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::thread;

    /// Serves `n` requests, answering each with `reply(body)`.
    fn serve(n: usize, reply: fn(&str) -> String) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let out = reply(&String::from_utf8(body).unwrap());
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    out.len(),
                    out
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/")
    }

    fn config(endpoint: String) -> QaServiceConfig {
        QaServiceConfig {
            endpoint,
            timeout_secs: 5.0,
            max_concurrent: 1,
            retries: 0,
        }
    }

    #[test]
    fn wire_protocol_round_trip() {
        let endpoint = serve(2, |body| {
            let req: serde_json::Value = serde_json::from_str(body).unwrap();
            match req["task"].as_str().unwrap() {
                "qg" => format!(r#"{{"output":"Q about {}?"}}"#, req["answer"].as_str().unwrap()),
                _ => r#"{"output":"acid","score":0.25}"#.to_string(),
            }
        });
        let client = HttpClient::new(config(endpoint)).unwrap();
        let span = AnswerSpan {
            text: "acid".into(),
            start: 0,
            end: 4,
        };
        assert_eq!(client.generate_question(&span, "acid").unwrap(), "Q about acid?");
        let a = client.answer_question("Q?", "an acid").unwrap();
        assert_eq!(
            a,
            Answer {
                text: Some("acid".into()),
                score: 0.25
            }
        );
        let t = client.transcript();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].request.task, "qg");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        client.write_transcript(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 2);
    }

    #[test]
    fn bad_score_is_a_protocol_error() {
        let endpoint = serve(1, |_| r#"{"output":"x","score":3}"#.to_string());
        let client = HttpClient::new(config(endpoint)).unwrap();
        assert!(matches!(
            client.answer_question("q?", "r"),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn dead_endpoint_retries_then_fails() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = HttpClient::new(QaServiceConfig {
            retries: 2,
            ..config(format!("http://127.0.0.1:{port}/"))
        })
        .unwrap();
        assert!(matches!(
            client.answer_question("q?", "r"),
            Err(ClientError::Transport(_))
        ));
        assert_eq!(client.transcript()[0].attempts, 3);
    }

    #[test]
    fn config_validation() {
        assert!(HttpClient::new(QaServiceConfig {
            max_concurrent: 0,
            ..config("http://x/".into())
        })
        .is_err());
        assert!(HttpClient::new(config("https://x/".into())).is_err());
        assert!(HttpClient::new(QaServiceConfig {
            timeout_secs: 0.0,
            ..config("http://x/".into())
        })
        .is_err());
    }
}
