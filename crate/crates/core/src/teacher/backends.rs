use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{parse_verdict, JudgeRequest, Relevance, Teacher, TeacherError, Verdict};
use crate::corpus::GroundTruth;

/// Answers from held-out ground truth, optionally flipping each answer with
/// probability `flip_noise`. The flip for a pair depends only on
/// `(seed, doc id, label id)`, never on call order.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    truth: Arc<GroundTruth>,
    flip_noise: f64,
    seed: u64,
}

impl OracleTeacher {
    pub fn new(truth: Arc<GroundTruth>, flip_noise: f64, seed: u64) -> Result<Self, TeacherError> {
        if !(0.0..=1.0).contains(&flip_noise) {
            return Err(TeacherError::InvalidConfig(format!(
                "flip_noise {flip_noise} not in [0, 1]"
            )));
        }
        Ok(Self {
            truth,
            flip_noise,
            seed,
        })
    }

    fn flips(&self, doc: u32, label: u32) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((doc as u64) << 32) | label as u64);
        rng.random::<f64>() < self.flip_noise
    }
}

impl Teacher for OracleTeacher {
    fn identity(&self) -> String {
        format!("oracle(flip_noise={},seed={})", self.flip_noise, self.seed)
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        let truth = self.truth.contains(req.doc_id, req.label_id);
        let answer = truth != self.flips(req.doc_id, req.label_id);
        Ok(Verdict::clean(if answer {
            Relevance::Relevant
        } else {
            Relevance::NotRelevant
        }))
    }
}

/// Relevant iff the lowercase token sets of document and label have Jaccard
/// similarity at least `threshold`.
#[derive(Debug, Clone, Copy)]
pub struct LexicalTeacher {
    threshold: f64,
}

impl LexicalTeacher {
    pub fn new(threshold: f64) -> Result<Self, TeacherError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(TeacherError::InvalidConfig(format!(
                "jaccard threshold {threshold} not in (0, 1]"
            )));
        }
        Ok(Self { threshold })
    }
}

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let sa: HashSet<&str> = a.split_whitespace().collect();
    let sb: HashSet<&str> = b.split_whitespace().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

impl Teacher for LexicalTeacher {
    fn identity(&self) -> String {
        format!("lexical(threshold={})", self.threshold)
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        let relevant = token_jaccard(req.doc_text, req.label_text) >= self.threshold;
        Ok(Verdict::clean(if relevant {
            Relevance::Relevant
        } else {
            Relevance::NotRelevant
        }))
    }
}

pub const TOKEN_ENV: &str = "LMTX_TEACHER_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub concurrency: usize,
    pub token: Option<String>,
    /// First retry delay; doubles per attempt.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            concurrency: 8,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            backoff: Duration::from_millis(250),
        }
    }
}

/// A chat-completion endpoint. Each request carries one user message with the
/// rendered prompt, `temperature: 0` and `max_tokens: 8`; the reply text is
/// `choices[0].message.content`.
#[derive(Debug)]
pub struct RemoteTeacher {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(Result<Verdict, TeacherError>),
    Retry(String),
}

impl RemoteTeacher {
    pub fn new(config: RemoteConfig) -> Result<Self, TeacherError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TeacherError::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 8,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Done(Err(TeacherError::RemoteUnavailable(format!("HTTP {status}"))));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        Attempt::Done(parse_chat_reply(&text).map(|content| parse_verdict(&content)))
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response.
pub fn parse_chat_reply(body: &str) -> Result<String, TeacherError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| TeacherError::RemoteMalformedResponse(format!("invalid json: {e}")))?;
    v.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TeacherError::RemoteMalformedResponse("no choices[0].message.content".into()))
}

impl Teacher for RemoteTeacher {
    fn identity(&self) -> String {
        format!("remote(model={})", self.config.model)
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency.max(1)
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        let body = self.request_body(req.prompt);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self.config.backoff.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(r) => return r,
                Attempt::Retry(why) => {
                    log::warn!("teacher request failed (attempt {}): {why}", attempt + 1);
                    last = why;
                }
            }
        }
        Err(TeacherError::RemoteUnavailable(format!(
            "{} attempts failed, last error: {last}",
            self.config.max_retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_ground_truth;

    fn req(doc: u32, label: u32) -> JudgeRequest<'static> {
        JudgeRequest {
            doc_id: doc,
            label_id: label,
            doc_text: "",
            label_text: "",
            prompt: "",
        }
    }

    #[test]
    fn oracle_noise_extremes() {
        let truth = Arc::new(parse_ground_truth("1,2\n0\n", 3, None).unwrap());
        let clean = OracleTeacher::new(truth.clone(), 0.0, 5).unwrap();
        let flipped = OracleTeacher::new(truth.clone(), 1.0, 5).unwrap();
        for d in 0..2 {
            for l in 0..3 {
                let t = truth.contains(d, l);
                assert_eq!(clean.judge(&req(d, l)).unwrap().is_relevant(), t);
                assert_eq!(flipped.judge(&req(d, l)).unwrap().is_relevant(), !t);
            }
        }
        assert!(OracleTeacher::new(truth, 1.5, 0).is_err());
    }

    #[test]
    fn oracle_noise_rate_and_order_independence() {
        let rows: String = (0..200).map(|_| "0\n").collect();
        let truth = Arc::new(parse_ground_truth(&rows, 50, None).unwrap());
        let t = OracleTeacher::new(truth, 0.3, 9).unwrap();
        let forward: Vec<bool> = (0..200)
            .flat_map(|d| (0..50).map(move |l| (d, l)))
            .map(|(d, l)| t.flips(d, l))
            .collect();
        let mut backward: Vec<bool> = (0..200)
            .rev()
            .flat_map(|d| (0..50).rev().map(move |l| (d, l)))
            .map(|(d, l)| t.flips(d, l))
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
        let rate = forward.iter().filter(|&&f| f).count() as f64 / forward.len() as f64;
        // 10,000 draws: sd of the rate is about 0.0046
        assert!((rate - 0.3).abs() < 0.02, "flip rate {rate}");
    }

    #[test]
    fn jaccard() {
        assert_eq!(token_jaccard("a b c", "c d"), 0.25);
        assert_eq!(token_jaccard("Tax Law", "tax law"), 1.0);
        assert_eq!(token_jaccard("", ""), 0.0);
        let lex = LexicalTeacher::new(0.25).unwrap();
        let r = JudgeRequest {
            doc_id: 0,
            label_id: 0,
            doc_text: "a b c",
            label_text: "c d",
            prompt: "",
        };
        assert!(lex.judge(&r).unwrap().is_relevant());
        assert!(LexicalTeacher::new(0.0).is_err());
    }

    #[test]
    fn chat_reply_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Yes."}}]}"#;
        assert_eq!(parse_chat_reply(ok).unwrap(), "Yes.");
        assert!(matches!(
            parse_chat_reply("{}"),
            Err(TeacherError::RemoteMalformedResponse(_))
        ));
        assert!(matches!(
            parse_chat_reply("<html>"),
            Err(TeacherError::RemoteMalformedResponse(_))
        ));
    }

    #[test]
    fn request_shape() {
        let t = RemoteTeacher::new(RemoteConfig::new("http://127.0.0.1:1/v1", "m")).unwrap();
        let body = t.request_body("P");
        assert_eq!(
            body,
            json!({"model": "m", "messages": [{"role": "user", "content": "P"}], "temperature": 0, "max_tokens": 8})
        );
    }
}
