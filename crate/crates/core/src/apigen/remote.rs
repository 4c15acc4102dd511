//! HTTP completion backend: one POST per request, prompt in, plain-text completion out.
//!
//! Every completion must be JSON: a list of specs, one artifact, or a list of test cases.

use std::time::Duration;

use serde::de::DeserializeOwned;

use super::cases::TestCase;
use super::{ApiSpec, ApigenError, BackendKind, FailureReport, GeneratorBackend};
use crate::envsim::api::ApiArtifact;

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub retries: u32,
    pub backoff: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, ApigenError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ApigenError::BackendUnavailable(e.to_string()))?;
        Ok(RemoteBackend { endpoint: endpoint.into(), retries: 2, backoff: Duration::from_millis(200), client })
    }

    pub fn complete(&self, prompt: &str) -> Result<String, ApigenError> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let sent = self
                .client
                .post(&self.endpoint)
                .header("content-type", "text/plain")
                .body(prompt.to_string())
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.text());
            match sent {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(attempt, "completion request failed: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(ApigenError::BackendUnavailable(format!("{} after {} retries: {last}", self.endpoint, self.retries)))
    }

    fn ask<T: DeserializeOwned>(&self, api: &str, prompt: String) -> Result<T, ApigenError> {
        let text = self.complete(&prompt)?;
        serde_json::from_str(text.trim())
            .map_err(|e| ApigenError::GenerationRejected { api: api.into(), reason: format!("unparseable completion: {e}") })
    }
}

impl GeneratorBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn propose_specs(&self, examples: &[String]) -> Result<Vec<ApiSpec>, ApigenError> {
        let mut prompt = String::from(
            "Task: requirement analysis. List general-purpose APIs (app.verb, typed params) these desktop tasks need.\n\
             Reply with a JSON array of {\"name\",\"params\":[{\"name\",\"type\",\"required\"}],\"doc\"}.\nExamples:\n",
        );
        for e in examples {
            prompt.push_str("- ");
            prompt.push_str(e);
            prompt.push('\n');
        }
        self.ask("*", prompt)
    }

    fn implement(&self, spec: &ApiSpec, feedback: Option<&FailureReport>) -> Result<ApiArtifact, ApigenError> {
        let mut prompt = format!(
            "Task: implement API. Reply with one JSON artifact {{\"name\",\"params\",\"guards\",\"body\",\"error_handling\",\"logging\"}}.\nSpec: {}\n",
            serde_json::to_string(spec).expect("spec serializes")
        );
        if let Some(f) = feedback {
            prompt.push_str(&format!("Previous attempt failed tests:\n{f}\n"));
        }
        self.ask(&spec.name, prompt)
    }

    fn tests(&self, spec: &ApiSpec) -> Result<Vec<TestCase>, ApigenError> {
        let prompt = format!(
            "Task: generate unit tests. Reply with a JSON array of {{\"api\",\"args\",\"expected\"}}.\nSpec: {}\n",
            serde_json::to_string(spec).expect("spec serializes")
        );
        self.ask(&spec.name, prompt)
    }
}
