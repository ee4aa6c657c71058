//! Scripted, deterministic backend for tests and replays.

use std::collections::HashMap;
use std::path::Path;

use crate::prompting::Prompt;
use crate::scalar::Real;

use super::{Backend, BackendError, BackendKind, BackendResponse, GenerationRequest, TokenDistribution};

/// Prompt fingerprint → scripted distribution.
pub type MockScript<F> = HashMap<String, TokenDistribution<F>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MockFallback {
    /// Equal log-probability for every label in the prompt.
    #[default]
    Uniform,
    /// An empty distribution, i.e. no prediction.
    Empty,
}

pub fn mock_generate<F: Real>(prompt: &Prompt, script: &MockScript<F>, fallback: MockFallback) -> BackendResponse<F> {
    if let Some(dist) = script.get(&prompt.fingerprint()) {
        return BackendResponse::Distribution(dist.clone());
    }
    let dist = match fallback {
        MockFallback::Empty => TokenDistribution::default(),
        MockFallback::Uniform => {
            let n = prompt.labels.len().max(1);
            let lp = -F::from_count(n).ln();
            TokenDistribution::new(prompt.labels.iter().map(|(label, _)| (label.to_string(), lp)))
        }
    };
    BackendResponse::Distribution(dist)
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend<F: Real> {
    script: MockScript<F>,
    fallback: MockFallback,
}

impl<F: Real> MockBackend<F> {
    pub fn new(script: MockScript<F>, fallback: MockFallback) -> Self {
        Self { script, fallback }
    }

    /// Loads a JSON object mapping fingerprints to `[[token, logprob], ...]`.
    pub fn from_json_file(path: &Path, fallback: MockFallback) -> Result<Self, BackendError>
    where
        F: serde::de::DeserializeOwned,
    {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockScript<F> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("bad mock script {}: {e}", path.display())))?;
        Ok(Self::new(script, fallback))
    }
}

impl<F: Real> Backend<F> for MockBackend<F> {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError> {
        Ok(mock_generate(request.prompt, &self.script, self.fallback))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::ForecastQuery;
    use crate::kg_store::EntityId;
    use crate::prompting::{LabelMap, PromptStyle};

    fn prompt(text: &str, n: u32) -> Prompt {
        let mut labels = LabelMap::new();
        for e in 0..n {
            labels.assign(EntityId(e + 10));
        }
        Prompt {
            text: text.into(),
            labels,
            query: ForecastQuery::tail(0, 0, 1, [10]),
            style: PromptStyle::Index,
        }
    }

    #[test]
    fn scripted_entry_returned() {
        let p = prompt("x", 2);
        let mut script = MockScript::new();
        script.insert(p.fingerprint(), TokenDistribution::new([(" 0", -0.1)]));
        match mock_generate::<f64>(&p, &script, MockFallback::Uniform) {
            BackendResponse::Distribution(d) => assert_eq!(d.entries(), &[(" 0".to_string(), -0.1)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uniform_fallback_covers_labels() {
        let p = prompt("y", 4);
        match mock_generate::<f64>(&p, &MockScript::new(), MockFallback::Uniform) {
            BackendResponse::Distribution(d) => {
                assert_eq!(d.len(), 4);
                assert!(d.entries().iter().all(|e| (e.1 + 4f64.ln()).abs() < 1e-12));
            }
            other => panic!("{other:?}"),
        }
    }
}
