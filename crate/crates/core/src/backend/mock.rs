use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};

type Responder = Box<dyn Fn(&GenerationRequest) -> Result<GenerationResponse, BackendError> + Send + Sync>;

/// Scriptable backend for tests.
///
/// A scripted mock pops responses in call order. A closure mock computes the
/// response from the request, which keeps concurrent callers deterministic.
pub struct MockBackend {
    id: String,
    script: Mutex<VecDeque<Result<GenerationResponse, BackendError>>>,
    responder: Option<Responder>,
    calls: AtomicUsize,
    seen: Mutex<Vec<GenerationRequest>>,
}

impl MockBackend {
    pub fn scripted(id: &str, script: impl IntoIterator<Item = Result<GenerationResponse, BackendError>>) -> Self {
        Self {
            id: id.to_string(),
            script: Mutex::new(script.into_iter().collect()),
            responder: None,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn from_fn<F>(id: &str, f: F) -> Self
    where
        F: Fn(&GenerationRequest) -> Result<GenerationResponse, BackendError> + Send + Sync + 'static,
    {
        Self {
            id: id.to_string(),
            script: Mutex::new(VecDeque::new()),
            responder: Some(Box::new(f)),
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.seen.lock().expect("mock poisoned").clone()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().expect("mock poisoned").push(request.clone());
        if let Some(f) = &self.responder {
            return f(request);
        }
        self.script
            .lock()
            .expect("mock poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Transport("mock script exhausted".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_echo() {
        let mock = MockBackend::scripted(
            "mock",
            [Ok(GenerationResponse::new(vec!["ok".into()], 10, vec![4], "mock"))],
        );
        let r = mock.generate(&GenerationRequest::greedy("p", 300)).unwrap();
        assert_eq!(r.completions, vec!["ok".to_string()]);
        assert_eq!(r.prompt_tokens, 10);
        assert_eq!(r.completion_tokens, vec![4]);
        assert!(mock.generate(&GenerationRequest::greedy("p", 300)).is_err());
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn closure_sees_request() {
        let mock = MockBackend::from_fn("m", |req| {
            Ok(GenerationResponse::new(
                (0..req.n).map(|i| format!("c{i}")).collect(),
                1,
                vec![1; req.n as usize],
                "m",
            ))
        });
        let r = mock
            .generate(&GenerationRequest::sampled("p", 0.8, 0.95, 20, 300))
            .unwrap();
        assert_eq!(r.completions.len(), 20);
        assert_eq!(mock.requests()[0].n, 20);
    }
}
