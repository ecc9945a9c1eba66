use std::sync::{Arc, Condvar, Mutex};

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingProviderInfo, Result};

/// Counting semaphore bounding concurrent calls to one provider.
#[derive(Debug, Clone)]
pub struct InFlightLimit {
    inner: Arc<(Mutex<LimitState>, Condvar)>,
}

#[derive(Debug)]
struct LimitState {
    in_flight: usize,
    max: usize,
    peak: usize,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            inner: Arc::new((
                Mutex::new(LimitState {
                    in_flight: 0,
                    max: max.max(1),
                    peak: 0,
                }),
                Condvar::new(),
            )),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let (lock, cvar) = &*self.inner;
        let mut state = lock.lock().expect("limit mutex poisoned");
        while state.in_flight >= state.max {
            state = cvar.wait(state).expect("limit mutex poisoned");
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
        Permit { limit: self }
    }

    /// Highest number of simultaneous permits observed.
    pub fn peak(&self) -> usize {
        self.inner.0.lock().expect("limit mutex poisoned").peak
    }

    pub fn max(&self) -> usize {
        self.inner.0.lock().expect("limit mutex poisoned").max
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let (lock, cvar) = &*self.limit.inner;
        let mut state = lock.lock().expect("limit mutex poisoned");
        state.in_flight -= 1;
        cvar.notify_one();
    }
}

/// Provider wrapper that holds a permit for the duration of each call.
pub struct Limited<P> {
    inner: P,
    limit: InFlightLimit,
}

impl<P> Limited<P> {
    pub fn new(inner: P, max_in_flight: usize) -> Self {
        Self {
            inner,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    pub fn limit(&self) -> &InFlightLimit {
        &self.limit
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for Limited<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let _permit = self.limit.acquire();
        self.inner.complete(request)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Limited<P> {
    fn info(&self) -> Result<EmbeddingProviderInfo> {
        self.inner.info()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let _permit = self.limit.acquire();
        self.inner.embed_batch(texts)
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.inner.count_tokens(text)
    }
}
