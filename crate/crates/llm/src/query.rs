//! Repeated sampling of a context prompt into an empirical distribution.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use cuefuse_core::emotion::RatingSet;
use cuefuse_core::CategoricalDistribution;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, CompletionRequest};
use crate::cache::{prompt_key, CacheEntry, ResponseCache};
use crate::prompt::{build_context_prompt, parse_label, ContextQuerySpec};
use crate::LlmError;

pub const DEFAULT_MAX_RETRIES: usize = 3;
pub const DEFAULT_MAX_CONCURRENCY: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryOptions {
    /// Retries after the first unparseable answer.
    pub max_retries: usize,
    pub max_concurrency: usize,
    /// Token-bucket refill rate; `None` disables limiting.
    pub requests_per_second: Option<f64>,
    pub burst: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            max_retries: DEFAULT_MAX_RETRIES,
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            requests_per_second: None,
            burst: DEFAULT_MAX_CONCURRENCY,
            cache_dir: None,
        }
    }
}

/// Token bucket shared by the worker threads.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64, burst: usize) -> Self {
        let capacity = burst.max(1) as f64;
        RateLimiter {
            rate: requests_per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.rate;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryResult {
    pub prompt_sha256: String,
    pub distribution: CategoricalDistribution<f64>,
    /// Parsed label of every sample, by sample index.
    pub labels: Vec<String>,
    pub cache_hits: usize,
    pub backend_calls: usize,
}

struct Sampler<'a> {
    spec: &'a ContextQuerySpec,
    prompt: &'a str,
    key: &'a str,
    backend: &'a dyn Backend,
    cache: Option<&'a ResponseCache>,
    limiter: Option<&'a RateLimiter>,
    max_retries: usize,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl Sampler<'_> {
    fn sample(&self, index: usize) -> Result<usize, LlmError> {
        let task = self.spec.task;
        if let Some(cache) = self.cache {
            if let Some(entry) = cache.get(self.key, index)? {
                if let Some(i) = parse_label(&entry.label, task) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(i);
                }
                tracing::warn!(sample = index, "cached label `{}` no longer parses; re-querying", entry.label);
            }
        }
        let mut raw = String::new();
        for attempt in 0..=self.max_retries {
            if let Some(limiter) = self.limiter {
                limiter.acquire();
            }
            raw = self.backend.complete(&CompletionRequest {
                prompt: self.prompt,
                outcome: self.spec.outcome,
                task,
                sample_index: index,
                attempt,
            })?;
            self.calls.fetch_add(1, Ordering::Relaxed);
            if let Some(i) = parse_label(&raw, task) {
                if let Some(cache) = self.cache {
                    cache.put(&CacheEntry {
                        prompt_sha256: self.key.to_string(),
                        sample_index: index,
                        raw: raw.clone(),
                        label: task.space().labels()[i].clone(),
                    })?;
                }
                return Ok(i);
            }
            tracing::debug!(sample = index, attempt, "unparseable completion: {raw:?}");
        }
        Err(LlmError::UnparseableAfterRetries {
            sample_index: index,
            attempts: self.max_retries + 1,
            raw,
        })
    }
}

/// Issues `spec.n_samples` completions (cache first), parses each to one
/// label and returns their empirical distribution.
pub fn query_context(
    spec: &ContextQuerySpec,
    backend: &dyn Backend,
    options: &QueryOptions,
) -> Result<QueryResult, LlmError> {
    spec.validate()?;
    let prompt = build_context_prompt(spec);
    let key = prompt_key(&backend.id(), &prompt);
    let cache = options.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
    let limiter = options
        .requests_per_second
        .filter(|r| *r > 0.0)
        .map(|r| RateLimiter::new(r, options.burst));
    let sampler = Sampler {
        spec,
        prompt: &prompt,
        key: &key,
        backend,
        cache: cache.as_ref(),
        limiter: limiter.as_ref(),
        max_retries: options.max_retries,
        calls: AtomicUsize::new(0),
        hits: AtomicUsize::new(0),
    };

    let n = spec.n_samples;
    let results: Mutex<Vec<Option<Result<usize, LlmError>>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = options.max_concurrency.clamp(1, n);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = sampler.sample(i);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });

    let results = results.into_inner().unwrap_or_else(|p| p.into_inner());
    let mut indices = Vec::with_capacity(n);
    for r in results {
        match r {
            Some(Ok(i)) => indices.push(i),
            Some(Err(e)) => return Err(e),
            // skipped after another sample failed; that error comes later
            None => {}
        }
    }
    assert_eq!(indices.len(), n, "a sample was skipped without a recorded failure");
    let space = spec.task.space();
    let labels = indices.iter().map(|&i| space.labels()[i].clone()).collect();
    let mut counted = indices;
    counted.sort_unstable();
    let ratings = RatingSet::from_indices(space, counted).expect("parsed indices are in range");
    let distribution = CategoricalDistribution::from_ratings(&ratings).expect("non-empty ratings");
    let (cache_hits, backend_calls) = (sampler.hits.into_inner(), sampler.calls.into_inner());
    Ok(QueryResult {
        prompt_sha256: key,
        distribution,
        labels,
        cache_hits,
        backend_calls,
    })
}

pub fn query_context_distribution(
    spec: &ContextQuerySpec,
    backend: &dyn Backend,
    options: &QueryOptions,
) -> Result<CategoricalDistribution<f64>, LlmError> {
    query_context(spec, backend, options).map(|r| r.distribution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_spaces_out_requests_beyond_the_burst() {
        let limiter = RateLimiter::new(200.0, 1);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        // 4 refills at 200/s take at least 20 ms
        assert!(start.elapsed() >= Duration::from_millis(18));
    }

    #[test]
    fn burst_is_immediate() {
        let limiter = RateLimiter::new(0.001, 3);
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
