//! Token counting.
//!
//! Every limit in the runtime (context budget, segment budget, page sizes) is
//! expressed in counted tokens. The counter is pluggable so that a real
//! tokenizer can be swapped in; the default is a byte heuristic.

use std::fmt;
use std::sync::Arc;

/// Counts tokens in a piece of text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteHeuristic;

impl TokenCounter for ByteHeuristic {
    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// Shared handle to a counter.
#[derive(Clone)]
pub struct Counter(Arc<dyn TokenCounter>);

impl Counter {
    pub fn new(inner: impl TokenCounter + 'static) -> Self {
        Counter(Arc::new(inner))
    }

    pub fn count(&self, text: &str) -> u64 {
        self.0.count(text)
    }

    /// Longest prefix of `text` (on a char boundary) whose count is at most `budget`.
    pub fn prefix_within<'a>(&self, text: &'a str, budget: u64) -> &'a str {
        if self.count(text) <= budget {
            return text;
        }
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        // largest k with count(text[..bounds[k]]) <= budget
        let (mut lo, mut hi) = (0usize, bounds.len() - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.count(&text[..bounds[mid]]) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        &text[..bounds[lo]]
    }
}

impl Default for Counter {
    fn default() -> Self {
        Counter::new(ByteHeuristic)
    }
}

impl fmt::Debug for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Counter")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_heuristic_rounds_up() {
        let c = ByteHeuristic;
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("a"), 1);
        assert_eq!(c.count("abcd"), 1);
        assert_eq!(c.count("abcde"), 2);
        // counts bytes, not chars
        assert_eq!(c.count("éé"), 1);
        assert_eq!(c.count("ééé"), 2);
    }

    #[test]
    fn prefix_within_respects_budget_and_char_boundaries() {
        let c = Counter::default();
        let text = "héllo wörld, this is a test";
        for budget in 0..10 {
            let p = c.prefix_within(text, budget);
            assert!(c.count(p) <= budget);
            assert!(text.starts_with(p));
            if p.len() < text.len() {
                let next = text[p.len()..].chars().next().unwrap();
                let longer = &text[..p.len() + next.len_utf8()];
                assert!(c.count(longer) > budget);
            }
        }
    }
}
