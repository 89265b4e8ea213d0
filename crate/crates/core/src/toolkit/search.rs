use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ToolResponse, MAX_RESULTS};

pub const SEARCH_URL_ENV: &str = "NESTBROWSE_SEARCH_URL";
pub const SEARCH_KEY_ENV: &str = "NESTBROWSE_SEARCH_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    /// 1-based, contiguous within one query's results.
    pub rank: usize,
    pub url: String,
    pub title: String,
    pub snippet: String,
}

pub trait SearchProvider: Send + Sync {
    /// At most `limit` results for one query, best first.
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, String>;
}

/// A provider that has nothing configured; every query fails.
pub struct NoSearch;

pub static NO_SEARCH: NoSearch = NoSearch;

impl SearchProvider for NoSearch {
    fn search(&self, _query: &str, _limit: usize) -> Result<Vec<SearchResult>, String> {
        Err("no search provider configured".into())
    }
}

/// Run up to five queries; each gets its own result group, in input order.
pub fn exec_search(queries: &[String], provider: &dyn SearchProvider) -> ToolResponse {
    let mut groups = Vec::with_capacity(queries.len());
    let mut failures = Vec::new();
    for q in queries {
        let mut group = format!("Results for {}:", serde_json::to_string(q).expect("string"));
        match provider.search(q, MAX_RESULTS) {
            Ok(results) if results.is_empty() => group.push_str("\nno results"),
            Ok(mut results) => {
                results.truncate(MAX_RESULTS);
                for (i, r) in results.iter().enumerate() {
                    group.push_str(&format!("\n{}. {} — {}\n {}", i + 1, r.title, r.url, r.snippet));
                }
            }
            Err(e) => {
                group.push_str(&format!("\nsearch failed: {e}"));
                failures.push(e);
            }
        }
        groups.push(group);
    }
    if !queries.is_empty() && failures.len() == queries.len() {
        return ToolResponse::error(format!("ProviderUnavailable: {}", failures.join("; ")));
    }
    ToolResponse {
        ok: true,
        body: groups.join("\n\n"),
        meta: Default::default(),
    }
}

/// Search over HTTP: `GET {url}?q=<query>&count=<n>` with an optional bearer
/// key, answering `{"results": [{"title", "url", "snippet"}, ...]}`.
pub struct HttpSearch {
    url: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpSearch { url: url.into(), key, client })
    }

    pub fn from_env() -> Option<Result<Self, String>> {
        let url = std::env::var(SEARCH_URL_ENV).ok()?;
        Some(HttpSearch::new(url, std::env::var(SEARCH_KEY_ENV).ok()))
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, String> {
        let mut url = url::Url::parse(&self.url).map_err(|e| format!("bad search URL: {e}"))?;
        url.query_pairs_mut().append_pair("q", query).append_pair("count", &limit.to_string());
        let mut req = self.client.get(url);
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        let v: Value = resp.json().map_err(|e| e.to_string())?;
        let items = v["results"].as_array().ok_or("response has no \"results\" array")?;
        let s = |item: &Value, k: &str| item[k].as_str().unwrap_or_default().to_string();
        Ok(items
            .iter()
            .take(limit.min(MAX_RESULTS))
            .enumerate()
            .map(|(i, item)| SearchResult {
                rank: i + 1,
                url: if item["url"].is_string() { s(item, "url") } else { s(item, "link") },
                title: s(item, "title"),
                snippet: s(item, "snippet"),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl SearchProvider for Fixed {
        fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, String> {
            match query {
                "boom" => Err("backend down".into()),
                "none" => Ok(vec![]),
                _ => Ok((1..=15)
                    .take(limit)
                    .map(|i| SearchResult { rank: i, url: format!("/{query}/{i}"), title: format!("T{i}"), snippet: "s".into() })
                    .collect()),
            }
        }
    }

    #[test]
    fn groups_in_order_with_inline_failures() {
        let r = exec_search(&["a".into(), "none".into(), "boom".into()], &Fixed);
        assert!(r.ok);
        let groups: Vec<&str> = r.body.split("\n\n").collect();
        assert_eq!(groups.len(), 3);
        assert!(groups[0].starts_with("Results for \"a\":\n1. T1 — /a/1\n s"));
        assert_eq!(groups[0].lines().filter(|l| l.contains(" — ")).count(), 10);
        assert_eq!(groups[1], "Results for \"none\":\nno results");
        assert!(groups[2].contains("search failed: backend down"));
    }

    #[test]
    fn all_failing_is_provider_unavailable() {
        let r = exec_search(&["boom".into()], &Fixed);
        assert!(!r.ok);
        assert!(r.body.starts_with("ProviderUnavailable"));
    }
}
