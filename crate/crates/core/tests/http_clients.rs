mod common;

use std::collections::HashMap;

use factcheck::corpus::Dataset;
use factcheck::evidence::{
    GoogleProvider, GoogleProviderConfig, Retriever, RetrieverConfig, RetryPolicy, SearchCache, SearchQuery,
};
use factcheck::inference::{Backend, DecodeParams, HttpBackend, HttpBackendConfig, predict_prompts, BatchOptions, PromptJob};

const SEARCH_BODY: &str = r#"{"items":[
  {"title":"A","link":"https://www.example.com/a","snippet":"first","pagemap":{"metatags":[{"article:published_time":"2020-01-02T00:00:00Z"}]}},
  {"title":"B","link":"https://news.example.org/b","snippet":"second"}
]}"#;

fn provider(base: &str) -> GoogleProvider {
    let config = GoogleProviderConfig { endpoint: format!("{base}/customsearch/v1"), engine_id: "engine-7".into(), timeout_ms: 5_000 };
    GoogleProvider::with_key(config, "secret-key").unwrap()
}

fn quick_retry() -> RetrieverConfig {
    RetrieverConfig { retry: RetryPolicy { attempts: 3, base_delay_ms: 1 }, requests_per_second: 0.0, ..RetrieverConfig::default() }
}

#[test]
fn search_request_carries_query_parameters_and_warm_cache_skips_network() {
    let (base, server) = common::serve(vec![(200, SEARCH_BODY.into())]);
    let cache_dir = tempfile::tempdir().unwrap();
    let query = SearchQuery::new("moon landing hoax", 7, "c-1").unwrap();

    let cold = Retriever::new(Box::new(provider(&base)), Some(SearchCache::open(cache_dir.path()).unwrap()), quick_retry());
    let first = cold.search(&query).unwrap();
    assert!(!first.from_cache);
    assert_eq!(first.results.len(), 2);
    assert_eq!(first.results[0].source_domain, "example.com");
    assert_eq!(cold.network_calls(), 1);

    let seen = server.join().unwrap();
    assert_eq!(seen[0].method, "GET");
    let url = url::Url::parse(&format!("{base}{}", seen[0].target)).unwrap();
    assert_eq!(url.path(), "/customsearch/v1");
    let params: HashMap<_, _> = url.query_pairs().into_owned().collect();
    assert_eq!(params["q"], "moon landing hoax");
    assert_eq!(params["num"], "7");
    assert_eq!(params["key"], "secret-key");
    assert_eq!(params["cx"], "engine-7");

    // The server is gone; only the cache can answer.
    let warm = Retriever::new(Box::new(provider(&base)), Some(SearchCache::open(cache_dir.path()).unwrap()), quick_retry());
    let again = warm.search(&query).unwrap();
    assert!(again.from_cache);
    assert_eq!(again.results, first.results);
    assert_eq!(again.retrieved_at, first.retrieved_at);
    assert_eq!(warm.network_calls(), 0);
}

#[test]
fn search_retries_server_errors_then_succeeds() {
    let (base, server) = common::serve(vec![(503, "{}".into()), (429, "{}".into()), (200, SEARCH_BODY.into())]);
    let retriever = Retriever::new(Box::new(provider(&base)), None, quick_retry());
    let response = retriever.search(&SearchQuery::new("q", 5, "c").unwrap()).unwrap();
    assert_eq!(response.results.len(), 2);
    assert_eq!(retriever.network_calls(), 3);
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn search_client_errors_are_not_retried() {
    let (base, server) = common::serve(vec![(403, r#"{"error":"forbidden"}"#.into())]);
    let retriever = Retriever::new(Box::new(provider(&base)), None, quick_retry());
    let err = retriever.search(&SearchQuery::new("q", 5, "c").unwrap()).unwrap_err();
    assert!(err.to_string().contains("403"), "{err}");
    assert!(!err.to_string().contains("secret-key"));
    assert_eq!(retriever.network_calls(), 1);
    server.join().unwrap();
}

#[test]
fn offline_cache_miss_fails_without_network() {
    let cache_dir = tempfile::tempdir().unwrap();
    let cfg = RetrieverConfig { offline: true, ..quick_retry() };
    let retriever =
        Retriever::new(Box::new(provider("http://127.0.0.1:9")), Some(SearchCache::open(cache_dir.path()).unwrap()), cfg);
    assert!(retriever.search(&SearchQuery::new("q", 5, "c").unwrap()).is_err());
    assert_eq!(retriever.network_calls(), 0);
}

fn backend(base: &str) -> HttpBackend {
    let config = HttpBackendConfig {
        base_url: format!("{base}/v1"),
        model: "tuned-7b".into(),
        timeout_ms: 5_000,
        attempts: 2,
        retry_base_delay_ms: 1,
        max_concurrency: 1,
    };
    HttpBackend::new(config, Some("tok".into())).unwrap()
}

#[test]
fn completion_request_shape_and_response_text() {
    let (base, server) = common::serve(vec![(200, r#"{"choices":[{"text":" mostly true"}]}"#.into())]);
    let decode = DecodeParams { max_new_tokens: 8, temperature: 0.0, stop_sequences: vec!["\n".into()] };
    let text = backend(&base).generate("c1", "### Instruction:\nx\n### Response:\n", &decode).unwrap();
    assert_eq!(text, " mostly true");

    let seen = server.join().unwrap();
    assert_eq!(seen[0].method, "POST");
    assert_eq!(seen[0].target, "/v1/completions");
    assert_eq!(seen[0].header("authorization"), Some("Bearer tok"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "tuned-7b");
    assert_eq!(body["max_tokens"], 8);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["stop"], serde_json::json!(["\n"]));
    assert!(body["prompt"].as_str().unwrap().ends_with("### Response:\n"));
}

#[test]
fn completion_retries_then_records_failure_per_claim() {
    let (base, server) = common::serve(vec![
        (500, "{}".into()),
        (200, r#"{"choices":[{"text":"false"}]}"#.into()),
        (500, "{}".into()),
        (500, "{}".into()),
    ]);
    let jobs: Vec<PromptJob> = ["a", "b"]
        .iter()
        .map(|id| PromptJob { claim_id: id.to_string(), dataset: Dataset::Rawfc, prompt: "p".into() })
        .collect();
    let verdicts = predict_prompts(&jobs, &backend(&base), &DecodeParams::default(), BatchOptions::default()).unwrap();
    assert_eq!(verdicts[0].label.map(|l| l.canonical_name()), Some("false"));
    assert!(verdicts[1].label.is_none());
    assert!(verdicts[1].error.as_deref().unwrap().contains("500"));
    assert_eq!(server.join().unwrap().len(), 4);
}

#[test]
fn malformed_completion_is_an_error() {
    let (base, server) = common::serve(vec![(200, r#"{"nope":1}"#.into())]);
    assert!(backend(&base).generate("c", "p", &DecodeParams::default()).is_err());
    server.join().unwrap();
}
