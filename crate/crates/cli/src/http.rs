//! Remote service clients: the sentence-embedding service and the
//! solver/verifier endpoints.
//!
//! Wire contracts are minimal JSON over HTTP. `POST /embed {"texts":[..]}`
//! returns `{"vectors":[[..],..]}`; `POST /solve {"prompt":..}` returns
//! `{"answer":..}`; `POST /verify {"prompt":..}` returns the raw verdict
//! JSON that `parse_verification_response` accepts. Non-200 statuses are
//! transport errors; solver calls retry 3 times with exponential backoff.

use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use stratex_core::embedding::EMBEDDING_DIM;

pub const SOLVER_RETRIES: usize = 3;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

fn http_client() -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .context("building HTTP client")
}

/// Client for the sentence-embedding service.
pub struct EmbeddingClient {
    endpoint: String,
    batch_max: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingClient {
    pub fn new(endpoint: impl Into<String>, batch_max: usize) -> Result<Self> {
        Ok(EmbeddingClient {
            endpoint: endpoint.into(),
            batch_max: batch_max.max(1),
            client: http_client()?,
        })
    }

    /// Embed texts in input order. An empty input makes no network call.
    /// Batches are capped at the configured maximum and re-concatenated in
    /// order.
    pub fn fetch_remote(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_max) {
            let response = self
                .client
                .post(format!("{}/embed", self.endpoint))
                .json(&serde_json::json!({ "texts": chunk }))
                .send()
                .context("embedding service transport failure")?;
            if !response.status().is_success() {
                bail!("embedding service returned status {}", response.status());
            }
            let body: EmbedResponse = response
                .json()
                .context("malformed embedding service response")?;
            if body.vectors.len() != chunk.len() {
                bail!(
                    "embedding service returned {} vectors for {} texts",
                    body.vectors.len(),
                    chunk.len()
                );
            }
            for v in body.vectors {
                if v.len() != EMBEDDING_DIM {
                    bail!(
                        "embedding service returned dimension {}, expected {EMBEDDING_DIM}",
                        v.len()
                    );
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

fn post_with_retries(
    client: &reqwest::blocking::Client,
    url: &str,
    body: serde_json::Value,
) -> Result<String> {
    let mut delay = BACKOFF_BASE;
    let mut last_error = None;
    for attempt in 0..=SOLVER_RETRIES {
        if attempt > 0 {
            std::thread::sleep(delay);
            delay *= 2;
        }
        match client.post(url).json(&body).send() {
            Ok(response) if response.status().is_success() => {
                return response.text().context("reading response body");
            }
            Ok(response) => {
                last_error = Some(anyhow::anyhow!("status {}", response.status()));
            }
            Err(e) => last_error = Some(e.into()),
        }
    }
    Err(last_error.unwrap().context(format!("POST {url} failed after retries")))
}

/// Remote solver/verifier speaking the minimal JSON contract.
pub struct RemoteModelClient {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct SolveResponse {
    answer: String,
}

impl RemoteModelClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        Ok(RemoteModelClient {
            endpoint: endpoint.into(),
            client: http_client()?,
        })
    }

    pub fn solve(&self, prompt: &str) -> Result<String> {
        let text = post_with_retries(
            &self.client,
            &format!("{}/solve", self.endpoint),
            serde_json::json!({ "prompt": prompt }),
        )?;
        let body: SolveResponse =
            serde_json::from_str(&text).context("malformed solver response")?;
        Ok(body.answer)
    }

    /// Returns the raw verification JSON for `parse_verification_response`.
    pub fn verify(&self, prompt: &str) -> Result<String> {
        post_with_retries(
            &self.client,
            &format!("{}/verify", self.endpoint),
            serde_json::json!({ "prompt": prompt }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server answering each connection with a canned body.
    fn serve(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let _ = stream.read(&mut buf);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn fetch_remote_empty_input_makes_no_call() {
        // Unroutable endpoint: any network call would fail.
        let client = EmbeddingClient::new("http://127.0.0.1:1", 8).unwrap();
        assert!(client.fetch_remote(&[]).unwrap().is_empty());
    }

    #[test]
    fn fetch_remote_preserves_order() {
        let vectors: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                let mut v = vec![0.0; EMBEDDING_DIM];
                v[0] = i as f64 + 1.0;
                v
            })
            .collect();
        let body = serde_json::json!({ "vectors": vectors }).to_string();
        let endpoint = serve(vec![(200, body)]);
        let client = EmbeddingClient::new(endpoint, 8).unwrap();
        let got = client
            .fetch_remote(&["first".into(), "second".into()])
            .unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0][0], 1.0);
        assert_eq!(got[1][0], 2.0);
    }

    #[test]
    fn fetch_remote_rejects_wrong_dimension() {
        let body = serde_json::json!({ "vectors": [[0.0, 1.0]] }).to_string();
        let endpoint = serve(vec![(200, body)]);
        let client = EmbeddingClient::new(endpoint, 8).unwrap();
        let err = client.fetch_remote(&["text".into()]).unwrap_err().to_string();
        assert!(err.contains("dimension"), "{err}");
    }

    #[test]
    fn fetch_remote_non_200_is_a_transport_error() {
        let endpoint = serve(vec![(500, "{}".into())]);
        let client = EmbeddingClient::new(endpoint, 8).unwrap();
        let err = client.fetch_remote(&["text".into()]).unwrap_err().to_string();
        assert!(err.contains("status"), "{err}");
    }

    #[test]
    fn solver_retries_then_succeeds() {
        let ok = serde_json::json!({ "answer": "42" }).to_string();
        let endpoint = serve(vec![(500, "{}".into()), (200, ok)]);
        let client = RemoteModelClient::new(endpoint).unwrap();
        assert_eq!(client.solve("prompt").unwrap(), "42");
    }
}
