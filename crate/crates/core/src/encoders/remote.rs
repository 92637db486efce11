//! HTTP client for a remote encoder server.
//!
//! `POST {endpoint}/encode` with `{"modality": str, "items": [str]}` answers
//! `{"dim": int, "embeddings": [[float]]}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, Modality};
use crate::autograd::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub modality: Modality,
    pub dim: usize,
    pub timeout: Duration,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: usize,
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    modality: &'a str,
    items: &'a [String],
}

#[derive(Deserialize)]
struct EncodeResponse {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

pub struct RemoteProvider {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.modality.check_dim(cfg.dim)?;
        if cfg.batch_size == 0 || cfg.max_in_flight == 0 {
            return Err(Error::invalid("batch_size and max_in_flight must be positive"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn request_once(&self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/encode", self.cfg.endpoint.trim_end_matches('/'));
        let body = EncodeRequest {
            modality: self.cfg.modality.tag(),
            items,
        };
        let resp = self
            .client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Error::Transport(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!("server returned {status}")));
        }
        let parsed: EncodeResponse = resp
            .json()
            .map_err(|e| Error::Protocol(format!("bad response body: {e}")))?;
        if parsed.dim != self.cfg.dim {
            return Err(Error::Protocol(format!(
                "expected dimension {}, server reported {}",
                self.cfg.dim, parsed.dim
            )));
        }
        if parsed.embeddings.len() != items.len() {
            return Err(Error::Protocol(format!(
                "sent {} items, received {} embeddings",
                items.len(),
                parsed.embeddings.len()
            )));
        }
        for (i, e) in parsed.embeddings.iter().enumerate() {
            if e.len() != self.cfg.dim {
                return Err(Error::Protocol(format!("embedding {i} has length {}", e.len())));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::Protocol(format!("embedding {i} is not finite")));
            }
        }
        Ok(parsed.embeddings)
    }

    /// Retries transport failures; the request is idempotent.
    fn request(&self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut attempt = 0;
        loop {
            match self.request_once(items) {
                Err(e) if e.is_retryable() && attempt < self.cfg.retries => {
                    attempt += 1;
                    log::warn!("encode request failed ({e}), retry {attempt}/{}", self.cfg.retries);
                    std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                }
                other => return other,
            }
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn modality(&self) -> Modality {
        self.cfg.modality
    }

    fn output_dim(&self) -> usize {
        self.cfg.dim
    }

    fn encode_batch(&self, items: &[String]) -> Result<Mat> {
        let chunks: Vec<&[String]> = items.chunks(self.cfg.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_in_flight.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    if k >= chunks.len() {
                        break;
                    }
                    let r = self.request(chunks[k]);
                    *results[k].lock().expect("result slot") = Some(r);
                });
            }
        });
        let mut out = Mat::zeros((items.len(), self.cfg.dim));
        let mut row = 0;
        for slot in results {
            let rows = slot.into_inner().expect("result slot").expect("chunk processed")?;
            for r in rows {
                out.row_mut(row).iter_mut().zip(r).for_each(|(d, s)| *d = s);
                row += 1;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal server: answers each request with `respond(items)`.
    fn serve(
        respond: impl Fn(usize, &[String]) -> (u16, String) + Send + 'static,
        max_requests: usize,
    ) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().take(max_requests).enumerate() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let items: Vec<String> = serde_json::from_value(req["items"].clone()).unwrap();
                let (code, payload) = respond(n, &items);
                let reply = format!(
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}")
    }

    fn provider(endpoint: String, dim: usize, retries: usize) -> RemoteProvider {
        RemoteProvider::new(RemoteConfig {
            endpoint,
            modality: Modality::Satellite,
            dim,
            timeout: Duration::from_secs(5),
            batch_size: 2,
            max_in_flight: 1,
            retries,
        })
        .unwrap()
    }

    fn echo(dim: usize) -> impl Fn(usize, &[String]) -> (u16, String) {
        move |_, items| {
            let emb: Vec<Vec<f64>> = items
                .iter()
                .map(|t| (0..dim).map(|k| (t.len() * 10 + k) as f64).collect())
                .collect();
            (200, serde_json::json!({"dim": dim, "embeddings": emb}).to_string())
        }
    }

    #[test]
    fn rows_follow_input_order_across_chunks() {
        let p = provider(serve(echo(3), 2), 3, 0);
        let items: Vec<String> = ["a", "bb", "ccc"].iter().map(|s| s.to_string()).collect();
        let e = p.encode_batch(&items).unwrap();
        assert_eq!(e.column(0).to_vec(), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn dimension_mismatch_is_protocol_error() {
        let p = provider(serve(echo(4), 1), 3, 0);
        let err = p.encode_batch(&["x".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn server_errors_are_retried() {
        let ok = echo(2);
        let url = serve(
            move |n, items| if n == 0 { (503, "{}".into()) } else { ok(n, items) },
            2,
        );
        let p = provider(url, 2, 2);
        assert_eq!(p.encode_batch(&["q".to_string()]).unwrap().nrows(), 1);
    }

    #[test]
    fn unreachable_server_is_retryable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let p = provider(url, 2, 0);
        let err = p.encode_batch(&["q".to_string()]).unwrap_err();
        assert!(err.is_retryable());
    }
}
