use std::io::Read;
use std::sync::Arc;
use std::thread;

use memegen_core::Error;
use serde::Deserialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::pipeline::{ascii_json, MemePipeline};

pub const METADATA_HEADER: &str = "X-Meme-Metadata";
const MAX_BODY: u64 = 64 * 1024;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    text: String,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    /// ASCII JSON metadata, set on success only.
    pub metadata: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    fn error(status: u16, message: impl std::fmt::Display) -> Self {
        let body = ascii_json(&serde_json::json!({ "error": message.to_string() })).unwrap_or_default();
        Reply {
            status,
            content_type: "application/json",
            metadata: None,
            body: body.into_bytes(),
        }
    }
}

/// Routes one request; everything but `POST /generate` is rejected.
pub fn handle(pipeline: &MemePipeline, method: &str, url: &str, body: &[u8]) -> Reply {
    let path = url.split('?').next().unwrap_or(url);
    if path != "/generate" {
        return Reply::error(404, format!("no route for {path}"));
    }
    if !method.eq_ignore_ascii_case("POST") {
        return Reply::error(405, "use POST");
    }
    let req: GenerateRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return Reply::error(400, format!("bad request body: {e}")),
    };
    let seed = req.seed.unwrap_or(pipeline.seed());
    match pipeline.generate_with_seed(&req.text, seed) {
        Ok(meme) => match ascii_json(&meme.metadata) {
            Ok(meta) => Reply {
                status: 200,
                content_type: "image/png",
                metadata: Some(meta),
                body: meme.png,
            },
            Err(e) => Reply::error(500, e),
        },
        Err(e) => {
            let status = match e.error {
                Error::EmptyInput | Error::CaptionTooLong => 400,
                _ => 500,
            };
            Reply::error(status, e)
        }
    }
}

fn respond(pipeline: &MemePipeline, mut request: Request) {
    let method = request.method().clone();
    let url = request.url().to_string();
    let mut body = Vec::new();
    let read = request.as_reader().take(MAX_BODY + 1).read_to_end(&mut body);
    let reply = match read {
        Err(e) => Reply::error(400, e),
        Ok(_) if body.len() as u64 > MAX_BODY => Reply::error(413, "body too large"),
        Ok(_) => handle(pipeline, method_str(&method), &url, &body),
    };
    log::info!("{method} {url} -> {}", reply.status);
    let mut response = Response::from_data(reply.body).with_status_code(reply.status);
    if let Ok(h) = Header::from_bytes("Content-Type", reply.content_type) {
        response.add_header(h);
    }
    if let Some(meta) = reply.metadata {
        if let Ok(h) = Header::from_bytes(METADATA_HEADER, meta) {
            response.add_header(h);
        }
    }
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}

fn method_str(m: &Method) -> &str {
    m.as_str()
}

pub fn bind(addr: &str) -> std::io::Result<Server> {
    Server::http(addr).map_err(std::io::Error::other)
}

/// Serves requests on `workers` threads until the server is unblocked.
pub fn run(server: Arc<Server>, pipeline: Arc<MemePipeline>, workers: usize) {
    let handles: Vec<_> = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let pipeline = Arc::clone(&pipeline);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    respond(&pipeline, request);
                }
            })
        })
        .collect();
    for h in handles {
        let _ = h.join();
    }
}
