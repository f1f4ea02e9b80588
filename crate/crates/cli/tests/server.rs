use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use memegen::pipeline::{MemeMetadata, MemePipeline};
use memegen::server::{self, handle, METADATA_HEADER};
use memegen_core::caption::{CaptionConfig, CaptionModel};
use memegen_core::compose::{load_registry, RgbaImage};
use memegen_core::emotion::{build_textcnn_classifier, embedding_table, text_vocab, EmbeddingInit, TextCnnConfig};

fn pipeline() -> MemePipeline {
    let texts = ["we win the party", "so sad and alone", "i am furious", "i don't understand physics"];
    let vocab = text_vocab(&texts).unwrap();
    let table = embedding_table(&vocab, EmbeddingInit::Random { dim: 6 }, 1);
    let cfg = TextCnnConfig {
        filters_per_size: 2,
        fc1_out: 4,
        ..TextCnnConfig::new(6)
    };
    let emotion = build_textcnn_classifier(vocab, table, cfg, 1).unwrap();
    let caption = CaptionModel::from_pairs(
        &[("i don't understand physics", "wtf is my physics")],
        CaptionConfig { hidden: 8, max_len: 4 },
        1,
    )
    .unwrap();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/templates/templates.json");
    MemePipeline::new(emotion, caption, load_registry(manifest).unwrap(), 5).unwrap()
}

#[test]
fn handler_routes_and_validates() {
    let p = pipeline();
    assert_eq!(handle(&p, "GET", "/generate", b"").status, 405);
    assert_eq!(handle(&p, "POST", "/other", b"{}").status, 404);
    assert_eq!(handle(&p, "POST", "/generate", b"not json").status, 400);
    assert_eq!(handle(&p, "POST", "/generate", br#"{"txt": "hi"}"#).status, 400);
    let empty = handle(&p, "POST", "/generate", br#"{"text": " \t "}"#);
    assert_eq!(empty.status, 400);
    assert!(String::from_utf8(empty.body).unwrap().contains("empty input"));

    let ok = handle(&p, "POST", "/generate?x=1", br#"{"text": "i don't understand physics"}"#);
    assert_eq!(ok.status, 200);
    assert_eq!(ok.content_type, "image/png");
    let meta: MemeMetadata = serde_json::from_str(ok.metadata.as_deref().unwrap()).unwrap();
    assert_eq!(meta.seed, 5);
    let direct = p.generate("i don't understand physics").unwrap();
    assert_eq!(ok.body, direct.png);
    assert_eq!(meta, direct.metadata);

    let seeded = handle(&p, "POST", "/generate", br#"{"text": "i don't understand physics", "seed": 42}"#);
    let meta: MemeMetadata = serde_json::from_str(seeded.metadata.as_deref().unwrap()).unwrap();
    assert_eq!(meta.seed, 42);
}

fn request(addr: SocketAddr, method: &str, body: &str) -> (u16, Vec<(String, String)>, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} /generate HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8(raw[..split].to_vec()).unwrap();
    let mut lines = head.split("\r\n");
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let headers = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect();
    (status, headers, raw[split + 4..].to_vec())
}

#[test]
fn concurrent_requests_share_one_pipeline() {
    let srv = server::bind("127.0.0.1:0").unwrap();
    let addr = srv.server_addr().to_ip().unwrap();
    let p = Arc::new(pipeline());
    let expected = p.generate("so sad and alone").unwrap().png;
    {
        let p = Arc::clone(&p);
        thread::spawn(move || server::run(Arc::new(srv), p, 3));
    }

    let clients: Vec<_> = (0..6)
        .map(|_| thread::spawn(move || request(addr, "POST", r#"{"text": "so sad and alone"}"#)))
        .collect();
    for c in clients {
        let (status, headers, body) = c.join().unwrap();
        assert_eq!(status, 200);
        assert_eq!(body, expected);
        let meta = headers.iter().find(|(k, _)| *k == METADATA_HEADER.to_ascii_lowercase()).unwrap();
        let meta: MemeMetadata = serde_json::from_str(&meta.1).unwrap();
        assert_eq!(meta.input, "so sad and alone");
        RgbaImage::decode_png(&body).unwrap();
    }

    let (status, headers, body) = request(addr, "POST", r#"{"text": ""}"#);
    assert_eq!(status, 400);
    assert!(headers.iter().any(|(k, v)| k == "content-type" && v == "application/json"));
    let err: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert!(err["error"].as_str().unwrap().starts_with("input:"));
    assert_eq!(request(addr, "PUT", "{}").0, 405);
}
