//! Line-delimited JSON transport for [`ValidationService`].
//!
//! Each request is one JSON object with an `op` field; each response is one
//! line `{"ok":true,"result":...}` or `{"ok":false,"error":"..."}`. The
//! `asset` op answers with a header line `{"ok":true,"bytes":N}` followed by
//! exactly N raw bytes.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{AnnotationRecord, SplitId, ValidationService};
use crate::error::Result;

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Register { annotator: String },
    NextTask { annotator: String },
    Submit { record: AnnotationRecord },
    Progress,
    Report,
    Export { split: String },
    Asset { path: String },
    Compact,
}

enum Reply {
    Json(Value),
    Bytes(Vec<u8>),
}

fn ok(v: impl serde::Serialize) -> Result<Reply> {
    Ok(Reply::Json(serde_json::to_value(v).expect("response serialises")))
}

fn dispatch(service: &ValidationService, req: Request) -> Result<Reply> {
    match req {
        Request::Register { annotator } => {
            service.register(&annotator)?;
            ok(json!({"annotator": annotator}))
        }
        Request::NextTask { annotator } => ok(service.next_task(&annotator)?),
        Request::Submit { record } => ok(service.submit(record)?),
        Request::Progress => ok(service.progress()),
        Request::Report => ok(service.report()?),
        Request::Export { split } => ok(service.export(split.parse::<SplitId>()?)?),
        Request::Asset { path } => Ok(Reply::Bytes(service.asset(&path)?)),
        Request::Compact => ok(service.compact()?.map(|p| p.display().to_string())),
    }
}

/// Answers one request line; the returned bytes include the trailing newline
/// (and the raw payload for assets).
pub fn handle_line(service: &ValidationService, line: &str) -> Vec<u8> {
    let reply = serde_json::from_str::<Request>(line)
        .map_err(|e| format!("bad request: {e}"))
        .and_then(|req| dispatch(service, req).map_err(|e| e.to_string()));
    let mut out = match reply {
        Ok(Reply::Json(result)) => json!({"ok": true, "result": result}).to_string().into_bytes(),
        Ok(Reply::Bytes(bytes)) => {
            let mut head = json!({"ok": true, "bytes": bytes.len()}).to_string().into_bytes();
            head.push(b'\n');
            head.extend(bytes);
            return head;
        }
        Err(msg) => json!({"ok": false, "error": msg}).to_string().into_bytes(),
    };
    out.push(b'\n');
    out
}

/// Serves requests until the reader is exhausted.
pub fn serve_connection<R: BufRead, W: Write>(service: &ValidationService, reader: R, mut writer: W) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writer.write_all(&handle_line(service, &line))?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(service: Arc<ValidationService>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let service = Arc::clone(&service);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_connection(&service, reader, stream);
        });
    }
    Ok(())
}
