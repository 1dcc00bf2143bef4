//! Local chat-completion stub server and a direct-sum DFT oracle.
#![allow(dead_code)]

pub mod oracle;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// What the stub does with one request.
#[derive(Clone, Debug)]
pub enum Reply {
    /// 200 with the last message's content as the completion.
    Echo,
    /// 200 with a fixed completion text.
    Text(String),
    /// Bare status with a body.
    Status(u16, String),
    /// Sleep, then answer.
    Delay(Duration, Box<Reply>),
}

#[derive(Clone, Debug)]
pub struct Captured {
    pub head: String,
    pub body: String,
}

pub struct Stub {
    pub url: String,
    log: Arc<Mutex<Vec<Captured>>>,
}

impl Stub {
    /// Answers the i-th request with `script[i]`, later ones with `fallback`.
    pub fn start(script: Vec<Reply>, fallback: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let counter = Arc::new(Mutex::new(0usize));
        let server_log = Arc::clone(&log);
        thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let log = Arc::clone(&server_log);
                let reply = {
                    let mut n = counter.lock().unwrap();
                    let r = script.get(*n).cloned().unwrap_or_else(|| fallback.clone());
                    *n += 1;
                    r
                };
                thread::spawn(move || serve(conn, reply, log));
            }
        });
        Self { url, log }
    }

    pub fn requests(&self) -> Vec<Captured> {
        self.log.lock().unwrap().clone()
    }
}

fn serve(conn: TcpStream, reply: Reply, log: Arc<Mutex<Vec<Captured>>>) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut head = String::new();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
        head.push_str(&line);
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = String::from_utf8_lossy(&body).into_owned();
    log.lock().unwrap().push(Captured {
        head,
        body: body.clone(),
    });
    respond(conn, &reply, &body);
}

fn respond(mut conn: TcpStream, reply: &Reply, request: &str) {
    let (status, payload) = match reply {
        Reply::Delay(d, inner) => {
            thread::sleep(*d);
            return respond(conn, inner, request);
        }
        Reply::Status(code, body) => (*code, body.clone()),
        Reply::Echo => {
            let v: serde_json::Value = serde_json::from_str(request).unwrap_or_default();
            let last = v["messages"]
                .as_array()
                .and_then(|m| m.last())
                .and_then(|m| m["content"].as_str())
                .unwrap_or_default()
                .to_owned();
            (200, completion(&last))
        }
        Reply::Text(t) => (200, completion(t)),
    };
    let _ = write!(
        conn,
        "HTTP/1.1 {status} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = conn.flush();
}

pub fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3, "total_tokens": 10}
    })
    .to_string()
}
