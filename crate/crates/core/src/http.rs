//! Live control endpoint.
//!
//! `GET /status` returns the current [`Status`] as JSON. `POST /pause` and
//! `POST /resume` freeze and unfreeze the loop between ticks, and
//! `POST /inject` takes a JSON [`Command`]. Once the run has finished every
//! POST answers 409.

use std::net::SocketAddr;
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

use crate::engine::{Control, Status};
use crate::scenario::Command;

/// A running control server.
pub struct ControlServer {
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    addr: SocketAddr,
}

impl ControlServer {
    /// Bind `addr` and serve on a background thread.
    pub fn start(addr: &str, status: Arc<Mutex<Status>>, tx: Sender<Control>) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("control server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let worker = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut req in worker.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (code, text) = route(req.method(), req.url(), &body, &status, &tx);
                let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
                let _ = req.respond(Response::from_string(text).with_status_code(code).with_header(header));
            }
        });
        Ok(Self { server, handle: Some(handle), addr: bound })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting requests and join the worker.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn error(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

/// Answer one request: status code and JSON body.
pub fn route(method: &Method, url: &str, body: &str, status: &Mutex<Status>, tx: &Sender<Control>) -> (u16, String) {
    let snapshot = status.lock().expect("status lock").clone();
    let path = url.split('?').next().unwrap_or(url);
    match (method, path) {
        (Method::Get, "/status") => (200, serde_json::to_string(&snapshot).expect("status serializes")),
        (Method::Post, "/pause" | "/resume" | "/inject") if snapshot.finished => (409, error("run finished")),
        (Method::Post, "/pause") => send(tx, Control::Pause),
        (Method::Post, "/resume") => send(tx, Control::Resume),
        (Method::Post, "/inject") => match serde_json::from_str::<Command>(body) {
            Ok(c) => send(tx, Control::Command(c)),
            Err(e) => (400, error(&e.to_string())),
        },
        (_, "/status" | "/pause" | "/resume" | "/inject") => (405, error("method not allowed")),
        _ => (404, error("not found")),
    }
}

fn send(tx: &Sender<Control>, c: Control) -> (u16, String) {
    match tx.send(c) {
        Ok(()) => (202, serde_json::json!({ "accepted": true }).to_string()),
        Err(_) => (409, error("run finished")),
    }
}
