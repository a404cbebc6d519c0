//! In-process HTTP server for exercising the wire clients in tests. Each
//! request's body is handed to the handler, which returns `(status, body)`;
//! the server counts requests so tests can assert how many calls were made.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

pub(crate) struct TestServer {
    server: Arc<Server>,
    port: u16,
    hits: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl TestServer {
    pub(crate) fn start<F>(handler: F) -> TestServer
    where
        F: Fn(String) -> (u16, String) + Send + 'static,
    {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind test server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let worker = {
            let server = Arc::clone(&server);
            let hits = Arc::clone(&hits);
            std::thread::spawn(move || {
                // recv() errors once unblock() is called; that ends the loop.
                while let Ok(mut request) = server.recv() {
                    hits.fetch_add(1, Ordering::SeqCst);
                    let mut body = String::new();
                    let _ = request.as_reader().read_to_string(&mut body);
                    let (status, payload) = handler(body);
                    let content_type: Header =
                        "Content-Type: application/json".parse().expect("static header");
                    let response = Response::from_string(payload)
                        .with_status_code(status)
                        .with_header(content_type);
                    let _ = request.respond(response);
                }
            })
        };
        TestServer { server, port, hits, worker: Some(worker) }
    }

    pub(crate) fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub(crate) fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
