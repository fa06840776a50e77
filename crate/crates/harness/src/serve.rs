//! Stream service loop.
//!
//! One state machine per process; connections are served on their own
//! threads and serialized at the state machine's lock, one request at a
//! time.

use std::io::{self, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use thiserror::Error;

use crate::envelope::read_envelope;
use crate::service::{protocol_error, Role, Service};
use crate::world::ConfigError;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

pub fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).map_err(|source| ServeError::BindFailure {
        addr: addr.to_string(),
        source,
    })
}

fn connection(stream: TcpStream, service: Arc<Mutex<Box<dyn Service>>>, role: Role) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let reply = match read_envelope(&mut reader) {
            Ok(None) => return Ok(()),
            Ok(Some(req)) => service.lock().expect("service lock").handle(&req),
            Err(e) if e.recoverable() => protocol_error(role, 0, &e.to_string()),
            Err(_) => return Ok(()),
        };
        writer.write_all(reply.encode().as_bytes())?;
        writer.flush()?;
    }
}

/// Serves `service` on `listener` until the process ends.
pub fn serve(listener: TcpListener, service: Box<dyn Service>) -> Result<(), ServeError> {
    let role = service.role();
    let shared = Arc::new(Mutex::new(service));
    for stream in listener.incoming() {
        let stream = stream?;
        let shared = Arc::clone(&shared);
        thread::spawn(move || {
            let _ = connection(stream, shared, role);
        });
    }
    Ok(())
}

/// Serves on an ephemeral local port from a background thread.
pub fn spawn_local(service: Box<dyn Service>) -> Result<SocketAddr, ServeError> {
    let listener = bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || {
        let _ = serve(listener, service);
    });
    Ok(addr)
}
