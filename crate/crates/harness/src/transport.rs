//! Request/reply transports and the recording client.

use std::any::Any;
use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::TcpStream;

use bandx_core::codec::Payload;
use thiserror::Error;

use crate::envelope::{read_envelope, Envelope};
use crate::service::{Role, Service};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no endpoint for role {0}")]
    NoEndpoint(Role),
    #[error("{role}: {reason}")]
    Link { role: Role, reason: String },
    #[error("{role} replied with sequence {got}, expected {want}")]
    Sequence { role: Role, want: u64, got: u64 },
}

pub trait Transport {
    fn call(&mut self, role: Role, req: &Envelope) -> Result<Envelope, TransportError>;
    fn into_any(self: Box<Self>) -> Box<dyn Any>;
}

/// All roles in this process. Requests and replies still pass through
/// the wire encoding so both transports see the same bytes.
pub struct InProcess {
    services: BTreeMap<Role, Box<dyn Service>>,
}

impl InProcess {
    pub fn new(services: BTreeMap<Role, Box<dyn Service>>) -> Self {
        InProcess { services }
    }

    pub fn service(&self, role: Role) -> Option<&dyn Service> {
        self.services.get(&role).map(|s| s.as_ref())
    }

    pub fn into_services(self) -> BTreeMap<Role, Box<dyn Service>> {
        self.services
    }
}

fn via_wire(role: Role, env: &Envelope) -> Result<Envelope, TransportError> {
    Envelope::decode(&env.encode()).map_err(|e| TransportError::Link {
        role,
        reason: e.to_string(),
    })
}

impl Transport for InProcess {
    fn call(&mut self, role: Role, req: &Envelope) -> Result<Envelope, TransportError> {
        let service = self.services.get_mut(&role).ok_or(TransportError::NoEndpoint(role))?;
        let reply = service.handle(&via_wire(role, req)?);
        via_wire(role, &reply)
    }

    fn into_any(self: Box<Self>) -> Box<dyn Any> {
        self
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// One stream connection per role.
#[derive(Default)]
pub struct TcpTransport {
    conns: BTreeMap<Role, Connection>,
}

impl TcpTransport {
    pub fn connect(endpoints: &BTreeMap<Role, String>) -> Result<TcpTransport, TransportError> {
        let mut conns = BTreeMap::new();
        for (&role, addr) in endpoints {
            let link = |e: std::io::Error| TransportError::Link {
                role,
                reason: format!("{addr}: {e}"),
            };
            let stream = TcpStream::connect(addr).map_err(link)?;
            stream.set_nodelay(true).map_err(link)?;
            let reader = BufReader::new(stream.try_clone().map_err(link)?);
            conns.insert(role, Connection { reader, writer: stream });
        }
        Ok(TcpTransport { conns })
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, role: Role, req: &Envelope) -> Result<Envelope, TransportError> {
        let conn = self.conns.get_mut(&role).ok_or(TransportError::NoEndpoint(role))?;
        let link = |reason: String| TransportError::Link { role, reason };
        conn.writer
            .write_all(req.encode().as_bytes())
            .and_then(|_| conn.writer.flush())
            .map_err(|e| link(e.to_string()))?;
        let reply = read_envelope(&mut conn.reader)
            .map_err(|e| link(e.to_string()))?
            .ok_or_else(|| link("connection closed".into()))?;
        if reply.seq != req.seq {
            return Err(TransportError::Sequence {
                role,
                want: req.seq,
                got: reply.seq,
            });
        }
        Ok(reply)
    }

    fn into_any(self: Box<Self>) -> Box<dyn Any> {
        self
    }
}

/// Numbers requests and appends every request and reply to a transcript.
pub struct Client {
    transport: Box<dyn Transport>,
    next_seq: u64,
    transcript: String,
    sent: Vec<(Role, String)>,
}

impl Client {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Client {
            transport,
            next_seq: 1,
            transcript: String::new(),
            sent: Vec::new(),
        }
    }

    pub fn call(&mut self, role: Role, msg_type: &str, sender: &str, payload: Payload) -> Result<Envelope, TransportError> {
        let req = Envelope::new(msg_type, sender, self.next_seq, payload);
        self.next_seq += 1;
        self.transcript.push_str(&req.encode());
        self.sent.push((role, req.msg_type.clone()));
        let reply = self.transport.call(role, &req)?;
        self.transcript.push_str(&reply.encode());
        Ok(reply)
    }

    /// Sends `req` as is, outside the transcript and the numbering.
    pub fn unrecorded(&mut self, role: Role, req: &Envelope) -> Result<Envelope, TransportError> {
        self.transport.call(role, req)
    }

    pub fn transcript(&self) -> &str {
        &self.transcript
    }

    /// Role and type of every request sent so far.
    pub fn sent(&self) -> &[(Role, String)] {
        &self.sent
    }

    pub fn into_transport(self) -> Box<dyn Transport> {
        self.transport
    }
}
