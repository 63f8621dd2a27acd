//! Channels between the mediator and a service.
//!
//! Both transports move the exact NDJSON lines that end up in transcripts, so
//! the in-process path exercises the same encoding as the network path.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::error::{Error, Result};

use super::{ProtocolMessage, Service};

pub trait Transport: Send + Sync {
    fn call(&self, msg: &ProtocolMessage) -> Result<ProtocolMessage>;
}

#[derive(Clone, Debug)]
pub struct InProcTransport {
    service: Arc<Service>,
}

impl InProcTransport {
    pub fn new(service: Arc<Service>) -> Self {
        InProcTransport { service }
    }
}

impl Transport for InProcTransport {
    fn call(&self, msg: &ProtocolMessage) -> Result<ProtocolMessage> {
        let line = self.service.handle_line(&msg.to_line());
        Ok(ProtocolMessage::from_line(&line)?)
    }
}

/// Line-oriented TCP front end, one thread per connection.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn spawn(service: Arc<Service>, addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let service = service.clone();
                thread::spawn(move || {
                    let _ = serve(&service, conn);
                });
            }
        });
        Ok(TcpServer {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        // wake the accept loop so it sees the flag
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(service: &Service, conn: TcpStream) -> std::io::Result<()> {
    let mut out = conn.try_clone()?;
    for line in BufReader::new(conn).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut resp = service.handle_line(&line);
        resp.push('\n');
        out.write_all(resp.as_bytes())?;
    }
    Ok(())
}

pub struct TcpTransport {
    conn: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(TcpTransport {
            conn: Mutex::new((BufReader::new(stream), writer)),
        })
    }
}

impl Transport for TcpTransport {
    fn call(&self, msg: &ProtocolMessage) -> Result<ProtocolMessage> {
        let mut guard = self.conn.lock().expect("connection lock poisoned");
        let (reader, writer) = &mut *guard;
        let mut line = msg.to_line();
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::ProtocolViolation("service closed the connection".into()));
        }
        Ok(ProtocolMessage::from_line(line.trim_end())?)
    }
}
