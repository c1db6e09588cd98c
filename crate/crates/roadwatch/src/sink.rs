//! Board publishing over `file://` and `tcp://` sinks, one JSON record per
//! line.

use std::fs::OpenOptions;
use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use roadwatch_core::display::{AlertMessage, PublishGate};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub enum SinkAddress {
    File(PathBuf),
    Tcp(String),
}

impl SinkAddress {
    pub fn parse(endpoint: &str, base: &Path) -> Option<Self> {
        if let Some(path) = endpoint.strip_prefix("file://") {
            Some(SinkAddress::File(base.join(path)))
        } else {
            endpoint.strip_prefix("tcp://").map(|a| SinkAddress::Tcp(a.into()))
        }
    }
}

#[derive(Debug, Error)]
#[error("endpoint {endpoint} unavailable after {attempts} attempt(s): {source}")]
pub struct EndpointUnavailable {
    pub endpoint: String,
    pub attempts: u32,
    #[source]
    pub source: std::io::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Published,
    Suppressed,
}

/// Per-board publisher. A tcp connection is opened lazily and reused until
/// a write fails.
pub struct Publisher {
    address: SinkAddress,
    gate: PublishGate,
    retries: u32,
    backoff: Duration,
    stream: Option<TcpStream>,
}

impl Publisher {
    pub fn new(address: SinkAddress, retries: u32, backoff: Duration) -> Self {
        Publisher {
            address,
            gate: PublishGate::new(),
            retries,
            backoff,
            stream: None,
        }
    }

    pub fn address(&self) -> &SinkAddress {
        &self.address
    }

    pub fn publish(&mut self, message: &AlertMessage) -> Result<Outcome, EndpointUnavailable> {
        if !self.gate.should_publish(message) {
            return Ok(Outcome::Suppressed);
        }
        let mut line = serde_json::to_vec(message).expect("messages always serialize");
        line.push(b'\n');
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.write(&line) {
                Ok(()) => {
                    self.gate.mark_published(message);
                    return Ok(Outcome::Published);
                }
                Err(source) if attempt > self.retries => {
                    return Err(EndpointUnavailable {
                        endpoint: self.describe(),
                        attempts: attempt,
                        source,
                    });
                }
                Err(_) => thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1)),
            }
        }
    }

    fn describe(&self) -> String {
        match &self.address {
            SinkAddress::File(p) => format!("file://{}", p.display()),
            SinkAddress::Tcp(a) => format!("tcp://{a}"),
        }
    }

    fn write(&mut self, line: &[u8]) -> std::io::Result<()> {
        match &self.address {
            SinkAddress::File(path) => {
                let mut file = OpenOptions::new().create(true).append(true).open(path)?;
                file.write_all(line)?;
                file.flush()
            }
            SinkAddress::Tcp(addr) => {
                if self.stream.is_none() {
                    let target = addr
                        .to_socket_addrs()?
                        .next()
                        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "address did not resolve"))?;
                    self.stream = Some(TcpStream::connect_timeout(&target, CONNECT_TIMEOUT)?);
                }
                let stream = self.stream.as_mut().expect("connected above");
                let result = stream.write_all(line).and_then(|()| stream.flush());
                if result.is_err() {
                    self.stream = None;
                }
                result
            }
        }
    }
}
