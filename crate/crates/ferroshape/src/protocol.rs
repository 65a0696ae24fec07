//! Experiment protocol: newline-delimited JSON over TCP.
//!
//! Request:
//! `{"request_id":7,"b":[0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0],"reset_before":true}`
//!
//! Success:
//! `{"request_id":7,"status":"ok","sr":[..32..],"center":[x,y],"max_radius":3.0,"spread_factor":1.01}`
//!
//! Failure:
//! `{"request_id":7,"status":"error","error":{"code":"out_of_range","message":"..."}}`
//!
//! `request_id` is `null` when it could not be read from a malformed frame.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ferroshape_core::codec::encode_contour;
use ferroshape_core::plant::{Plant, PlantError, CENTERING_SECONDS, DEMAG_SECONDS, HOLD_SECONDS, RAMP_SECONDS};
use ferroshape_core::{Actuation, ShapeDescriptor, SEGMENTS, SOLENOIDS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default client timeout; one experiment with a reset takes about 13 s.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRequest {
    pub request_id: u64,
    pub b: [f64; SOLENOIDS],
    pub reset_before: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    OutOfRange,
    Malformed,
    PlantCollapse,
    Busy,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::OutOfRange => "out_of_range",
            ErrorCode::Malformed => "malformed",
            ErrorCode::PlantCollapse => "plant_collapse",
            ErrorCode::Busy => "busy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub sr: [f64; SEGMENTS],
    pub center: [f64; 2],
    pub max_radius: f64,
    pub spread_factor: f64,
}

impl Shape {
    pub fn descriptor(&self) -> ShapeDescriptor {
        ShapeDescriptor {
            ratios: self.sr,
            center: ferroshape_core::Point::new(self.center[0], self.center[1]),
            max_radius: self.max_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok(Shape),
    Error { error: ErrorBody },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResponse {
    pub request_id: Option<u64>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl ExperimentResponse {
    pub fn error(request_id: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            request_id,
            outcome: Outcome::Error {
                error: ErrorBody {
                    code,
                    message: message.into(),
                },
            },
        }
    }

    pub fn shape(&self) -> Option<&Shape> {
        match &self.outcome {
            Outcome::Ok(s) => Some(s),
            Outcome::Error { .. } => None,
        }
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match &self.outcome {
            Outcome::Ok(_) => None,
            Outcome::Error { error } => Some(error.code),
        }
    }
}

/// One frame: a JSON object followed by `\n`.
pub fn encode_frame<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("protocol types always serialize");
    s.push('\n');
    s
}

pub fn decode_request(line: &str) -> Result<ExperimentRequest, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
}

pub fn decode_response(line: &str) -> Result<ExperimentResponse, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
}

/// Best-effort `request_id` of a frame that failed to decode.
fn salvage_id(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()?
        .get("request_id")?
        .as_u64()
}

/// Per-connection bookkeeping.
#[derive(Debug, Default, Clone)]
pub struct Connection {
    last_id: Option<u64>,
}

/// The plant behind the protocol, plus the replay cache that makes execution
/// at-most-once per `request_id`. Survives client reconnects.
#[derive(Debug)]
pub struct Session {
    plant: Plant,
    accelerated: bool,
    last: Option<(u64, ExperimentResponse)>,
    executions: u64,
}

impl Session {
    /// `accelerated` advances the plant clock without sleeping.
    pub fn new(plant: Plant, accelerated: bool) -> Self {
        Self {
            plant,
            accelerated,
            last: None,
            executions: 0,
        }
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// Actuations actually applied to the plant.
    pub fn executions(&self) -> u64 {
        self.executions
    }

    pub fn handle_line(&mut self, conn: &mut Connection, line: &str) -> ExperimentResponse {
        match decode_request(line) {
            Ok(req) => self.handle(conn, &req),
            Err(e) => ExperimentResponse::error(salvage_id(line), ErrorCode::Malformed, e.to_string()),
        }
    }

    pub fn handle(&mut self, conn: &mut Connection, req: &ExperimentRequest) -> ExperimentResponse {
        let id = req.request_id;
        if let Some((cached_id, cached)) = &self.last {
            if *cached_id == id {
                conn.last_id = Some(id);
                return cached.clone();
            }
        }
        if let Some(prev) = conn.last_id {
            if id <= prev {
                return ExperimentResponse::error(
                    Some(id),
                    ErrorCode::Malformed,
                    format!("request_id {id} does not increase past {prev}"),
                );
            }
        }
        conn.last_id = Some(id);
        let response = self.execute(req);
        self.last = Some((id, response.clone()));
        response
    }

    fn execute(&mut self, req: &ExperimentRequest) -> ExperimentResponse {
        let id = Some(req.request_id);
        if let Some((i, v)) = req.b.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return ExperimentResponse::error(
                id,
                ErrorCode::OutOfRange,
                format!("b[{i}] = {v} outside [0, 1]"),
            );
        }
        let a = Actuation(req.b);
        if req.reset_before {
            self.plant.reset();
            self.pause(CENTERING_SECONDS + DEMAG_SECONDS);
        }
        let contour = match self.plant.apply_actuation(&a) {
            Ok(c) => c,
            Err(e @ PlantError::Collapse { .. }) => {
                return ExperimentResponse::error(id, ErrorCode::PlantCollapse, e.to_string())
            }
            Err(e) => return ExperimentResponse::error(id, ErrorCode::OutOfRange, e.to_string()),
        };
        self.executions += 1;
        self.pause(RAMP_SECONDS + HOLD_SECONDS);
        match encode_contour(&contour) {
            Ok(d) => ExperimentResponse {
                request_id: id,
                outcome: Outcome::Ok(Shape {
                    sr: d.ratios,
                    center: [d.center.x, d.center.y],
                    max_radius: d.max_radius,
                    spread_factor: self.plant.state().spread_factor,
                }),
            },
            Err(e) => ExperimentResponse::error(id, ErrorCode::PlantCollapse, e.to_string()),
        }
    }

    fn pause(&self, seconds: f64) {
        if !self.accelerated {
            thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

/// Serves one client connection until it closes. Requests that arrive while a
/// previous one is still being handled (pipelined in the same read) are
/// answered with `busy` and not executed.
pub fn serve_connection(stream: TcpStream, session: &Mutex<Session>) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut conn = Connection::default();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let queued = reader.buffer().iter().filter(|&&c| c == b'\n').count();
        let response = session
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .handle_line(&mut conn, &line);
        writer.write_all(encode_frame(&response).as_bytes())?;
        for _ in 0..queued {
            line.clear();
            reader.read_line(&mut line)?;
            let id = salvage_id(&line);
            let busy = ExperimentResponse::error(id, ErrorCode::Busy, "one request in flight per connection");
            writer.write_all(encode_frame(&busy).as_bytes())?;
        }
        writer.flush()?;
    }
}

/// Single-client experiment server.
pub struct Server {
    listener: TcpListener,
    session: Arc<Mutex<Session>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, session: Session) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            session: Arc::new(Mutex::new(session)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn session(&self) -> Arc<Mutex<Session>> {
        Arc::clone(&self.session)
    }

    /// Accepts clients one after another, forever. A dropped connection ends
    /// its session loop; plant state carries over to the next client.
    pub fn run(&self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let peer = stream.peer_addr().ok();
            log::info!("client connected: {peer:?}");
            if let Err(e) = serve_connection(stream, &self.session) {
                log::warn!("connection {peer:?} ended: {e}");
            } else {
                log::info!("client disconnected: {peer:?}");
            }
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("timed out waiting for response")]
    Timeout,
    #[error("connection lost")]
    ConnectionLost,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ClientError::Timeout,
            io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof => ClientError::ConnectionLost,
            _ => ClientError::Io(e),
        }
    }
}

/// Blocking protocol client. One request in flight at a time.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(|source| ClientError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    pub fn request_experiment(&mut self, req: &ExperimentRequest) -> Result<ExperimentResponse, ClientError> {
        self.writer.write_all(encode_frame(req).as_bytes())?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::ConnectionLost);
        }
        let resp = decode_response(&line).map_err(|e| ClientError::ProtocolViolation(e.to_string()))?;
        if resp.request_id != Some(req.request_id) {
            return Err(ClientError::ProtocolViolation(format!(
                "response id {:?} for request {}",
                resp.request_id, req.request_id
            )));
        }
        Ok(resp)
    }
}
