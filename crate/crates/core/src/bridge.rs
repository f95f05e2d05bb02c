//! Binary wire protocol for an external denoiser, a pooled TCP client
//! implementing [`DenoiserOracle`], and an in-process echo server.
//!
//! All integers are little-endian. A request is
//! `"FMDN" u16:version u8:1 u8:direction u32:t u32:condition u16:count`
//! followed by `count` tensors; a response is
//! `"FMDN" u16:version u8:2 u16:count` followed by `count` pairs of
//! (epsilon, variance) tensors. A tensor is `u16:h u16:w u16:c` and
//! `h·w·c` f32 values in row-major `(y, x, channel)` order.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::diffusion::{DenoiseRequest, DenoiserOracle, DenoiserOutput, DiffusionError, Direction, LatentFrame};

pub const MAGIC: [u8; 4] = *b"FMDN";
pub const VERSION: u16 = 1;
pub const REQUEST: u8 = 1;
pub const RESPONSE: u8 = 2;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot connect to {address}: {source}")]
    Connect {
        address: String,
        #[source]
        source: io::Error,
    },
    #[error("protocol violation: expected {expected}, got {got}")]
    Protocol { expected: String, got: String },
    #[error("timed out waiting for {address}")]
    Timeout { address: String },
    #[error("connection error: {0}")]
    Io(#[from] io::Error),
}

fn violation(expected: impl ToString, got: impl ToString) -> BridgeError {
    BridgeError::Protocol {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// An f32 tensor as carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct WireTensor {
    pub shape: (u16, u16, u16),
    pub data: Vec<f32>,
}

impl WireTensor {
    pub fn from_latent(z: &LatentFrame) -> Result<Self, BridgeError> {
        let (h, w, c) = z.shape();
        let dim = |n: usize| u16::try_from(n).map_err(|_| violation("dimension ≤ 65535", n));
        Ok(Self {
            shape: (dim(h)?, dim(w)?, dim(c)?),
            data: z.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_latent(&self) -> LatentFrame {
        let (h, w, c) = self.shape;
        LatentFrame::new(
            h.into(),
            w.into(),
            c.into(),
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("wire tensor length matches its header")
    }

    fn len(shape: (u16, u16, u16)) -> usize {
        usize::from(shape.0) * usize::from(shape.1) * usize::from(shape.2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub direction: Direction,
    pub t: u32,
    pub condition: u32,
    pub frames: Vec<WireTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirePair {
    pub epsilon: WireTensor,
    pub variance: WireTensor,
}

fn put_tensor(buf: &mut Vec<u8>, t: &WireTensor) {
    for d in [t.shape.0, t.shape.1, t.shape.2] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(kind: u8) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf
}

pub fn encode_request(req: &WireRequest) -> Vec<u8> {
    let mut buf = header(REQUEST);
    buf.push(req.direction as u8);
    buf.extend_from_slice(&req.t.to_le_bytes());
    buf.extend_from_slice(&req.condition.to_le_bytes());
    buf.extend_from_slice(&(req.frames.len() as u16).to_le_bytes());
    for f in &req.frames {
        put_tensor(&mut buf, f);
    }
    buf
}

pub fn encode_response(pairs: &[WirePair]) -> Vec<u8> {
    let mut buf = header(RESPONSE);
    buf.extend_from_slice(&(pairs.len() as u16).to_le_bytes());
    for p in pairs {
        put_tensor(&mut buf, &p.epsilon);
        put_tensor(&mut buf, &p.variance);
    }
    buf
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], BridgeError> {
    let mut b = [0; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn u16_of(r: &mut impl Read) -> Result<u16, BridgeError> {
    Ok(u16::from_le_bytes(take(r)?))
}

fn u32_of(r: &mut impl Read) -> Result<u32, BridgeError> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn read_header(r: &mut impl Read, kind: u8) -> Result<(), BridgeError> {
    let magic: [u8; 4] = take(r)?;
    if magic != MAGIC {
        return Err(violation("magic \"FMDN\"", format!("{magic:02x?}")));
    }
    let version = u16_of(r)?;
    if version != VERSION {
        return Err(violation(format!("version {VERSION}"), format!("version {version}")));
    }
    let got: [u8; 1] = take(r)?;
    if got[0] != kind {
        return Err(violation(format!("message type {kind}"), format!("message type {}", got[0])));
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<WireTensor, BridgeError> {
    let shape = (u16_of(r)?, u16_of(r)?, u16_of(r)?);
    let mut bytes = vec![0; WireTensor::len(shape) * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(WireTensor { shape, data })
}

/// Reads one request, rejecting bad headers and sequences whose frames are
/// empty or differ in shape.
pub fn read_request(r: &mut impl Read) -> Result<WireRequest, BridgeError> {
    read_header(r, REQUEST)?;
    let direction = match take::<1>(r)?[0] {
        0 => Direction::Temporal,
        1 => Direction::Spatial,
        d => return Err(violation("direction 0 or 1", format!("direction {d}"))),
    };
    let t = u32_of(r)?;
    let condition = u32_of(r)?;
    let count = u16_of(r)?;
    let mut frames: Vec<WireTensor> = Vec::with_capacity(count.into());
    for _ in 0..count {
        let f = read_tensor(r)?;
        if WireTensor::len(f.shape) == 0 {
            return Err(violation("non-empty frame", format!("{:?}", f.shape)));
        }
        if let Some(first) = frames.first() {
            if first.shape != f.shape {
                return Err(violation(format!("{:?}", first.shape), format!("{:?}", f.shape)));
            }
        }
        frames.push(f);
    }
    Ok(WireRequest {
        direction,
        t,
        condition,
        frames,
    })
}

/// Reads one response and checks it against the shapes that were sent.
pub fn read_response(r: &mut impl Read, sent: &[(u16, u16, u16)]) -> Result<Vec<WirePair>, BridgeError> {
    read_header(r, RESPONSE)?;
    let count = usize::from(u16_of(r)?);
    if count != sent.len() {
        return Err(violation(format!("{} frames", sent.len()), format!("{count} frames")));
    }
    let mut pairs = Vec::with_capacity(count);
    for (i, &shape) in sent.iter().enumerate() {
        let epsilon = read_tensor(r)?;
        let variance = read_tensor(r)?;
        for got in [epsilon.shape, variance.shape] {
            if got != shape {
                return Err(violation(format!("frame {i} shaped {shape:?}"), format!("{got:?}")));
            }
        }
        pairs.push(WirePair { epsilon, variance });
    }
    Ok(pairs)
}

/// Denoiser reached over TCP. Each request uses one connection exclusively;
/// idle connections are pooled so concurrent sequences can proceed in
/// parallel.
pub struct BridgeOracle {
    address: String,
    timeout: Duration,
    pool: Mutex<Vec<TcpStream>>,
}

impl BridgeOracle {
    /// Connects once up front so that an unreachable endpoint fails early.
    pub fn connect(address: &str, timeout: Duration) -> Result<Self, BridgeError> {
        let oracle = Self {
            address: address.to_string(),
            timeout,
            pool: Mutex::new(Vec::new()),
        };
        let stream = oracle.open()?;
        oracle.pool.lock().expect("pool lock").push(stream);
        Ok(oracle)
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    fn open(&self) -> Result<TcpStream, BridgeError> {
        let connect_err = |source| BridgeError::Connect {
            address: self.address.clone(),
            source,
        };
        let addrs: Vec<SocketAddr> = self.address.to_socket_addrs().map_err(connect_err)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        Err(connect_err(last))
    }

    fn classify(&self, e: BridgeError) -> BridgeError {
        match e {
            BridgeError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                BridgeError::Timeout {
                    address: self.address.clone(),
                }
            }
            BridgeError::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                violation("a complete response", "connection closed mid-message")
            }
            other => other,
        }
    }

    /// Sends one sequence and returns the decoded response.
    pub fn exchange(&self, req: &WireRequest) -> Result<Vec<WirePair>, BridgeError> {
        let pooled = self.pool.lock().expect("pool lock").pop();
        let mut stream = match pooled {
            Some(s) => s,
            None => self.open()?,
        };
        let shapes: Vec<_> = req.frames.iter().map(|f| f.shape).collect();
        let result = stream
            .write_all(&encode_request(req))
            .map_err(BridgeError::from)
            .and_then(|_| read_response(&mut stream, &shapes))
            .map_err(|e| self.classify(e));
        // a failed exchange leaves the stream in an unknown state
        if result.is_ok() {
            self.pool.lock().expect("pool lock").push(stream);
        }
        result
    }

    pub fn predict_wire(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, BridgeError> {
        let frames = req
            .frames
            .iter()
            .map(WireTensor::from_latent)
            .collect::<Result<Vec<_>, _>>()?;
        let t = u32::try_from(req.t).map_err(|_| violation("timestep ≤ u32::MAX", req.t))?;
        let pairs = self.exchange(&WireRequest {
            direction: req.direction,
            t,
            condition: req.condition,
            frames,
        })?;
        Ok(pairs
            .iter()
            .map(|p| DenoiserOutput {
                epsilon: p.epsilon.to_latent(),
                variance: p.variance.to_latent(),
            })
            .collect())
    }
}

impl DenoiserOracle for BridgeOracle {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        self.predict_wire(req)
            .map_err(|e| DiffusionError::Oracle(format!("bridge {}: {e}", self.address)))
    }
}

/// Behaviour of the in-process reference server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoMode {
    /// `ε` is the input frame, `Σ = 0`.
    Echo,
    /// `ε = 0`, `Σ = 0`.
    Zero,
    /// Answers with one frame fewer than requested.
    WrongFrameCount,
    /// Answers with a corrupted magic.
    BadMagic,
    /// Answers with tensors one row short.
    WrongDims,
    /// Reads the request and never answers.
    Silent,
}

fn respond(mode: EchoMode, req: &WireRequest) -> Vec<u8> {
    let zeros = |t: &WireTensor| WireTensor {
        shape: t.shape,
        data: vec![0.0; t.data.len()],
    };
    let mut pairs: Vec<WirePair> = req
        .frames
        .iter()
        .map(|f| WirePair {
            epsilon: if mode == EchoMode::Echo { f.clone() } else { zeros(f) },
            variance: zeros(f),
        })
        .collect();
    match mode {
        EchoMode::WrongFrameCount => {
            pairs.pop();
        }
        EchoMode::WrongDims => {
            for p in &mut pairs {
                for t in [&mut p.epsilon, &mut p.variance] {
                    let (h, w, c) = t.shape;
                    t.shape = (h.saturating_sub(1), w, c);
                    t.data.truncate(WireTensor::len(t.shape));
                }
            }
        }
        _ => {}
    }
    let mut bytes = encode_response(&pairs);
    if mode == EchoMode::BadMagic {
        bytes[0] = b'X';
    }
    bytes
}

/// Serves requests until dropped. A malformed request closes its connection
/// without a reply.
pub struct EchoServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl EchoServer {
    pub fn spawn(mode: EchoMode) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                std::thread::spawn(move || serve(stream, mode));
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn address(&self) -> String {
        self.addr.to_string()
    }
}

fn serve(mut stream: TcpStream, mode: EchoMode) {
    let _ = stream.set_nodelay(true);
    while let Ok(req) = read_request(&mut stream) {
        if mode == EchoMode::Silent {
            continue;
        }
        if stream.write_all(&respond(mode, &req)).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn probe(address: &str, timeout: Duration, bytes: &[u8]) -> Result<Option<Vec<u8>>, BridgeError> {
    let oracle = BridgeOracle {
        address: address.to_string(),
        timeout,
        pool: Mutex::new(Vec::new()),
    };
    let mut s = oracle.open()?;
    s.write_all(bytes)?;
    let mut reply = Vec::new();
    match s.read_to_end(&mut reply) {
        Ok(_) => Ok((!reply.is_empty()).then_some(reply)),
        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(Some(reply)),
        Err(e) if e.kind() == io::ErrorKind::ConnectionReset => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Protocol self-test against an echo endpoint: a bit-exact round trip, and
/// rejection of a malformed header and of a sequence with mismatched shapes.
pub fn self_test(address: &str, timeout: Duration) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let frames: Vec<WireTensor> = (0..3)
        .map(|i| WireTensor {
            shape: (5, 7, 4),
            data: (0..140)
                .map(|k| match k {
                    0 => f32::MIN_POSITIVE,
                    1 => f32::MAX,
                    2 => -0.0,
                    3 => f32::from_bits(1),
                    _ => ((k * 31 + i * 7) as f32).sin() * 1e3,
                })
                .collect(),
        })
        .collect();
    let req = WireRequest {
        direction: Direction::Spatial,
        t: 981,
        condition: 7,
        frames,
    };
    let round_trip = BridgeOracle::connect(address, timeout).and_then(|o| o.exchange(&req));
    out.push(match round_trip {
        Ok(pairs) => {
            let exact = pairs.iter().zip(&req.frames).all(|(p, f)| {
                p.epsilon.data.iter().map(|v| v.to_bits()).eq(f.data.iter().map(|v| v.to_bits()))
            });
            CheckOutcome {
                name: "round-trip",
                passed: exact,
                detail: if exact {
                    format!("{} frames echoed bit-exactly", pairs.len())
                } else {
                    "echoed values differ from the request".into()
                },
            }
        }
        Err(e) => CheckOutcome {
            name: "round-trip",
            passed: false,
            detail: e.to_string(),
        },
    });

    let mut bad = encode_request(&req);
    bad[..4].copy_from_slice(b"NOPE");
    out.push(rejection("malformed-header", probe(address, timeout, &bad)));

    let mut mixed = req.clone();
    mixed.frames[1] = WireTensor {
        shape: (7, 5, 4),
        data: mixed.frames[1].data.clone(),
    };
    out.push(rejection("wrong-shape", probe(address, timeout, &encode_request(&mixed))));
    out
}

fn rejection(name: &'static str, reply: Result<Option<Vec<u8>>, BridgeError>) -> CheckOutcome {
    match reply {
        Ok(None) => CheckOutcome {
            name,
            passed: true,
            detail: "connection closed without a reply".into(),
        },
        Ok(Some(bytes)) => {
            let valid = bytes.len() >= 7 && bytes[..4] == MAGIC && bytes[6] == RESPONSE;
            CheckOutcome {
                name,
                passed: !valid,
                detail: if valid {
                    "server answered a request it should have rejected".into()
                } else {
                    format!("{} bytes of non-response data", bytes.len())
                },
            }
        }
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}
