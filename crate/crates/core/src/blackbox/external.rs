//! Subprocess black-box adapter and its framed wire protocol.
//!
//! All frames are little-endian over the child's stdin/stdout. Request:
//! magic `XBB1`, u32 H, W, C, P, then H·W·C f32 pixels (row-major,
//! channel-last) and P f32 concrete parameter values in declaration
//! order. Response: `XBR1`, u32 H, W, C, payload; or `XBE1`, u32 length,
//! UTF-8 message. One outstanding request per process.

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use crate::image::Image;

use super::{validate, BlackBox, BlackBoxError, ConcreteParams, ParamSpace, Result};

pub const FRAME_REQUEST: &[u8; 4] = b"XBB1";
pub const FRAME_RESPONSE: &[u8; 4] = b"XBR1";
pub const FRAME_ERROR: &[u8; 4] = b"XBE1";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Guards against absurd allocations from corrupt frames.
const MAX_EXTENT: u32 = 1 << 14;
const MAX_CHANNELS: u32 = 64;
const MAX_PARAMS: u32 = 256;
const MAX_ERROR_LEN: u32 = 1 << 20;

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

/// Serializes one request frame.
pub fn write_request(
    w: &mut impl Write,
    image: &Image,
    params: &ConcreteParams,
) -> io::Result<()> {
    let (h, wd, c) = image.dims();
    w.write_all(FRAME_REQUEST)?;
    for v in [h as u32, wd as u32, c as u32, params.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_f32s(w, image.as_slice())?;
    let vals: Vec<f32> = params.as_slice().iter().map(|&v| v as f32).collect();
    write_f32s(w, &vals)?;
    w.flush()
}

/// Parses one request frame (server side). `Ok(None)` means the peer
/// closed the stream cleanly before a new frame started.
pub fn read_request(r: &mut impl Read) -> Result<Option<(Image, Vec<f32>)>> {
    let mut magic = [0u8; 4];
    match r.read(&mut magic) {
        Ok(0) => return Ok(None),
        Ok(n) => {
            r.read_exact(&mut magic[n..])
                .map_err(|e| BlackBoxError::Protocol(format!("truncated magic: {e}")))?;
        }
        Err(e) => return Err(BlackBoxError::Subprocess(e.to_string())),
    }
    if &magic != FRAME_REQUEST {
        return Err(BlackBoxError::Protocol(format!(
            "bad magic {:?}, expected XBB1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let io_err = |e: io::Error| BlackBoxError::Protocol(format!("truncated request: {e}"));
    let h = read_u32(r).map_err(io_err)?;
    let w = read_u32(r).map_err(io_err)?;
    let c = read_u32(r).map_err(io_err)?;
    let p = read_u32(r).map_err(io_err)?;
    if h == 0 || w == 0 || h > MAX_EXTENT || w > MAX_EXTENT || c > MAX_CHANNELS || p > MAX_PARAMS {
        return Err(BlackBoxError::Protocol(format!(
            "implausible request header {h}x{w}x{c}, P={p}"
        )));
    }
    let pixels = read_f32s(r, (h * w * c) as usize).map_err(io_err)?;
    let params = read_f32s(r, p as usize).map_err(io_err)?;
    Ok(Some((
        Image::new(h as usize, w as usize, c as usize, pixels),
        params,
    )))
}

pub fn write_response(w: &mut impl Write, image: &Image) -> io::Result<()> {
    let (h, wd, c) = image.dims();
    w.write_all(FRAME_RESPONSE)?;
    for v in [h as u32, wd as u32, c as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_f32s(w, image.as_slice())?;
    w.flush()
}

pub fn write_error_frame(w: &mut impl Write, message: &str) -> io::Result<()> {
    w.write_all(FRAME_ERROR)?;
    w.write_all(&(message.len() as u32).to_le_bytes())?;
    w.write_all(message.as_bytes())?;
    w.flush()
}

/// Parses one response frame (client side). An `XBE1` frame surfaces as
/// [`BlackBoxError::Peer`] with the message verbatim.
pub fn read_response(r: &mut impl Read) -> Result<Image> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| BlackBoxError::Subprocess(format!("reading response magic: {e}")))?;
    let io_err = |e: io::Error| BlackBoxError::Protocol(format!("truncated response: {e}"));
    match &magic {
        m if m == FRAME_RESPONSE => {
            let h = read_u32(r).map_err(io_err)?;
            let w = read_u32(r).map_err(io_err)?;
            let c = read_u32(r).map_err(io_err)?;
            if h == 0 || w == 0 || h > MAX_EXTENT || w > MAX_EXTENT || c > MAX_CHANNELS {
                return Err(BlackBoxError::Protocol(format!(
                    "implausible response header {h}x{w}x{c}"
                )));
            }
            let pixels = read_f32s(r, (h * w * c) as usize).map_err(io_err)?;
            Ok(Image::new(h as usize, w as usize, c as usize, pixels))
        }
        m if m == FRAME_ERROR => {
            let len = read_u32(r).map_err(io_err)?;
            if len > MAX_ERROR_LEN {
                return Err(BlackBoxError::Protocol("oversized error frame".into()));
            }
            let mut buf = vec![0u8; len as usize];
            r.read_exact(&mut buf).map_err(io_err)?;
            let msg = String::from_utf8_lossy(&buf).into_owned();
            Err(BlackBoxError::Peer(msg))
        }
        other => Err(BlackBoxError::Protocol(format!(
            "bad magic {:?}, expected XBR1 or XBE1",
            String::from_utf8_lossy(other)
        ))),
    }
}

/// Serves the echo protocol: every request is answered with its own
/// image. Returns the process exit code (0 on clean shutdown, 3 after a
/// protocol violation, which is reported to the peer as an error frame).
pub fn run_echo_server(mut input: impl Read, mut output: impl Write) -> i32 {
    loop {
        match read_request(&mut input) {
            Ok(Some((image, _params))) => {
                if write_response(&mut output, &image).is_err() {
                    return 3;
                }
            }
            Ok(None) => return 0,
            Err(e) => {
                let _ = write_error_frame(&mut output, &e.to_string());
                return 3;
            }
        }
    }
}

enum WorkerReply {
    Frame(Result<Image>),
    Died(String),
}

/// A black box served by a subprocess speaking the `XBB1` protocol.
/// Requests are serialized: one outstanding request per process.
pub struct ExternalBlackBox {
    space: ParamSpace,
    timeout: Duration,
    worker: Mutex<Worker>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<WorkerReply>,
}

impl ExternalBlackBox {
    /// Spawns `command` (split on whitespace) and attaches to its
    /// stdin/stdout. The parameter space must match what the peer
    /// expects; values are sent in declaration order.
    pub fn spawn(command: &str, space: ParamSpace, timeout: Duration) -> Result<ExternalBlackBox> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| BlackBoxError::Subprocess("empty command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BlackBoxError::Subprocess(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || loop {
            let frame = read_response(&mut stdout);
            let died = matches!(&frame, Err(BlackBoxError::Subprocess(_)));
            let msg = match (&frame, died) {
                (Err(e), true) => WorkerReply::Died(e.to_string()),
                _ => WorkerReply::Frame(frame),
            };
            if tx.send(msg).is_err() || died {
                return;
            }
        });

        Ok(ExternalBlackBox {
            space,
            timeout,
            worker: Mutex::new(Worker {
                child,
                stdin,
                replies: rx,
            }),
        })
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl BlackBox for ExternalBlackBox {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, image: &Image, params: &ConcreteParams) -> Result<Image> {
        validate(params, &self.space)?;
        let worker = self.worker.lock().expect("worker lock");
        write_request(&mut (&worker.stdin), image, params)
            .map_err(|e| BlackBoxError::Subprocess(format!("writing request: {e}")))?;
        let reply = worker.replies.recv_timeout(self.timeout);
        match reply {
            Ok(WorkerReply::Frame(Ok(out))) => {
                if out.dims() != image.dims() {
                    return Err(BlackBoxError::Protocol(format!(
                        "response shape {:?} differs from request {:?}",
                        out.dims(),
                        image.dims()
                    )));
                }
                Ok(out)
            }
            Ok(WorkerReply::Frame(Err(e))) => Err(e),
            Ok(WorkerReply::Died(e)) => Err(BlackBoxError::Subprocess(e)),
            Err(RecvTimeoutError::Timeout) => Err(BlackBoxError::Timeout {
                seconds: self.timeout.as_secs(),
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BlackBoxError::Subprocess("worker channel closed".into()))
            }
        }
    }
}
