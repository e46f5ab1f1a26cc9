//! Open Sound Control encoding and a UDP client for submitting rendered
//! programs to a Sonic Pi server, with dry-run capture and a recording filter.

use std::fs;
use std::io::ErrorKind;
use std::net::{ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::read_wav;

pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:4557";
pub const DEFAULT_OSC_ADDRESS: &str = "/run-code";
pub const ENDPOINT_ENV: &str = "CODEALIGN_ENDPOINT";
pub const DEFAULT_RECORD_SECONDS: f64 = 10.0;
pub const DEFAULT_SILENCE_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_DURATION_FACTOR: f64 = 0.9;
/// Largest UDP payload over IPv4.
pub const MAX_UDP_PAYLOAD: usize = 65_507;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("cannot encode OSC message: {0}")]
    Encode(String),
    #[error("malformed OSC packet at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("packet of {0} bytes exceeds the {MAX_UDP_PAYLOAD}-byte UDP limit")]
    Size(usize),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("recording: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
}

impl OscArg {
    fn tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::Str(_) => 's',
            OscArg::Blob(_) => 'b',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self {
            address: address.into(),
            args,
        }
    }
}

fn pad4(n: usize) -> usize {
    (n + 3) & !3
}

// strings always carry at least one NUL
fn push_osc_string(out: &mut Vec<u8>, s: &str, what: &str) -> Result<(), LinkError> {
    if s.as_bytes().contains(&0) {
        return Err(LinkError::Encode(format!("{what} contains a NUL byte")));
    }
    out.extend_from_slice(s.as_bytes());
    out.resize(out.len() + pad4(s.len() + 1) - s.len(), 0);
    Ok(())
}

/// Encodes a message per OSC 1.0: padded address, padded type-tag string, then
/// big-endian 4-byte-aligned arguments.
pub fn encode_osc(msg: &OscMessage) -> Result<Vec<u8>, LinkError> {
    if !msg.address.starts_with('/') {
        return Err(LinkError::Encode(format!(
            "address `{}` must start with '/'",
            msg.address
        )));
    }
    let mut out = Vec::new();
    push_osc_string(&mut out, &msg.address, "address")?;
    let tags: String = std::iter::once(',')
        .chain(msg.args.iter().map(OscArg::tag))
        .collect();
    push_osc_string(&mut out, &tags, "type tags")?;
    for arg in &msg.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Str(s) => push_osc_string(&mut out, s, "string argument")?,
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len())
                    .map_err(|_| LinkError::Encode("blob too large".into()))?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.resize(out.len() + pad4(b.len()) - b.len(), 0);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, LinkError> {
        Err(LinkError::Decode {
            offset,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], LinkError> {
        if self.bytes.len() - self.pos < n {
            return self.fail(self.pos, format!("truncated {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn padding(&mut self, used: usize, what: &str) -> Result<(), LinkError> {
        let start = self.pos;
        let pad = self.take(pad4(used) - used, what)?;
        if pad.iter().any(|&b| b != 0) {
            return self.fail(start, format!("non-zero padding after {what}"));
        }
        Ok(())
    }

    fn string(&mut self, what: &str) -> Result<String, LinkError> {
        let start = self.pos;
        let Some(len) = self.bytes[start..].iter().position(|&b| b == 0) else {
            return self.fail(start, format!("unterminated {what}"));
        };
        let raw = self.take(len, what)?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| LinkError::Decode {
                offset: start,
                message: format!("{what} is not UTF-8"),
            })?
            .to_string();
        self.take(1, what)?;
        self.padding(len + 1, what)?;
        Ok(s)
    }

    fn word(&mut self, what: &str) -> Result<[u8; 4], LinkError> {
        Ok(self.take(4, what)?.try_into().expect("four bytes"))
    }
}

/// Inverse of [`encode_osc`]; rejects truncation, bad padding and unknown tags.
pub fn decode_osc(bytes: &[u8]) -> Result<OscMessage, LinkError> {
    let mut r = Reader { bytes, pos: 0 };
    if !bytes.len().is_multiple_of(4) {
        return r.fail(bytes.len(), "packet length is not a multiple of 4");
    }
    let address = r.string("address")?;
    if !address.starts_with('/') {
        return r.fail(0, "address must start with '/'");
    }
    let tag_start = r.pos;
    let tags = r.string("type tags")?;
    let Some(tags) = tags.strip_prefix(',') else {
        return r.fail(tag_start, "type tag string must start with ','");
    };
    let mut args = Vec::with_capacity(tags.len());
    for (i, tag) in tags.chars().enumerate() {
        let arg = match tag {
            'i' => OscArg::Int(i32::from_be_bytes(r.word("int32")?)),
            'f' => OscArg::Float(f32::from_be_bytes(r.word("float32")?)),
            's' => OscArg::Str(r.string("string argument")?),
            'b' => {
                let at = r.pos;
                let len = i32::from_be_bytes(r.word("blob size")?);
                let Ok(len) = usize::try_from(len) else {
                    return r.fail(at, "negative blob size");
                };
                let data = r.take(len, "blob")?.to_vec();
                r.padding(len, "blob")?;
                OscArg::Blob(data)
            }
            other => return r.fail(tag_start + 1 + i, format!("unknown type tag `{other}`")),
        };
        args.push(arg);
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, "trailing bytes after last argument");
    }
    Ok(OscMessage { address, args })
}

/// Where and how programs are submitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub endpoint: String,
    pub osc_address: String,
    /// Prepended to the arguments as an int32 when set.
    pub token: Option<i32>,
    /// External recorder argv; `{out}` and `{seconds}` are substituted.
    pub recorder: Option<Vec<String>>,
    pub silence_threshold: f64,
    pub duration_factor: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            osc_address: DEFAULT_OSC_ADDRESS.into(),
            token: None,
            recorder: None,
            silence_threshold: DEFAULT_SILENCE_THRESHOLD,
            duration_factor: DEFAULT_DURATION_FACTOR,
        }
    }
}

impl LinkConfig {
    /// Applies the endpoint environment override, if set.
    pub fn with_env(mut self) -> Self {
        if let Ok(ep) = std::env::var(ENDPOINT_ENV) {
            if !ep.trim().is_empty() {
                self.endpoint = ep.trim().to_string();
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !self.osc_address.starts_with('/') {
            return Err(LinkError::Config(format!(
                "osc_address `{}` must start with '/'",
                self.osc_address
            )));
        }
        if !(self.silence_threshold >= 0.0) || !(self.duration_factor > 0.0) {
            return Err(LinkError::Config(
                "silence_threshold must be ≥ 0 and duration_factor > 0".into(),
            ));
        }
        if matches!(&self.recorder, Some(argv) if argv.is_empty()) {
            return Err(LinkError::Config("recorder command is empty".into()));
        }
        Ok(())
    }

    /// The message that runs `program` on the server.
    pub fn message_for(&self, program: &str) -> OscMessage {
        let mut args = Vec::with_capacity(2);
        if let Some(t) = self.token {
            args.push(OscArg::Int(t));
        }
        args.push(OscArg::Str(program.to_string()));
        OscMessage::new(self.osc_address.clone(), args)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderJob {
    /// Stem used for capture and recording file names.
    pub name: String,
    pub program: String,
    pub record_seconds: f64,
    pub output_wav: PathBuf,
}

impl RenderJob {
    pub fn new(name: impl Into<String>, program: impl Into<String>, output_wav: PathBuf) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            record_seconds: DEFAULT_RECORD_SECONDS,
            output_wav,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitMode {
    Live,
    /// Write `<name>.osc` into the directory instead of sending.
    DryRun(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmitOutcome {
    pub bytes: usize,
    pub capture: Option<PathBuf>,
}

fn spawn_recorder(argv: &[String], job: &RenderJob) -> Result<Child, LinkError> {
    let expand = |a: &String| {
        a.replace("{out}", &job.output_wav.to_string_lossy())
            .replace("{seconds}", &job.record_seconds.to_string())
    };
    Command::new(expand(&argv[0]))
        .args(argv[1..].iter().map(expand))
        .stdin(Stdio::null())
        .spawn()
        .map_err(|e| LinkError::Transport(format!("cannot start recorder `{}`: {e}", argv[0])))
}

fn send_datagram(endpoint: &str, packet: &[u8]) -> Result<(), LinkError> {
    let target = endpoint
        .to_socket_addrs()
        .map_err(|e| LinkError::Transport(format!("cannot resolve `{endpoint}`: {e}")))?
        .next()
        .ok_or_else(|| LinkError::Transport(format!("`{endpoint}` resolves to nothing")))?;
    let local = if target.is_ipv4() {
        "0.0.0.0:0"
    } else {
        "[::]:0"
    };
    let transport = |e: std::io::Error| LinkError::Transport(format!("{endpoint}: {e}"));
    let sock = UdpSocket::bind(local).map_err(transport)?;
    sock.connect(target).map_err(transport)?;
    let sent = sock.send(packet).map_err(transport)?;
    if sent != packet.len() {
        return Err(LinkError::Transport(format!(
            "{endpoint}: short send of {sent} bytes"
        )));
    }
    // The server never replies, but an ICMP port-unreachable shows up on a
    // connected socket as ConnectionRefused on the next receive.
    sock.set_read_timeout(Some(Duration::from_millis(100)))
        .map_err(transport)?;
    let mut buf = [0u8; 1];
    match sock.recv(&mut buf) {
        Err(e) if e.kind() == ErrorKind::ConnectionRefused => Err(transport(e)),
        _ => Ok(()),
    }
}

/// Sends (or captures) the program and, in live mode, holds for the recording
/// window while the optional recorder runs.
pub fn submit_program(
    job: &RenderJob,
    config: &LinkConfig,
    mode: &SubmitMode,
) -> Result<SubmitOutcome, LinkError> {
    config.validate()?;
    if !(job.record_seconds > 0.0 && job.record_seconds.is_finite()) {
        return Err(LinkError::Config(format!(
            "record_seconds must be positive, got {}",
            job.record_seconds
        )));
    }
    let packet = encode_osc(&config.message_for(&job.program))?;
    if packet.len() > MAX_UDP_PAYLOAD {
        return Err(LinkError::Size(packet.len()));
    }
    match mode {
        SubmitMode::DryRun(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.osc", job.name));
            fs::write(&path, &packet)?;
            Ok(SubmitOutcome {
                bytes: packet.len(),
                capture: Some(path),
            })
        }
        SubmitMode::Live => {
            let mut recorder = match &config.recorder {
                Some(argv) => Some(spawn_recorder(argv, job)?),
                None => None,
            };
            let sent = send_datagram(&config.endpoint, &packet);
            if sent.is_ok() {
                std::thread::sleep(Duration::from_secs_f64(job.record_seconds));
            }
            if let Some(child) = recorder.as_mut() {
                if child.try_wait()?.is_none() {
                    child.kill().ok();
                }
                child.wait()?;
            }
            sent.map(|_| SubmitOutcome {
                bytes: packet.len(),
                capture: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingCheck {
    pub valid: bool,
    pub duration_seconds: f64,
    pub peak: f64,
    pub reason: Option<String>,
}

/// Filters recordings with the default duration factor 0.9.
pub fn validate_recording(
    path: impl AsRef<Path>,
    expected_seconds: f64,
    silence_threshold: f64,
) -> Result<RecordingCheck, LinkError> {
    validate_recording_with(
        path,
        expected_seconds,
        silence_threshold,
        DEFAULT_DURATION_FACTOR,
    )
}

/// A recording is valid when it lasts at least `duration_factor × expected`
/// seconds and its peak absolute amplitude exceeds `silence_threshold`.
pub fn validate_recording_with(
    path: impl AsRef<Path>,
    expected_seconds: f64,
    silence_threshold: f64,
    duration_factor: f64,
) -> Result<RecordingCheck, LinkError> {
    let audio = read_wav(path).map_err(|e| LinkError::Format(e.to_string()))?;
    let duration_seconds = audio.duration_seconds();
    let peak = audio.peak();
    let reason = if duration_seconds < duration_factor * expected_seconds {
        Some(format!(
            "truncated: {duration_seconds:.3} s < {:.3} s",
            duration_factor * expected_seconds
        ))
    } else if !(peak > silence_threshold) {
        Some(format!("silent: peak {peak:.2e} ≤ {silence_threshold:.2e}"))
    } else {
        None
    };
    Ok(RecordingCheck {
        valid: reason.is_none(),
        duration_seconds,
        peak,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_code_packet_layout() {
        let m = OscMessage::new("/run-code", vec![OscArg::Str("play 60".into())]);
        let b = encode_osc(&m).unwrap();
        assert_eq!(b.len(), 24);
        assert_eq!(&b[..12], b"/run-code\0\0\0");
        assert_eq!(&b[12..16], b",s\0\0");
        assert_eq!(&b[16..], b"play 60\0");
        assert_eq!(decode_osc(&b).unwrap(), m);
    }

    #[test]
    fn ping_packet_layout() {
        let b = encode_osc(&OscMessage::new("/ping", vec![])).unwrap();
        assert_eq!(b, b"/ping\0\0\0,\0\0\0");
    }

    #[test]
    fn exact_multiple_of_four_gets_full_pad() {
        let b = encode_osc(&OscMessage::new("/abc", vec![])).unwrap();
        assert_eq!(&b[..8], b"/abc\0\0\0\0");
    }

    #[test]
    fn numeric_and_blob_args_are_big_endian() {
        let m = OscMessage::new(
            "/x",
            vec![
                OscArg::Int(-2),
                OscArg::Float(1.5),
                OscArg::Blob(vec![7, 8, 9]),
            ],
        );
        let b = encode_osc(&m).unwrap();
        assert_eq!(&b[4..12], b",ifb\0\0\0\0");
        assert_eq!(&b[12..16], &[0xff, 0xff, 0xff, 0xfe]);
        assert_eq!(&b[16..20], &[0x3f, 0xc0, 0, 0]);
        assert_eq!(&b[20..28], &[0, 0, 0, 3, 7, 8, 9, 0]);
        assert_eq!(decode_osc(&b).unwrap(), m);
    }

    #[test]
    fn encode_errors() {
        assert!(matches!(
            encode_osc(&OscMessage::new("", vec![])),
            Err(LinkError::Encode(_))
        ));
        assert!(matches!(
            encode_osc(&OscMessage::new("run", vec![])),
            Err(LinkError::Encode(_))
        ));
        let nul = OscMessage::new("/a", vec![OscArg::Str("a\0b".into())]);
        assert!(encode_osc(&nul).is_err());
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_osc(b"/ab"), Err(LinkError::Decode { .. })));
        match decode_osc(b"/a\0\0,q\0\0") {
            Err(LinkError::Decode { offset: 5, message }) => assert!(message.contains('q')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_osc(b"/a\0x,\0\0\0").is_err());
        assert!(decode_osc(b"/a\0\0,i\0\0").is_err());
        assert!(decode_osc(b"/a\0\0,\0\0\0\0\0\0\0").is_err());
        assert!(decode_osc(b"a\0\0\0,\0\0\0").is_err());
        assert!(decode_osc(b"/a\0\0,b\0\0\xff\xff\xff\xff").is_err());
    }

    #[test]
    fn token_is_prepended() {
        let cfg = LinkConfig {
            token: Some(42),
            ..LinkConfig::default()
        };
        let m = cfg.message_for("play 60");
        assert_eq!(m.args, vec![OscArg::Int(42), OscArg::Str("play 60".into())]);
    }

    #[test]
    fn dry_run_capture_equals_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let program = "x".repeat(100);
        let job = RenderJob::new("p", program.clone(), dir.path().join("p.wav"));
        let cfg = LinkConfig::default();
        let out = submit_program(&job, &cfg, &SubmitMode::DryRun(dir.path().into())).unwrap();
        let bytes = fs::read(out.capture.unwrap()).unwrap();
        assert_eq!(bytes, encode_osc(&cfg.message_for(&program)).unwrap());
    }

    #[test]
    fn oversize_program_is_rejected_before_io() {
        let dir = tempfile::tempdir().unwrap();
        let job = RenderJob::new("big", "x".repeat(70_000), dir.path().join("big.wav"));
        let cap = dir.path().join("cap");
        let r = submit_program(
            &job,
            &LinkConfig::default(),
            &SubmitMode::DryRun(cap.clone()),
        );
        assert!(matches!(r, Err(LinkError::Size(_))));
        assert!(!cap.exists());
    }

    #[test]
    fn live_send_to_closed_port_fails() {
        // bind then drop to obtain a port nobody listens on
        let port = UdpSocket::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let cfg = LinkConfig {
            endpoint: format!("127.0.0.1:{port}"),
            ..LinkConfig::default()
        };
        let mut job = RenderJob::new("p", "play 60", PathBuf::from("unused.wav"));
        job.record_seconds = 0.01;
        let r = submit_program(&job, &cfg, &SubmitMode::Live);
        assert!(matches!(r, Err(LinkError::Transport(_))), "{r:?}");
    }

    #[test]
    fn live_send_reaches_a_listener() {
        let server = UdpSocket::bind("127.0.0.1:0").unwrap();
        let cfg = LinkConfig {
            endpoint: server.local_addr().unwrap().to_string(),
            ..LinkConfig::default()
        };
        let mut job = RenderJob::new("p", "play 60", PathBuf::from("unused.wav"));
        job.record_seconds = 0.01;
        submit_program(&job, &cfg, &SubmitMode::Live).unwrap();
        let mut buf = [0u8; 64];
        let n = server.recv(&mut buf).unwrap();
        assert_eq!(
            &buf[..n],
            encode_osc(&cfg.message_for("play 60")).unwrap().as_slice()
        );
    }

    #[test]
    fn bad_record_seconds() {
        let mut job = RenderJob::new("p", "play 60", PathBuf::from("x.wav"));
        job.record_seconds = 0.0;
        let r = submit_program(
            &job,
            &LinkConfig::default(),
            &SubmitMode::DryRun("/tmp".into()),
        );
        assert!(matches!(r, Err(LinkError::Config(_))));
    }

    #[test]
    fn recording_rules() {
        let dir = tempfile::tempdir().unwrap();
        let rate = 8000;
        let sine: Vec<f64> = (0..rate * 10)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin())
            .collect();
        let ok = dir.path().join("ok.wav");
        crate::dataset::write_wav_i16(&ok, &sine, rate as u32).unwrap();
        assert!(validate_recording(&ok, 10.0, 1e-3).unwrap().valid);

        let silent = dir.path().join("silent.wav");
        crate::dataset::write_wav_i16(&silent, &vec![0.0; rate * 10], rate as u32).unwrap();
        let c = validate_recording(&silent, 10.0, 1e-3).unwrap();
        assert!(!c.valid && c.reason.unwrap().starts_with("silent"));

        let short = dir.path().join("short.wav");
        crate::dataset::write_wav_i16(&short, &sine[..rate * 2], rate as u32).unwrap();
        let c = validate_recording(&short, 10.0, 1e-3).unwrap();
        assert!(!c.valid && c.reason.unwrap().starts_with("truncated"));

        let junk = dir.path().join("junk.wav");
        fs::write(&junk, b"not a wav").unwrap();
        assert!(matches!(
            validate_recording(&junk, 10.0, 1e-3),
            Err(LinkError::Format(_))
        ));
    }
}
