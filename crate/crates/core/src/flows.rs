//! Flow records and subscriber-prefix anonymization.

use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::addr::{parse_address, Address128, Iid64, Prefix};

pub const FLOW_FIELDS: usize = 9;
pub const CSV_HEADER: &str = "timestamp,src,dst,protocol,src_port,dst_port,bytes,packets,sampling_rate";

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("line {line}: expected {FLOW_FIELDS} fields, found {found}")]
    Arity { line: usize, found: usize },
    #[error("line {line}: field `{field}`: {reason}")]
    Field { line: usize, field: &'static str, reason: String },
    #[error("invalid anonymization key: {0}")]
    Key(String),
}

/// One sampled flow observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowRecord {
    pub timestamp: u64,
    pub src: Address128,
    pub dst: Address128,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
    pub bytes: u64,
    pub packets: u64,
    pub sampling_rate: u32,
}

impl fmt::Display for FlowRecord {
    /// One CSV line without the trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            self.timestamp,
            self.src,
            self.dst,
            self.protocol,
            self.src_port,
            self.dst_port,
            self.bytes,
            self.packets,
            self.sampling_rate
        )
    }
}

/// Outcome of parsing one CSV line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Flow(FlowRecord),
    /// A header line.
    Header,
    /// One of the endpoints is IPv4.
    NotIpv6,
}

fn field<T: FromStr>(line: usize, name: &'static str, text: &str) -> Result<T, FlowError> {
    text.trim().parse::<T>().map_err(|_| FlowError::Field {
        line,
        field: name,
        reason: format!("cannot parse `{text}`"),
    })
}

enum Endpoint {
    V6(Address128),
    V4,
}

fn endpoint(line: usize, name: &'static str, text: &str) -> Result<Endpoint, FlowError> {
    let text = text.trim();
    match parse_address(text) {
        Ok(a) => Ok(Endpoint::V6(a)),
        Err(_) if text.parse::<Ipv4Addr>().is_ok() => Ok(Endpoint::V4),
        Err(e) => Err(FlowError::Field { line, field: name, reason: e.to_string() }),
    }
}

/// Parses one line of the flow CSV schema. `line` is the 1-based line number
/// used in error messages.
pub fn parse_flow(text: &str, line: usize) -> Result<Parsed, FlowError> {
    let text = text.trim_end_matches(['\r', '\n']);
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != FLOW_FIELDS {
        return Err(FlowError::Arity { line, found: fields.len() });
    }
    let first = fields[0].trim();
    if first.starts_with(|c: char| c.is_ascii_alphabetic()) {
        return Ok(Parsed::Header);
    }
    let timestamp = field(line, "timestamp", fields[0])?;
    let src = endpoint(line, "src", fields[1])?;
    let dst = endpoint(line, "dst", fields[2])?;
    let protocol = field(line, "protocol", fields[3])?;
    let src_port = field(line, "src_port", fields[4])?;
    let dst_port = field(line, "dst_port", fields[5])?;
    let bytes: u64 = field(line, "bytes", fields[6])?;
    let packets: u64 = field(line, "packets", fields[7])?;
    let sampling_rate: u32 = field(line, "sampling_rate", fields[8])?;
    if sampling_rate == 0 {
        return Err(FlowError::Field { line, field: "sampling_rate", reason: "must be positive".into() });
    }
    if bytes >= 1 && packets == 0 {
        return Err(FlowError::Field { line, field: "packets", reason: "zero packets with nonzero bytes".into() });
    }
    let (Endpoint::V6(src), Endpoint::V6(dst)) = (src, dst) else {
        return Ok(Parsed::NotIpv6);
    };
    Ok(Parsed::Flow(FlowRecord {
        timestamp,
        src,
        dst,
        protocol,
        src_port,
        dst_port,
        bytes,
        packets,
        sampling_rate,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounts {
    pub lines: u64,
    pub flows: u64,
    pub headers: u64,
    pub skipped_not_ipv6: u64,
    pub malformed: u64,
}

impl IngestCounts {
    pub fn merge(&mut self, other: &IngestCounts) {
        self.lines += other.lines;
        self.flows += other.flows;
        self.headers += other.headers;
        self.skipped_not_ipv6 += other.skipped_not_ipv6;
        self.malformed += other.malformed;
    }

    pub fn record(&mut self, outcome: &Result<Parsed, FlowError>) {
        self.lines += 1;
        match outcome {
            Ok(Parsed::Flow(_)) => self.flows += 1,
            Ok(Parsed::Header) => self.headers += 1,
            Ok(Parsed::NotIpv6) => self.skipped_not_ipv6 += 1,
            Err(_) => self.malformed += 1,
        }
    }
}

/// Reads batches of raw lines with their 1-based line numbers.
pub struct LineBatches<R> {
    reader: R,
    batch: usize,
    next_line: usize,
}

impl<R: BufRead> LineBatches<R> {
    pub fn new(reader: R, batch: usize) -> Self {
        LineBatches { reader, batch: batch.max(1), next_line: 1 }
    }

    /// Next batch; an empty vector signals end of input.
    pub fn next_batch(&mut self) -> std::io::Result<Vec<(usize, String)>> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            let mut s = String::new();
            if self.reader.read_line(&mut s)? == 0 {
                break;
            }
            let n = self.next_line;
            self.next_line += 1;
            if s.trim().is_empty() {
                continue;
            }
            out.push((n, s));
        }
        Ok(out)
    }
}

/// Which endpoint of each flow is replaced by its anonymized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnonymizeSide {
    #[default]
    Source,
    Destination,
    Both,
    None,
}

impl AnonymizeSide {
    pub fn source(self) -> bool {
        matches!(self, AnonymizeSide::Source | AnonymizeSide::Both)
    }

    pub fn destination(self) -> bool {
        matches!(self, AnonymizeSide::Destination | AnonymizeSide::Both)
    }
}

impl FromStr for AnonymizeSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "source" => Ok(AnonymizeSide::Source),
            "destination" => Ok(AnonymizeSide::Destination),
            "both" => Ok(AnonymizeSide::Both),
            "none" => Ok(AnonymizeSide::None),
            other => Err(format!("unknown anonymize side `{other}`")),
        }
    }
}

impl fmt::Display for AnonymizeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnonymizeSide::Source => "source",
            AnonymizeSide::Destination => "destination",
            AnonymizeSide::Both => "both",
            AnonymizeSide::None => "none",
        })
    }
}

/// 56-bit stand-in for a delegated /56.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PrefixToken(pub u64);

impl PrefixToken {
    pub const MASK: u64 = (1 << 56) - 1;

    /// Token of an address whose /56 is kept in the clear.
    pub fn raw(addr: Address128) -> Self {
        PrefixToken(addr.prefix56_bits())
    }

    /// The token placed back into the top 56 bits of an address.
    pub fn as_prefix(self) -> Prefix {
        Prefix::new(u128::from(self.0) << 72, 56).expect("56-bit token")
    }
}

impl fmt::Display for PrefixToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:014x}", self.0)
    }
}

impl FromStr for PrefixToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v = u64::from_str_radix(s, 16).map_err(|e| e.to_string())?;
        if v > Self::MASK {
            return Err(format!("token `{s}` exceeds 56 bits"));
        }
        Ok(PrefixToken(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AnonymizedAddress {
    pub prefix_token: PrefixToken,
    pub subnet_id: u8,
    pub iid: Iid64,
}

impl AnonymizedAddress {
    /// Cleartext split of an address, for runs without anonymization.
    pub fn clear(addr: Address128) -> Self {
        AnonymizedAddress { prefix_token: PrefixToken::raw(addr), subnet_id: addr.subnet_id(), iid: addr.iid() }
    }

    /// Drop-in address: token in the top 56 bits, subnet and IID unchanged.
    pub fn to_address(self) -> Address128 {
        Address128(
            u128::from(self.prefix_token.0) << 72 | u128::from(self.subnet_id) << 64 | u128::from(self.iid.0),
        )
    }
}

/// 128-bit anonymization secret.
#[derive(Clone, PartialEq, Eq)]
pub struct AnonKey([u8; 16]);

impl fmt::Debug for AnonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnonKey({})", self.fingerprint())
    }
}

impl AnonKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        AnonKey(bytes)
    }

    /// Parses 32 hex digits; surrounding whitespace is ignored.
    pub fn from_hex(text: &str) -> Result<Self, FlowError> {
        let raw = hex::decode(text.trim()).map_err(|e| FlowError::Key(e.to_string()))?;
        let bytes: [u8; 16] = raw
            .try_into()
            .map_err(|v: Vec<u8>| FlowError::Key(format!("expected 16 bytes, got {}", v.len())))?;
        Ok(AnonKey(bytes))
    }

    /// Non-reversible identifier safe to record in run metadata.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"sixtrace key fingerprint v1");
        h.update(self.0);
        hex::encode(&h.finalize()[..8])
    }
}

/// Name of the keyed function, recorded in run manifests.
pub const PRF_NAME: &str = "HMAC-SHA256(key, top 7 octets) truncated to 56 bits";

/// Keyed, consistent anonymization of the top 56 bits of an address.
#[derive(Clone)]
pub struct Anonymizer {
    mac: Hmac<Sha256>,
}

impl Anonymizer {
    pub fn new(key: &AnonKey) -> Self {
        Anonymizer { mac: <Hmac<Sha256> as KeyInit>::new_from_slice(&key.0).expect("any key length") }
    }

    pub fn token(&self, prefix56: u64) -> PrefixToken {
        let mut mac = self.mac.clone();
        mac.update(&prefix56.to_be_bytes()[1..]);
        let digest = mac.finalize().into_bytes();
        let mut b = [0u8; 8];
        b[1..].copy_from_slice(&digest[..7]);
        PrefixToken(u64::from_be_bytes(b))
    }

    pub fn anonymize(&self, addr: Address128) -> AnonymizedAddress {
        AnonymizedAddress {
            prefix_token: self.token(addr.prefix56_bits()),
            subnet_id: addr.subnet_id(),
            iid: addr.iid(),
        }
    }
}

pub fn anonymize(addr: Address128, key: &AnonKey) -> AnonymizedAddress {
    Anonymizer::new(key).anonymize(addr)
}
