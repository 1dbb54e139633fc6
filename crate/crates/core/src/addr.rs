//! Bit-exact IPv6 address algebra.
//!
//! Addresses are raw 128-bit values. The interface identifier (IID) is the low
//! 64 bits; a modified EUI-64 IID embeds a 48-bit MAC address with `ff:fe`
//! inserted in the middle and the Universal/Local bit flipped.

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use thiserror::Error;

/// Universal/Local bit of the first MAC octet.
pub const UNIVERSAL_LOCAL_BIT: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("invalid IPv6 address at position {position}: {reason}")]
    Parse { position: usize, reason: &'static str },
    #[error("unsupported prefix length {0} (expected 56 or 64)")]
    UnsupportedLength(u8),
    #[error("prefix length {0} out of range 0..=128")]
    LengthOutOfRange(u8),
    #[error("prefix {0} has bits set below its length")]
    HostBitsSet(String),
    #[error("malformed prefix `{0}`")]
    MalformedPrefix(String),
    #[error("interface identifier {0} is not a modified EUI-64 identifier")]
    NotEui64(Iid64),
    #[error("malformed MAC address `{0}`")]
    MalformedMac(String),
    #[error("malformed OUI `{0}`")]
    MalformedOui(String),
}

/// A 128-bit IPv6 address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address128(pub u128);

impl Address128 {
    pub const fn from_bits(bits: u128) -> Self {
        Address128(bits)
    }

    pub const fn bits(self) -> u128 {
        self.0
    }

    /// Low 64 bits.
    pub const fn iid(self) -> Iid64 {
        Iid64(self.0 as u64)
    }

    /// Bits 56..63, the subnet selector inside a delegated /56.
    pub const fn subnet_id(self) -> u8 {
        (self.0 >> 64) as u8
    }

    /// Top 56 bits as an integer.
    pub const fn prefix56_bits(self) -> u64 {
        (self.0 >> 72) as u64
    }

    /// Masks the address to a /56 or /64 prefix.
    pub fn prefix_of(self, length: u8) -> Result<Prefix, AddrError> {
        match length {
            56 | 64 => Ok(Prefix::truncate(self, length)),
            other => Err(AddrError::UnsupportedLength(other)),
        }
    }

    /// Combines a network prefix of length at most 64 with an interface identifier.
    pub fn compose(prefix: Prefix, iid: Iid64) -> Self {
        debug_assert!(prefix.len() <= 64);
        Address128(prefix.bits() | u128::from(iid.0))
    }
}

impl fmt::Display for Address128 {
    /// RFC 5952 canonical text.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&Ipv6Addr::from(self.0), f)
    }
}

impl FromStr for Address128 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl From<Ipv6Addr> for Address128 {
    fn from(a: Ipv6Addr) -> Self {
        Address128(u128::from(a))
    }
}

impl From<Address128> for Ipv6Addr {
    fn from(a: Address128) -> Self {
        Ipv6Addr::from(a.0)
    }
}

/// Low 64-bit interface identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Iid64(pub u64);

impl Iid64 {
    pub const fn octets(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    /// True iff octets 3 and 4 (counted from the most significant end) are `ff:fe`.
    pub const fn is_eui64(self) -> bool {
        (self.0 >> 24) & 0xffff == 0xfffe
    }

    pub const fn hamming_weight(self) -> u32 {
        self.0.count_ones()
    }

    /// Recovers the embedded hardware address of a modified EUI-64 IID.
    pub fn mac(self) -> Result<Mac48, AddrError> {
        if !self.is_eui64() {
            return Err(AddrError::NotEui64(self));
        }
        let o = self.octets();
        Ok(Mac48([o[0] ^ UNIVERSAL_LOCAL_BIT, o[1], o[2], o[5], o[6], o[7]]))
    }

    /// OUI of the embedded MAC, if this is an EUI-64 IID.
    pub fn oui(self) -> Option<Oui> {
        self.mac().ok().map(|m| m.oui())
    }
}

impl fmt::Display for Iid64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Iid64 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex: String = s.chars().filter(|c| *c != ':').collect();
        if hex.len() != 16 {
            return Err(AddrError::Parse { position: 0, reason: "IID must have 16 hex digits" });
        }
        u64::from_str_radix(&hex, 16)
            .map(Iid64)
            .map_err(|_| AddrError::Parse { position: 0, reason: "IID must be hexadecimal" })
    }
}

/// 48-bit hardware address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Mac48(pub [u8; 6]);

impl Mac48 {
    pub const fn octets(self) -> [u8; 6] {
        self.0
    }

    pub const fn oui(self) -> Oui {
        Oui([self.0[0], self.0[1], self.0[2]])
    }

    pub const fn is_locally_administered(self) -> bool {
        self.0[0] & UNIVERSAL_LOCAL_BIT != 0
    }

    /// Builds the modified EUI-64 interface identifier for this MAC.
    pub const fn to_eui64(self) -> Iid64 {
        let m = self.0;
        Iid64(u64::from_be_bytes([
            m[0] ^ UNIVERSAL_LOCAL_BIT,
            m[1],
            m[2],
            0xff,
            0xfe,
            m[3],
            m[4],
            m[5],
        ]))
    }

    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        Mac48([b[2], b[3], b[4], b[5], b[6], b[7]])
    }

    pub fn to_u64(self) -> u64 {
        let m = self.0;
        u64::from_be_bytes([0, 0, m[0], m[1], m[2], m[3], m[4], m[5]])
    }
}

impl fmt::Display for Mac48 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", m[0], m[1], m[2], m[3], m[4], m[5])
    }
}

impl FromStr for Mac48 {
    type Err = AddrError;

    /// Accepts `aa:bb:cc:dd:ee:ff`, `aa-bb-cc-dd-ee-ff` or 12 bare hex digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex: String = s.chars().filter(|c| *c != ':' && *c != '-').collect();
        if hex.len() != 12 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AddrError::MalformedMac(s.to_string()));
        }
        let v = u64::from_str_radix(&hex, 16).map_err(|_| AddrError::MalformedMac(s.to_string()))?;
        Ok(Mac48::from_u64(v))
    }
}

/// 24-bit Organizationally Unique Identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Oui(pub [u8; 3]);

impl Oui {
    /// Parses six hex digits without separators, e.g. `001122`.
    pub fn from_hex(s: &str) -> Result<Self, AddrError> {
        let s = s.trim();
        if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AddrError::MalformedOui(s.to_string()));
        }
        let v = u32::from_str_radix(s, 16).map_err(|_| AddrError::MalformedOui(s.to_string()))?;
        Ok(Oui::from_u32(v))
    }

    pub fn from_u32(v: u32) -> Self {
        let b = v.to_be_bytes();
        Oui([b[1], b[2], b[3]])
    }

    pub fn to_u32(self) -> u32 {
        u32::from_be_bytes([0, self.0[0], self.0[1], self.0[2]])
    }

    /// Six upper-case hex digits, the registry key form.
    pub fn to_hex(self) -> String {
        format!("{:02X}{:02X}{:02X}", self.0[0], self.0[1], self.0[2])
    }
}

impl fmt::Display for Oui {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02x}:{:02x}:{:02x}", self.0[0], self.0[1], self.0[2])
    }
}

impl serde::Serialize for Oui {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Oui {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Oui::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A network prefix. All bits below `len` are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    bits: u128,
    len: u8,
}

const fn mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

impl Prefix {
    /// Rejects lengths above 128 and values with host bits set.
    pub fn new(bits: u128, len: u8) -> Result<Self, AddrError> {
        if len > 128 {
            return Err(AddrError::LengthOutOfRange(len));
        }
        if bits & !mask(len) != 0 {
            return Err(AddrError::HostBitsSet(format!("{}/{}", Address128(bits), len)));
        }
        Ok(Prefix { bits, len })
    }

    /// Keeps the top `len` bits of `addr`. Panics if `len > 128`.
    pub fn truncate(addr: Address128, len: u8) -> Self {
        assert!(len <= 128, "prefix length {len} out of range");
        Prefix { bits: addr.0 & mask(len), len }
    }

    pub const fn bits(self) -> u128 {
        self.bits
    }

    #[allow(clippy::len_without_is_empty)]
    pub const fn len(self) -> u8 {
        self.len
    }

    pub const fn network(self) -> Address128 {
        Address128(self.bits)
    }

    pub const fn contains(self, addr: Address128) -> bool {
        addr.0 & mask(self.len) == self.bits
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Address128(self.bits), self.len)
    }
}

impl FromStr for Prefix {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, l) = s.trim().split_once('/').ok_or_else(|| AddrError::MalformedPrefix(s.to_string()))?;
        let addr = parse_address(a)?;
        let len: u8 = l.parse().map_err(|_| AddrError::MalformedPrefix(s.to_string()))?;
        Prefix::new(addr.0, len)
    }
}

fn parse_err(position: usize, reason: &'static str) -> AddrError {
    AddrError::Parse { position, reason }
}

fn parse_ipv4_tail(text: &str, offset: usize) -> Result<[u16; 2], AddrError> {
    let mut octets = [0u8; 4];
    let mut pos = offset;
    let mut parts = text.split('.');
    for slot in octets.iter_mut() {
        let part = parts.next().ok_or_else(|| parse_err(offset + text.len(), "IPv4 suffix needs four octets"))?;
        if part.is_empty() || part.len() > 3 {
            return Err(parse_err(pos, "IPv4 octet must have 1 to 3 digits"));
        }
        if let Some(i) = part.bytes().position(|b| !b.is_ascii_digit()) {
            return Err(parse_err(pos + i, "invalid character in IPv4 octet"));
        }
        if part.len() > 1 && part.starts_with('0') {
            return Err(parse_err(pos, "IPv4 octet has a leading zero"));
        }
        let v: u16 = part.parse().map_err(|_| parse_err(pos, "invalid IPv4 octet"))?;
        if v > 255 {
            return Err(parse_err(pos, "IPv4 octet exceeds 255"));
        }
        *slot = v as u8;
        pos += part.len() + 1;
    }
    if parts.next().is_some() {
        return Err(parse_err(pos - 1, "IPv4 suffix has more than four octets"));
    }
    Ok([
        u16::from_be_bytes([octets[0], octets[1]]),
        u16::from_be_bytes([octets[2], octets[3]]),
    ])
}

/// Parses full, zero-compressed or mixed (trailing dotted quad) IPv6 text.
///
/// Errors carry the byte offset of the first offending character.
pub fn parse_address(text: &str) -> Result<Address128, AddrError> {
    let b = text.as_bytes();
    let n = b.len();
    if n == 0 {
        return Err(parse_err(0, "empty address"));
    }

    let mut groups: Vec<u16> = Vec::with_capacity(8);
    let mut gap: Option<usize> = None;
    let mut i = 0;

    if b[0] == b':' {
        if n < 2 || b[1] != b':' {
            return Err(parse_err(0, "address cannot start with a single colon"));
        }
        gap = Some(0);
        i = 2;
    }

    while i < n {
        let end = b[i..].iter().position(|&c| c == b':').map_or(n, |p| i + p);
        let piece = &text[i..end];

        if piece.contains('.') {
            if end != n {
                return Err(parse_err(end, "IPv4 suffix must end the address"));
            }
            if groups.len() > 6 {
                return Err(parse_err(i, "no room for an IPv4 suffix"));
            }
            groups.extend(parse_ipv4_tail(piece, i)?);
            break;
        }
        if piece.is_empty() {
            return Err(parse_err(i, "expected a hex group"));
        }
        if let Some(k) = piece.bytes().position(|c| !c.is_ascii_hexdigit()) {
            return Err(parse_err(i + k, "invalid character"));
        }
        if piece.len() > 4 {
            return Err(parse_err(i + 4, "hex group longer than four digits"));
        }
        if groups.len() == 8 {
            return Err(parse_err(i, "too many groups"));
        }
        groups.push(u16::from_str_radix(piece, 16).expect("validated hex"));
        i = end;
        if i == n {
            break;
        }
        // b[i] == ':'
        if i + 1 < n && b[i + 1] == b':' {
            if gap.is_some() {
                return Err(parse_err(i, "`::` may appear only once"));
            }
            gap = Some(groups.len());
            i += 2;
        } else {
            i += 1;
            if i == n {
                return Err(parse_err(i - 1, "address cannot end with a single colon"));
            }
        }
    }

    let words: [u16; 8] = match gap {
        None => {
            if groups.len() != 8 {
                return Err(parse_err(n, "too few groups"));
            }
            groups.try_into().expect("eight groups")
        }
        Some(at) => {
            if groups.len() > 7 {
                return Err(parse_err(n, "`::` must stand for at least one group"));
            }
            let mut w = [0u16; 8];
            let tail = groups.len() - at;
            w[..at].copy_from_slice(&groups[..at]);
            w[8 - tail..].copy_from_slice(&groups[at..]);
            w
        }
    };

    let bits = words.iter().fold(0u128, |acc, &w| (acc << 16) | u128::from(w));
    Ok(Address128(bits))
}
