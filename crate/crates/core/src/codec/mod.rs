//! Link-layer codec for GOOSE and Sampled-Values frames.
//!
//! Frames are laid out as an Ethernet II header (optionally 802.1Q tagged),
//! an eight-octet IEC header carrying the APPID, and a BER-encoded APDU.
//! All encoders are pure and deterministic; all decoders accept arbitrary
//! input and fail with a [`CodecError`] rather than panicking.

pub mod ber;
mod goose;
mod sv;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use goose::{decode_goose, encode_goose, DataValue, GooseFrame, GoosePdu, UtcTime};
pub use sv::{decode_sv, encode_sv, SvFrame, SvPdu, DEFAULT_SAMPLE_BLOCK};

/// EtherType registry shared by the codec and the classifier.
pub mod ethertype {
    pub const IPV4: u16 = 0x0800;
    pub const ARP: u16 = 0x0806;
    pub const VLAN: u16 = 0x8100;
    pub const GOOSE: u16 = 0x88B8;
    pub const SV: u16 = 0x88BA;
    pub const PTP: u16 = 0x88F7;
}

/// Ethernet header without tag: two addresses and the EtherType.
pub const ETH_HEADER_LEN: usize = 14;
pub const VLAN_TAG_LEN: usize = 4;
pub const IEC_HEADER_LEN: usize = 8;
pub const MAX_PAYLOAD: usize = 1500;
/// Cap on every visible-string field.
pub const MAX_STRING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated: needed {needed} octets, buffer holds {available}")]
    Truncated { needed: usize, available: usize },
    #[error("bad EtherType: expected {expected:#06x}, found {found:#06x}")]
    BadEtherType { expected: u16, found: u16 },
    #[error("malformed BER at offset {offset}: {reason}")]
    MalformedBer { offset: usize, reason: &'static str },
    #[error("length mismatch: header declares {declared} octets, body holds {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("{field} is {len} octets, limit is {max}")]
    FieldTooLong {
        field: &'static str,
        len: usize,
        max: usize,
    },
    #[error("invalid data value: {0}")]
    InvalidDataValue(String),
}

impl CodecError {
    /// Short variant name, used by the CLI for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            CodecError::Truncated { .. } => "Truncated",
            CodecError::BadEtherType { .. } => "BadEtherType",
            CodecError::MalformedBer { .. } => "MalformedBer",
            CodecError::LengthMismatch { .. } => "LengthMismatch",
            CodecError::FieldTooLong { .. } => "FieldTooLong",
            CodecError::InvalidDataValue(_) => "InvalidDataValue",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const fn new(octets: [u8; 6]) -> Self {
        Self(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Group bit: least significant bit of the first octet.
    pub fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 != 0
    }

    fn read(buf: &[u8]) -> Self {
        let mut o = [0u8; 6];
        o.copy_from_slice(&buf[..6]);
        Self(o)
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(String);

impl FromStr for MacAddress {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(ParseMacError(s.to_string()));
        }
        let mut o = [0u8; 6];
        for (slot, part) in o.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        Ok(Self(o))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 802.1Q tag. The drop-eligible bit is not modelled and encodes as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VlanTag {
    pub pcp: u8,
    pub vid: u16,
}

impl VlanTag {
    fn tci(&self) -> Result<u16, CodecError> {
        if self.pcp > 7 {
            return Err(CodecError::InvalidDataValue(format!(
                "VLAN priority {} exceeds 7",
                self.pcp
            )));
        }
        if self.vid > 0x0FFF {
            return Err(CodecError::InvalidDataValue(format!(
                "VLAN id {} exceeds 4095",
                self.vid
            )));
        }
        Ok((u16::from(self.pcp) << 13) | self.vid)
    }
}

/// Addressing part of an Ethernet header; the EtherType is supplied by
/// whichever encoder builds the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkHeader {
    pub dst: MacAddress,
    pub src: MacAddress,
    pub vlan: Option<VlanTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetFrame {
    pub dst: MacAddress,
    pub src: MacAddress,
    pub vlan: Option<VlanTag>,
    pub ethertype: u16,
    pub payload: Vec<u8>,
}

/// Parsed Ethernet header plus the offset where the payload begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EthernetHeader {
    pub link: LinkHeader,
    pub ethertype: u16,
    pub payload_offset: usize,
}

impl EthernetHeader {
    /// Parses the header, stepping over a single 802.1Q tag if present.
    pub fn parse(buf: &[u8]) -> Result<Self, CodecError> {
        need(buf, ETH_HEADER_LEN)?;
        let dst = MacAddress::read(&buf[0..6]);
        let src = MacAddress::read(&buf[6..12]);
        let mut ethertype = u16::from_be_bytes([buf[12], buf[13]]);
        let mut offset = ETH_HEADER_LEN;
        let mut vlan = None;
        if ethertype == ethertype::VLAN {
            need(buf, ETH_HEADER_LEN + VLAN_TAG_LEN)?;
            let tci = u16::from_be_bytes([buf[14], buf[15]]);
            vlan = Some(VlanTag {
                pcp: (tci >> 13) as u8,
                vid: tci & 0x0FFF,
            });
            ethertype = u16::from_be_bytes([buf[16], buf[17]]);
            offset += VLAN_TAG_LEN;
        }
        Ok(Self {
            link: LinkHeader { dst, src, vlan },
            ethertype,
            payload_offset: offset,
        })
    }
}

impl EthernetFrame {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(CodecError::FieldTooLong {
                field: "payload",
                len: self.payload.len(),
                max: MAX_PAYLOAD,
            });
        }
        let mut out = Vec::with_capacity(ETH_HEADER_LEN + VLAN_TAG_LEN + self.payload.len());
        out.extend_from_slice(&self.dst.0);
        out.extend_from_slice(&self.src.0);
        if let Some(tag) = self.vlan {
            out.extend_from_slice(&ethertype::VLAN.to_be_bytes());
            out.extend_from_slice(&tag.tci()?.to_be_bytes());
        }
        out.extend_from_slice(&self.ethertype.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CodecError> {
        let header = EthernetHeader::parse(buf)?;
        let payload = &buf[header.payload_offset..];
        if payload.len() > MAX_PAYLOAD {
            return Err(CodecError::FieldTooLong {
                field: "payload",
                len: payload.len(),
                max: MAX_PAYLOAD,
            });
        }
        Ok(Self {
            dst: header.link.dst,
            src: header.link.src,
            vlan: header.link.vlan,
            ethertype: header.ethertype,
            payload: payload.to_vec(),
        })
    }
}

/// The APPID block that precedes every GOOSE and SV APDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IecHeader {
    pub appid: u16,
    /// 8 + APDU length in octets.
    pub length: u16,
    pub reserved1: u16,
    pub reserved2: u16,
}

impl IecHeader {
    pub fn parse(buf: &[u8]) -> Result<Self, CodecError> {
        need(buf, IEC_HEADER_LEN)?;
        let word = |i: usize| u16::from_be_bytes([buf[i], buf[i + 1]]);
        Ok(Self {
            appid: word(0),
            length: word(2),
            reserved1: word(4),
            reserved2: word(6),
        })
    }

    fn write(&self, out: &mut Vec<u8>) {
        for w in [self.appid, self.length, self.reserved1, self.reserved2] {
            out.extend_from_slice(&w.to_be_bytes());
        }
    }
}

fn need(buf: &[u8], len: usize) -> Result<(), CodecError> {
    if buf.len() < len {
        Err(CodecError::Truncated {
            needed: len,
            available: buf.len(),
        })
    } else {
        Ok(())
    }
}

/// Assembles `header | IecHeader | apdu` with the EtherType given.
fn encode_iec_frame(
    link: &LinkHeader,
    ethertype: u16,
    appid: u16,
    apdu: &[u8],
) -> Result<Vec<u8>, CodecError> {
    let body_len = IEC_HEADER_LEN + apdu.len();
    if body_len > MAX_PAYLOAD {
        return Err(CodecError::FieldTooLong {
            field: "payload",
            len: body_len,
            max: MAX_PAYLOAD,
        });
    }
    let mut payload = Vec::with_capacity(body_len);
    IecHeader {
        appid,
        length: body_len as u16,
        reserved1: 0,
        reserved2: 0,
    }
    .write(&mut payload);
    payload.extend_from_slice(apdu);
    EthernetFrame {
        dst: link.dst,
        src: link.src,
        vlan: link.vlan,
        ethertype,
        payload,
    }
    .encode()
}

/// Splits a frame into link header, IEC header and the exact APDU octets,
/// checking the EtherType and every declared length.
fn decode_iec_frame(
    buf: &[u8],
    expected: u16,
) -> Result<(LinkHeader, IecHeader, &[u8], usize), CodecError> {
    let eth = EthernetHeader::parse(buf)?;
    if eth.ethertype != expected {
        return Err(CodecError::BadEtherType {
            expected,
            found: eth.ethertype,
        });
    }
    let body = &buf[eth.payload_offset..];
    if body.len() > MAX_PAYLOAD {
        return Err(CodecError::FieldTooLong {
            field: "payload",
            len: body.len(),
            max: MAX_PAYLOAD,
        });
    }
    let iec = IecHeader::parse(body).map_err(|_| CodecError::Truncated {
        needed: eth.payload_offset + IEC_HEADER_LEN,
        available: buf.len(),
    })?;
    let apdu_start = eth.payload_offset + IEC_HEADER_LEN;
    let reader = ber::Reader::new(&buf[apdu_start..], apdu_start);
    let (_, header_len, content_len) = reader.peek_header()?;
    let apdu_len = header_len + content_len;
    let available = buf.len() - apdu_start;
    if apdu_len > available {
        return Err(CodecError::Truncated {
            needed: apdu_start + apdu_len,
            available: buf.len(),
        });
    }
    let declared = iec.length as usize;
    if declared != IEC_HEADER_LEN + apdu_len {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: IEC_HEADER_LEN + apdu_len,
        });
    }
    if available > apdu_len {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: IEC_HEADER_LEN + available,
        });
    }
    Ok((eth.link, iec, &buf[apdu_start..], apdu_start))
}

fn check_string(field: &'static str, s: &str) -> Result<(), CodecError> {
    if s.len() > MAX_STRING {
        return Err(CodecError::FieldTooLong {
            field,
            len: s.len(),
            max: MAX_STRING,
        });
    }
    if !s.bytes().all(|b| (0x20..=0x7E).contains(&b)) {
        return Err(CodecError::InvalidDataValue(format!(
            "{field} must be a visible string"
        )));
    }
    Ok(())
}
