//! Frame identification: the match tuple a flow-table entry is keyed on,
//! and the message class that decides its queue.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{ethertype, CodecError, EthernetHeader, MacAddress};

/// TCP port of ISO transport (MMS).
pub const MMS_TCP_PORT: u16 = 102;
pub const SNTP_UDP_PORT: u16 = 123;
pub const PTP_EVENT_UDP_PORT: u16 = 319;
pub const PTP_GENERAL_UDP_PORT: u16 = 320;

const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageClass {
    Goose,
    Sv,
    Mms,
    TimeSync,
    Other,
}

impl MessageClass {
    pub const ALL: [MessageClass; 5] = [
        MessageClass::Goose,
        MessageClass::Sv,
        MessageClass::Mms,
        MessageClass::TimeSync,
        MessageClass::Other,
    ];

    /// GOOSE and SV get private reserved bandwidth.
    pub fn is_priority(self) -> bool {
        matches!(self, MessageClass::Goose | MessageClass::Sv)
    }

    /// MMS and time sync ride the capped shared pool.
    pub fn is_shared(self) -> bool {
        matches!(self, MessageClass::Mms | MessageClass::TimeSync)
    }

    /// Egress queue: 2 for priority, 1 for the shared pool, 0 best effort.
    pub fn queue_id(self) -> u8 {
        if self.is_priority() {
            2
        } else if self.is_shared() {
            1
        } else {
            0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageClass::Goose => "GOOSE",
            MessageClass::Sv => "SV",
            MessageClass::Mms => "MMS",
            MessageClass::TimeSync => "TIME_SYNC",
            MessageClass::Other => "OTHER",
        }
    }
}

impl fmt::Display for MessageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "goose" => Ok(MessageClass::Goose),
            "sv" => Ok(MessageClass::Sv),
            "mms" => Ok(MessageClass::Mms),
            "time_sync" | "timesync" | "ptp" | "sntp" => Ok(MessageClass::TimeSync),
            "other" => Ok(MessageClass::Other),
            _ => Err(format!("unknown message class {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct L4Key {
    pub proto: Transport,
    pub dst_port: u16,
}

/// Flow match tuple. `appid` is set only for GOOSE/SV EtherTypes and `l4`
/// only for IPv4 TCP/UDP, so the two never coexist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: MacAddress,
    pub dst: MacAddress,
    pub ethertype: u16,
    pub appid: Option<u16>,
    pub l4: Option<L4Key>,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{} {:#06x}", self.src, self.dst, self.ethertype)?;
        if let Some(appid) = self.appid {
            write!(f, " appid={appid:#06x}")?;
        }
        if let Some(l4) = self.l4 {
            let proto = match l4.proto {
                Transport::Tcp => "tcp",
                Transport::Udp => "udp",
            };
            write!(f, " {proto}/{}", l4.dst_port)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Classified {
    pub key: FlowKey,
    pub class: MessageClass,
}

/// Classifies a raw frame from its headers alone. GOOSE/SV frames need
/// only the first two octets after the EtherType (the APPID); IPv4 needs
/// the IP header and the first four transport octets.
pub fn classify_frame(bytes: &[u8]) -> Result<Classified, CodecError> {
    let eth = EthernetHeader::parse(bytes)?;
    let mut key = FlowKey {
        src: eth.link.src,
        dst: eth.link.dst,
        ethertype: eth.ethertype,
        appid: None,
        l4: None,
    };
    let payload = &bytes[eth.payload_offset..];
    let truncated = |needed: usize| CodecError::Truncated {
        needed: eth.payload_offset + needed,
        available: bytes.len(),
    };
    let class = match eth.ethertype {
        ethertype::GOOSE | ethertype::SV => {
            let appid = payload.get(0..2).ok_or_else(|| truncated(2))?;
            key.appid = Some(u16::from_be_bytes([appid[0], appid[1]]));
            if eth.ethertype == ethertype::GOOSE {
                MessageClass::Goose
            } else {
                MessageClass::Sv
            }
        }
        ethertype::PTP => MessageClass::TimeSync,
        ethertype::IPV4 => match ipv4_l4(payload).map_err(truncated)? {
            Some(l4) => {
                key.l4 = Some(l4);
                port_class(l4)
            }
            None => MessageClass::Other,
        },
        _ => MessageClass::Other,
    };
    Ok(Classified { key, class })
}

/// Transport protocol and destination port, or `None` for protocols other
/// than TCP/UDP and for non-initial fragments. `Err` carries the number of
/// payload octets that were needed.
fn ipv4_l4(ip: &[u8]) -> Result<Option<L4Key>, usize> {
    let first = *ip.first().ok_or(20usize)?;
    let ihl = usize::from(first & 0x0F) * 4;
    if first >> 4 != 4 || ihl < 20 {
        return Ok(None);
    }
    if ip.len() < ihl {
        return Err(ihl);
    }
    let fragment_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1FFF;
    let proto = match ip[9] {
        IPPROTO_TCP => Transport::Tcp,
        IPPROTO_UDP => Transport::Udp,
        _ => return Ok(None),
    };
    if fragment_offset != 0 {
        return Ok(None);
    }
    let ports = ip.get(ihl..ihl + 4).ok_or(ihl + 4)?;
    Ok(Some(L4Key {
        proto,
        dst_port: u16::from_be_bytes([ports[2], ports[3]]),
    }))
}

fn port_class(l4: L4Key) -> MessageClass {
    match (l4.proto, l4.dst_port) {
        (Transport::Tcp, MMS_TCP_PORT) => MessageClass::Mms,
        (Transport::Udp, SNTP_UDP_PORT | PTP_EVENT_UDP_PORT | PTP_GENERAL_UDP_PORT) => {
            MessageClass::TimeSync
        }
        _ => MessageClass::Other,
    }
}

/// Builds a minimal IPv4 frame (20-octet header, 8 transport octets) with
/// the given destination port; used for synthetic MMS/time-sync traffic.
pub fn synthetic_ipv4_frame(
    src: MacAddress,
    dst: MacAddress,
    proto: Transport,
    src_port: u16,
    dst_port: u16,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 28);
    out.extend_from_slice(&dst.0);
    out.extend_from_slice(&src.0);
    out.extend_from_slice(&ethertype::IPV4.to_be_bytes());
    let proto_num = match proto {
        Transport::Tcp => IPPROTO_TCP,
        Transport::Udp => IPPROTO_UDP,
    };
    let ip_src = [10, 0, src.0[4], src.0[5]];
    let ip_dst = [10, 0, dst.0[4], dst.0[5]];
    let total_len: u16 = 28;
    out.extend_from_slice(&[0x45, 0x00]);
    out.extend_from_slice(&total_len.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0x40, 0x00, 64, proto_num, 0, 0]);
    out.extend_from_slice(&ip_src);
    out.extend_from_slice(&ip_dst);
    out.extend_from_slice(&src_port.to_be_bytes());
    out.extend_from_slice(&dst_port.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    out
}
