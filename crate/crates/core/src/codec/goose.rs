use std::fmt;

use super::ber::{self, Reader, Tlv, CONSTRUCTED};
use super::{
    check_string, decode_iec_frame, encode_iec_frame, ethertype, CodecError, IecHeader,
    LinkHeader, MAX_STRING,
};

/// APDU tag: application class, constructed, number 1.
const GOOSE_PDU: u8 = 0x61;

// Context-specific tags in field order.
const GOCB_REF: u8 = 0x80;
const TIME_ALLOWED_TO_LIVE: u8 = 0x81;
const DAT_SET: u8 = 0x82;
const GO_ID: u8 = 0x83;
const T: u8 = 0x84;
const ST_NUM: u8 = 0x85;
const SQ_NUM: u8 = 0x86;
const TEST: u8 = 0x87;
const CONF_REV: u8 = 0x88;
const NDS_COM: u8 = 0x89;
const NUM_DAT_SET_ENTRIES: u8 = 0x8A;
const ALL_DATA: u8 = 0x80 | CONSTRUCTED | 11;

// Data element tags inside allData.
const DATA_BOOLEAN: u8 = 0x83;
const DATA_BIT_STRING: u8 = 0x84;
const DATA_INTEGER: u8 = 0x85;
const DATA_VISIBLE_STRING: u8 = 0x8A;
const DATA_UTC_TIME: u8 = 0x91;

/// Seconds since 1970 plus a 24-bit binary fraction and an opaque quality
/// octet, eight octets on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct UtcTime {
    pub seconds: u32,
    pub fraction: u32,
    pub quality: u8,
}

impl UtcTime {
    pub const MAX_FRACTION: u32 = 0x00FF_FFFF;

    fn to_octets(self) -> Result<[u8; 8], CodecError> {
        if self.fraction > Self::MAX_FRACTION {
            return Err(CodecError::InvalidDataValue(format!(
                "timestamp fraction {:#x} exceeds 24 bits",
                self.fraction
            )));
        }
        let s = self.seconds.to_be_bytes();
        let f = self.fraction.to_be_bytes();
        Ok([s[0], s[1], s[2], s[3], f[1], f[2], f[3], self.quality])
    }

    fn from_tlv(tlv: &Tlv<'_>) -> Result<Self, CodecError> {
        let raw = tlv.as_fixed_be(8)?;
        Ok(Self {
            seconds: (raw >> 32) as u32,
            fraction: ((raw >> 8) & 0xFF_FFFF) as u32,
            quality: raw as u8,
        })
    }
}

/// One entry of the GOOSE dataset payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DataValue {
    Boolean(bool),
    Integer(i64),
    /// `len` significant bits held in the low bits of `bits`, first bit most
    /// significant.
    BitString {
        len: u8,
        bits: u32,
    },
    VisibleString(String),
    Timestamp(UtcTime),
}

impl DataValue {
    fn encode(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        match self {
            DataValue::Boolean(b) => ber::write_bool(out, DATA_BOOLEAN, *b),
            DataValue::Integer(v) => ber::write_tlv(out, DATA_INTEGER, &ber::signed_content(*v)),
            DataValue::BitString { len, bits } => {
                let len = u32::from(*len);
                if len > 32 {
                    return Err(CodecError::InvalidDataValue(format!(
                        "bit-string of {len} bits exceeds 32"
                    )));
                }
                if len < 32 && *bits >> len != 0 {
                    return Err(CodecError::InvalidDataValue(format!(
                        "bit-string value {bits:#x} has bits beyond length {len}"
                    )));
                }
                let nbytes = len.div_ceil(8) as usize;
                let unused = (nbytes * 8) as u32 - len;
                let padded = u64::from(*bits) << unused;
                let mut content = vec![unused as u8];
                content.extend_from_slice(&padded.to_be_bytes()[8 - nbytes..]);
                ber::write_tlv(out, DATA_BIT_STRING, &content);
            }
            DataValue::VisibleString(s) => {
                if s.len() > MAX_STRING {
                    return Err(CodecError::FieldTooLong {
                        field: "allData visible-string",
                        len: s.len(),
                        max: MAX_STRING,
                    });
                }
                if !s.bytes().all(|b| (0x20..=0x7E).contains(&b)) {
                    return Err(CodecError::InvalidDataValue(
                        "allData visible-string holds a non-printable character".into(),
                    ));
                }
                ber::write_tlv(out, DATA_VISIBLE_STRING, s.as_bytes());
            }
            DataValue::Timestamp(t) => ber::write_tlv(out, DATA_UTC_TIME, &t.to_octets()?),
        }
        Ok(())
    }

    fn decode(tlv: &Tlv<'_>) -> Result<Self, CodecError> {
        let malformed = |reason| CodecError::MalformedBer {
            offset: tlv.offset,
            reason,
        };
        Ok(match tlv.tag {
            DATA_BOOLEAN => DataValue::Boolean(tlv.as_bool()?),
            DATA_INTEGER => DataValue::Integer(tlv.as_i64()?),
            DATA_BIT_STRING => {
                let (unused, data) = tlv
                    .value
                    .split_first()
                    .ok_or(malformed("bit-string without unused-bits octet"))?;
                if *unused > 7 || data.len() > 4 || (data.is_empty() && *unused != 0) {
                    return Err(malformed("bit-string header out of range"));
                }
                let raw = data.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b));
                if raw & ((1u64 << unused) - 1) != 0 {
                    return Err(malformed("bit-string padding bits are not zero"));
                }
                let len = data.len() * 8 - *unused as usize;
                if len > 32 {
                    return Err(malformed("bit-string longer than 32 bits"));
                }
                DataValue::BitString {
                    len: len as u8,
                    bits: (raw >> unused) as u32,
                }
            }
            DATA_VISIBLE_STRING => {
                if tlv.value.len() > MAX_STRING {
                    return Err(malformed("visible-string longer than 64 octets"));
                }
                DataValue::VisibleString(tlv.as_visible_string()?)
            }
            DATA_UTC_TIME => DataValue::Timestamp(UtcTime::from_tlv(tlv)?),
            _ => return Err(malformed("unsupported data element tag")),
        })
    }
}

impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataValue::Boolean(b) => write!(f, "boolean {b}"),
            DataValue::Integer(v) => write!(f, "integer {v}"),
            DataValue::BitString { len, bits } => {
                write!(f, "bit-string ")?;
                for i in (0..*len).rev() {
                    write!(f, "{}", (bits >> i) & 1)?;
                }
                Ok(())
            }
            DataValue::VisibleString(s) => write!(f, "visible-string {s:?}"),
            DataValue::Timestamp(t) => write!(
                f,
                "utc-time {}.{:06x} q={:#04x}",
                t.seconds, t.fraction, t.quality
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct GoosePdu {
    pub gocb_ref: String,
    /// Milliseconds.
    pub time_allowed_to_live: u32,
    pub dat_set: String,
    pub go_id: String,
    pub timestamp: UtcTime,
    pub st_num: u32,
    pub sq_num: u32,
    pub test: bool,
    pub conf_rev: u32,
    pub nds_com: bool,
    pub num_dat_set_entries: u32,
    pub all_data: Vec<DataValue>,
}

/// A decoded GOOSE frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GooseFrame {
    pub link: LinkHeader,
    pub iec: IecHeader,
    pub pdu: GoosePdu,
}

impl GoosePdu {
    fn encode_apdu(&self) -> Result<Vec<u8>, CodecError> {
        check_string("gocbRef", &self.gocb_ref)?;
        check_string("datSet", &self.dat_set)?;
        check_string("goID", &self.go_id)?;
        if self.num_dat_set_entries as usize != self.all_data.len() {
            return Err(CodecError::InvalidDataValue(format!(
                "numDatSetEntries is {} but allData holds {} entries",
                self.num_dat_set_entries,
                self.all_data.len()
            )));
        }
        let mut all_data = Vec::new();
        for value in &self.all_data {
            value.encode(&mut all_data)?;
        }
        let timestamp = self.timestamp.to_octets()?;

        let mut out = Vec::new();
        ber::write_constructed(&mut out, GOOSE_PDU, |b| {
            ber::write_tlv(b, GOCB_REF, self.gocb_ref.as_bytes());
            ber::write_unsigned(b, TIME_ALLOWED_TO_LIVE, self.time_allowed_to_live);
            ber::write_tlv(b, DAT_SET, self.dat_set.as_bytes());
            ber::write_tlv(b, GO_ID, self.go_id.as_bytes());
            ber::write_tlv(b, T, &timestamp);
            ber::write_unsigned(b, ST_NUM, self.st_num);
            ber::write_unsigned(b, SQ_NUM, self.sq_num);
            ber::write_bool(b, TEST, self.test);
            ber::write_unsigned(b, CONF_REV, self.conf_rev);
            ber::write_bool(b, NDS_COM, self.nds_com);
            ber::write_unsigned(b, NUM_DAT_SET_ENTRIES, self.num_dat_set_entries);
            ber::write_tlv(b, ALL_DATA, &all_data);
        });
        Ok(out)
    }

    fn decode_apdu(apdu: &[u8], base: usize) -> Result<Self, CodecError> {
        let mut outer = Reader::new(apdu, base);
        let pdu = outer.expect(GOOSE_PDU)?;
        outer.finish()?;
        let mut r = pdu.children();
        let string = |r: &mut Reader<'_>, tag| -> Result<String, CodecError> {
            let tlv = r.expect(tag)?;
            if tlv.value.len() > MAX_STRING {
                return Err(CodecError::MalformedBer {
                    offset: tlv.offset,
                    reason: "string field longer than 64 octets",
                });
            }
            tlv.as_visible_string()
        };
        let gocb_ref = string(&mut r, GOCB_REF)?;
        let time_allowed_to_live = r.expect(TIME_ALLOWED_TO_LIVE)?.as_u32()?;
        let dat_set = string(&mut r, DAT_SET)?;
        let go_id = string(&mut r, GO_ID)?;
        let timestamp = UtcTime::from_tlv(&r.expect(T)?)?;
        let st_num = r.expect(ST_NUM)?.as_u32()?;
        let sq_num = r.expect(SQ_NUM)?.as_u32()?;
        let test = r.expect(TEST)?.as_bool()?;
        let conf_rev = r.expect(CONF_REV)?.as_u32()?;
        let nds_com = r.expect(NDS_COM)?.as_bool()?;
        let entries_tlv = r.expect(NUM_DAT_SET_ENTRIES)?;
        let num_dat_set_entries = entries_tlv.as_u32()?;
        let data_tlv = r.expect(ALL_DATA)?;
        r.finish()?;

        let mut all_data = Vec::new();
        let mut items = data_tlv.children();
        while !items.is_empty() {
            all_data.push(DataValue::decode(&items.next_tlv()?)?);
        }
        if all_data.len() != num_dat_set_entries as usize {
            return Err(CodecError::MalformedBer {
                offset: entries_tlv.offset,
                reason: "numDatSetEntries disagrees with allData",
            });
        }
        Ok(Self {
            gocb_ref,
            time_allowed_to_live,
            dat_set,
            go_id,
            timestamp,
            st_num,
            sq_num,
            test,
            conf_rev,
            nds_com,
            num_dat_set_entries,
            all_data,
        })
    }
}

/// Builds a complete GOOSE frame: Ethernet header, IEC header with the
/// computed length, and the BER APDU.
pub fn encode_goose(link: &LinkHeader, appid: u16, pdu: &GoosePdu) -> Result<Vec<u8>, CodecError> {
    let apdu = pdu.encode_apdu()?;
    encode_iec_frame(link, ethertype::GOOSE, appid, &apdu)
}

pub fn decode_goose(buf: &[u8]) -> Result<GooseFrame, CodecError> {
    let (link, iec, apdu, base) = decode_iec_frame(buf, ethertype::GOOSE)?;
    let pdu = GoosePdu::decode_apdu(apdu, base)?;
    Ok(GooseFrame { link, iec, pdu })
}

impl fmt::Display for GooseFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.pdu;
        writeln!(f, "ethernet")?;
        writeln!(f, "  dst                 {}", self.link.dst)?;
        writeln!(f, "  src                 {}", self.link.src)?;
        if let Some(tag) = self.link.vlan {
            writeln!(f, "  vlan                pcp={} vid={}", tag.pcp, tag.vid)?;
        }
        writeln!(f, "  ethertype           {:#06x} (GOOSE)", ethertype::GOOSE)?;
        writeln!(f, "iec header")?;
        writeln!(f, "  appid               {:#06x}", self.iec.appid)?;
        writeln!(f, "  length              {}", self.iec.length)?;
        writeln!(f, "  reserved1           {:#06x}", self.iec.reserved1)?;
        writeln!(f, "  reserved2           {:#06x}", self.iec.reserved2)?;
        writeln!(f, "goosePdu")?;
        writeln!(f, "  gocbRef             {:?}", p.gocb_ref)?;
        writeln!(f, "  timeAllowedToLive   {} ms", p.time_allowed_to_live)?;
        writeln!(f, "  datSet              {:?}", p.dat_set)?;
        writeln!(f, "  goID                {:?}", p.go_id)?;
        writeln!(
            f,
            "  t                   {}.{:06x} q={:#04x}",
            p.timestamp.seconds, p.timestamp.fraction, p.timestamp.quality
        )?;
        writeln!(f, "  stNum               {}", p.st_num)?;
        writeln!(f, "  sqNum               {}", p.sq_num)?;
        writeln!(f, "  test                {}", p.test)?;
        writeln!(f, "  confRev             {}", p.conf_rev)?;
        writeln!(f, "  ndsCom              {}", p.nds_com)?;
        writeln!(f, "  numDatSetEntries    {}", p.num_dat_set_entries)?;
        writeln!(f, "  allData")?;
        for (i, v) in p.all_data.iter().enumerate() {
            writeln!(f, "    [{i}] {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{MacAddress, VlanTag};

    fn link() -> LinkHeader {
        LinkHeader {
            dst: MacAddress::new([0x01, 0x0C, 0xCD, 0x01, 0x00, 0x01]),
            src: MacAddress::new([0x02, 0x00, 0x00, 0x00, 0x00, 0x01]),
            vlan: None,
        }
    }

    fn sample() -> GoosePdu {
        GoosePdu {
            gocb_ref: "IED1LD0/LLN0$GO$gcb1".into(),
            time_allowed_to_live: 2000,
            dat_set: "IED1LD0/LLN0$ds1".into(),
            go_id: "trip".into(),
            timestamp: UtcTime {
                seconds: 1_600_000_000,
                fraction: 0x123456,
                quality: 0x0A,
            },
            st_num: 3,
            sq_num: 0,
            test: false,
            conf_rev: 1,
            nds_com: false,
            num_dat_set_entries: 3,
            all_data: vec![
                DataValue::Boolean(true),
                DataValue::BitString {
                    len: 13,
                    bits: 0x1ABC,
                },
                DataValue::Integer(-300),
            ],
        }
    }

    /// Independent length accounting: sums TLV sizes by hand from the
    /// field contents rather than from the encoder's output.
    fn tlv_len(content: usize) -> usize {
        let len_octets = match content {
            0..=0x7F => 1,
            0x80..=0xFF => 2,
            _ => 3,
        };
        1 + len_octets + content
    }

    fn uint_len(v: u32) -> usize {
        match v {
            0..=0x7F => 1,
            0x80..=0x7FFF => 2,
            0x8000..=0x7F_FFFF => 3,
            0x80_0000..=0x7FFF_FFFF => 4,
            _ => 5,
        }
    }

    fn hand_summed_apdu_len(p: &GoosePdu) -> usize {
        assert!(p.all_data.is_empty());
        let body = tlv_len(p.gocb_ref.len())
            + tlv_len(uint_len(p.time_allowed_to_live))
            + tlv_len(p.dat_set.len())
            + tlv_len(p.go_id.len())
            + tlv_len(8)
            + tlv_len(uint_len(p.st_num))
            + tlv_len(uint_len(p.sq_num))
            + tlv_len(1)
            + tlv_len(uint_len(p.conf_rev))
            + tlv_len(1)
            + tlv_len(uint_len(p.num_dat_set_entries))
            + tlv_len(0);
        tlv_len(body)
    }

    #[test]
    fn round_trip() {
        let pdu = sample();
        let bytes = encode_goose(&link(), 0x0001, &pdu).unwrap();
        let frame = decode_goose(&bytes).unwrap();
        assert_eq!(frame.pdu, pdu);
        assert_eq!(frame.link, link());
        assert_eq!(frame.iec.appid, 1);
        assert_eq!(frame.iec.length as usize, bytes.len() - 14);
    }

    #[test]
    fn empty_dataset_length_matches_hand_sum() {
        let pdu = GoosePdu {
            all_data: vec![],
            num_dat_set_entries: 0,
            ..sample()
        };
        let bytes = encode_goose(&link(), 0x3FFF, &pdu).unwrap();
        let expected = 8 + hand_summed_apdu_len(&pdu);
        let declared = u16::from_be_bytes([bytes[16], bytes[17]]) as usize;
        assert_eq!(declared, expected);
        assert_eq!(bytes.len(), 14 + expected);
    }

    #[test]
    fn long_strings_push_length_into_long_form() {
        let pdu = GoosePdu {
            gocb_ref: "G".repeat(64),
            dat_set: "D".repeat(64),
            go_id: "I".repeat(64),
            all_data: vec![],
            num_dat_set_entries: 0,
            st_num: u32::MAX,
            ..sample()
        };
        let bytes = encode_goose(&link(), 7, &pdu).unwrap();
        let declared = u16::from_be_bytes([bytes[16], bytes[17]]) as usize;
        assert_eq!(declared, 8 + hand_summed_apdu_len(&pdu));
        assert_eq!(decode_goose(&bytes).unwrap().pdu, pdu);
    }

    #[test]
    fn gocb_ref_cap() {
        let pdu = GoosePdu {
            gocb_ref: "x".repeat(65),
            ..sample()
        };
        assert_eq!(
            encode_goose(&link(), 1, &pdu),
            Err(CodecError::FieldTooLong {
                field: "gocbRef",
                len: 65,
                max: 64
            })
        );
        let pdu = GoosePdu {
            gocb_ref: "x".repeat(64),
            ..sample()
        };
        assert!(encode_goose(&link(), 1, &pdu).is_ok());
    }

    #[test]
    fn entry_count_must_match() {
        let pdu = GoosePdu {
            num_dat_set_entries: 2,
            ..sample()
        };
        assert!(matches!(
            encode_goose(&link(), 1, &pdu),
            Err(CodecError::InvalidDataValue(_))
        ));
    }

    #[test]
    fn invalid_data_values() {
        let cases = [
            DataValue::BitString { len: 4, bits: 0x10 },
            DataValue::BitString { len: 33, bits: 0 },
            DataValue::VisibleString("tab\there".into()),
            DataValue::Timestamp(UtcTime {
                seconds: 0,
                fraction: 0x0100_0000,
                quality: 0,
            }),
        ];
        for bad in cases {
            let pdu = GoosePdu {
                num_dat_set_entries: 1,
                all_data: vec![bad.clone()],
                ..sample()
            };
            assert!(
                matches!(
                    encode_goose(&link(), 1, &pdu),
                    Err(CodecError::InvalidDataValue(_))
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn bit_string_edges() {
        for (len, bits) in [(0u8, 0u32), (1, 1), (8, 0xA5), (9, 0x1FF), (32, u32::MAX)] {
            let pdu = GoosePdu {
                num_dat_set_entries: 1,
                all_data: vec![DataValue::BitString { len, bits }],
                ..sample()
            };
            let bytes = encode_goose(&link(), 1, &pdu).unwrap();
            assert_eq!(decode_goose(&bytes).unwrap().pdu, pdu);
        }
    }

    #[test]
    fn short_buffer_is_truncated() {
        let bytes = encode_goose(&link(), 1, &sample()).unwrap();
        assert!(matches!(
            decode_goose(&bytes[..13]),
            Err(CodecError::Truncated { .. })
        ));
        assert!(matches!(
            decode_goose(&bytes[..bytes.len() - 1]),
            Err(CodecError::Truncated { .. })
        ));
    }

    #[test]
    fn incremented_length_is_mismatch() {
        let mut bytes = encode_goose(&link(), 1, &sample()).unwrap();
        let len = u16::from_be_bytes([bytes[16], bytes[17]]) + 1;
        bytes[16..18].copy_from_slice(&len.to_be_bytes());
        assert!(matches!(
            decode_goose(&bytes),
            Err(CodecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn trailing_octets_are_rejected() {
        let mut bytes = encode_goose(&link(), 1, &sample()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_goose(&bytes),
            Err(CodecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sv_ethertype_is_rejected() {
        let mut bytes = encode_goose(&link(), 1, &sample()).unwrap();
        bytes[12..14].copy_from_slice(&ethertype::SV.to_be_bytes());
        assert_eq!(
            decode_goose(&bytes),
            Err(CodecError::BadEtherType {
                expected: ethertype::GOOSE,
                found: ethertype::SV
            })
        );
    }

    #[test]
    fn reserved_words_are_accepted_on_input() {
        let mut bytes = encode_goose(&link(), 1, &sample()).unwrap();
        bytes[18] = 0x80;
        bytes[21] = 0x01;
        let frame = decode_goose(&bytes).unwrap();
        assert_eq!(frame.iec.reserved1, 0x8000);
        assert_eq!(frame.iec.reserved2, 0x0001);
    }

    #[test]
    fn vlan_tagged_round_trip() {
        let tagged = LinkHeader {
            vlan: Some(VlanTag { pcp: 4, vid: 0 }),
            ..link()
        };
        let bytes = encode_goose(&tagged, 0x0102, &sample()).unwrap();
        assert_eq!(&bytes[12..14], &[0x81, 0x00]);
        assert_eq!(&bytes[16..18], &[0x88, 0xB8]);
        assert_eq!(decode_goose(&bytes).unwrap().link, tagged);
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode_goose(&link(), 1, &sample()).unwrap();
        let b = encode_goose(&link(), 1, &sample()).unwrap();
        assert_eq!(a, b);
    }
}
