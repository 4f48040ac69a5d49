use std::fmt;

use super::ber::{self, Reader, CONSTRUCTED};
use super::{
    check_string, decode_iec_frame, encode_iec_frame, ethertype, CodecError, IecHeader,
    LinkHeader, MAX_STRING,
};

const SAV_PDU: u8 = 0x60;
const NO_ASDU: u8 = 0x80;
const SEQ_ASDU: u8 = 0x80 | CONSTRUCTED | 2;
const ASDU: u8 = 0x30;
const SV_ID: u8 = 0x80;
const SMP_CNT: u8 = 0x82;
const CONF_REV: u8 = 0x83;
const SMP_SYNCH: u8 = 0x85;
const SEQ_DATA: u8 = 0x87;

/// Sample block size used when a scenario does not configure one.
pub const DEFAULT_SAMPLE_BLOCK: usize = 64;

/// Single-ASDU Sampled-Values PDU. `smp_cnt` and `conf_rev` use fixed-width
/// encodings, as published streams do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SvPdu {
    pub sv_id: String,
    pub smp_cnt: u16,
    pub conf_rev: u32,
    pub smp_synch: u8,
    pub sample_data: Vec<u8>,
}

impl Default for SvPdu {
    fn default() -> Self {
        Self {
            sv_id: String::new(),
            smp_cnt: 0,
            conf_rev: 1,
            smp_synch: 0,
            sample_data: vec![0; DEFAULT_SAMPLE_BLOCK],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SvFrame {
    pub link: LinkHeader,
    pub iec: IecHeader,
    pub pdu: SvPdu,
}

impl SvPdu {
    fn encode_apdu(&self) -> Result<Vec<u8>, CodecError> {
        check_string("svID", &self.sv_id)?;
        let mut out = Vec::new();
        ber::write_constructed(&mut out, SAV_PDU, |b| {
            ber::write_unsigned(b, NO_ASDU, 1);
            ber::write_constructed(b, SEQ_ASDU, |b| {
                ber::write_constructed(b, ASDU, |b| {
                    ber::write_tlv(b, SV_ID, self.sv_id.as_bytes());
                    ber::write_tlv(b, SMP_CNT, &self.smp_cnt.to_be_bytes());
                    ber::write_tlv(b, CONF_REV, &self.conf_rev.to_be_bytes());
                    ber::write_tlv(b, SMP_SYNCH, &[self.smp_synch]);
                    ber::write_tlv(b, SEQ_DATA, &self.sample_data);
                });
            });
        });
        Ok(out)
    }

    fn decode_apdu(apdu: &[u8], base: usize) -> Result<Self, CodecError> {
        let mut outer = Reader::new(apdu, base);
        let pdu = outer.expect(SAV_PDU)?;
        outer.finish()?;
        let mut r = pdu.children();
        let no_asdu = r.expect(NO_ASDU)?;
        if no_asdu.as_u32()? != 1 {
            return Err(CodecError::MalformedBer {
                offset: no_asdu.offset,
                reason: "only single-ASDU frames are supported",
            });
        }
        let seq = r.expect(SEQ_ASDU)?;
        r.finish()?;
        let mut seq = seq.children();
        let asdu = seq.expect(ASDU)?;
        seq.finish()?;

        let mut r = asdu.children();
        let id = r.expect(SV_ID)?;
        if id.value.len() > MAX_STRING {
            return Err(CodecError::MalformedBer {
                offset: id.offset,
                reason: "svID longer than 64 octets",
            });
        }
        let sv_id = id.as_visible_string()?;
        let smp_cnt = r.expect(SMP_CNT)?.as_fixed_be(2)? as u16;
        let conf_rev = r.expect(CONF_REV)?.as_fixed_be(4)? as u32;
        let smp_synch = r.expect(SMP_SYNCH)?.as_fixed_be(1)? as u8;
        let sample_data = r.expect(SEQ_DATA)?.value.to_vec();
        r.finish()?;
        Ok(Self {
            sv_id,
            smp_cnt,
            conf_rev,
            smp_synch,
            sample_data,
        })
    }
}

/// Builds a complete SV frame. The codec places no constraint on `smp_cnt`;
/// wrapping at the sample rate is the publisher's job.
pub fn encode_sv(link: &LinkHeader, appid: u16, pdu: &SvPdu) -> Result<Vec<u8>, CodecError> {
    let apdu = pdu.encode_apdu()?;
    encode_iec_frame(link, ethertype::SV, appid, &apdu)
}

pub fn decode_sv(buf: &[u8]) -> Result<SvFrame, CodecError> {
    let (link, iec, apdu, base) = decode_iec_frame(buf, ethertype::SV)?;
    let pdu = SvPdu::decode_apdu(apdu, base)?;
    Ok(SvFrame { link, iec, pdu })
}

impl fmt::Display for SvFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.pdu;
        writeln!(f, "ethernet")?;
        writeln!(f, "  dst                 {}", self.link.dst)?;
        writeln!(f, "  src                 {}", self.link.src)?;
        if let Some(tag) = self.link.vlan {
            writeln!(f, "  vlan                pcp={} vid={}", tag.pcp, tag.vid)?;
        }
        writeln!(f, "  ethertype           {:#06x} (SV)", ethertype::SV)?;
        writeln!(f, "iec header")?;
        writeln!(f, "  appid               {:#06x}", self.iec.appid)?;
        writeln!(f, "  length              {}", self.iec.length)?;
        writeln!(f, "  reserved1           {:#06x}", self.iec.reserved1)?;
        writeln!(f, "  reserved2           {:#06x}", self.iec.reserved2)?;
        writeln!(f, "savPdu")?;
        writeln!(f, "  noASDU              1")?;
        writeln!(f, "  svID                {:?}", p.sv_id)?;
        writeln!(f, "  smpCnt              {}", p.smp_cnt)?;
        writeln!(f, "  confRev             {}", p.conf_rev)?;
        writeln!(f, "  smpSynch            {}", p.smp_synch)?;
        write!(f, "  seqData             {} octets", p.sample_data.len())?;
        for (i, chunk) in p.sample_data.chunks(16).enumerate() {
            write!(f, "\n    {:04x} ", i * 16)?;
            for b in chunk {
                write!(f, " {b:02x}")?;
            }
        }
        writeln!(f)
    }
}
