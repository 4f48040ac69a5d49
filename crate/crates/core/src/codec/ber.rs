//! Definite-length BER primitives.
//!
//! Only single-octet tags are supported and every length is definite. That
//! covers the GOOSE and Sampled-Values APDUs, whose tags are all below 31.

use super::CodecError;

/// Constructed bit in the identifier octet.
pub const CONSTRUCTED: u8 = 0x20;

/// Appends a BER length field in minimal form.
pub fn write_length(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
        return;
    }
    let bytes = (len as u64).to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    out.push(0x80 | (8 - skip) as u8);
    out.extend_from_slice(&bytes[skip..]);
}

/// Number of octets `write_length` emits for `len`.
pub fn length_octets(len: usize) -> usize {
    if len < 0x80 {
        1
    } else {
        let bits = usize::BITS - len.leading_zeros();
        1 + bits.div_ceil(8) as usize
    }
}

pub fn write_tlv(out: &mut Vec<u8>, tag: u8, value: &[u8]) {
    out.push(tag);
    write_length(out, value.len());
    out.extend_from_slice(value);
}

/// Writes a constructed TLV whose content is produced by `body`.
pub fn write_constructed(out: &mut Vec<u8>, tag: u8, body: impl FnOnce(&mut Vec<u8>)) {
    let mut content = Vec::new();
    body(&mut content);
    write_tlv(out, tag, &content);
}

/// Minimal two's-complement content octets for a signed integer.
pub fn signed_content(value: i64) -> Vec<u8> {
    let bytes = value.to_be_bytes();
    let mut start = 0;
    while start < 7 {
        let redundant = (bytes[start] == 0x00 && bytes[start + 1] & 0x80 == 0)
            || (bytes[start] == 0xFF && bytes[start + 1] & 0x80 != 0);
        if !redundant {
            break;
        }
        start += 1;
    }
    bytes[start..].to_vec()
}

/// Minimal INTEGER content octets for a non-negative value.
pub fn unsigned_content(value: u32) -> Vec<u8> {
    signed_content(i64::from(value))
}

pub fn write_unsigned(out: &mut Vec<u8>, tag: u8, value: u32) {
    write_tlv(out, tag, &unsigned_content(value));
}

pub fn write_bool(out: &mut Vec<u8>, tag: u8, value: bool) {
    write_tlv(out, tag, &[if value { 0xFF } else { 0x00 }]);
}

/// One decoded TLV.
#[derive(Debug, Clone, Copy)]
pub struct Tlv<'a> {
    pub tag: u8,
    /// Offset of the identifier octet relative to the start of the frame.
    pub offset: usize,
    pub value: &'a [u8],
    /// Offset of the first content octet relative to the start of the frame.
    pub value_offset: usize,
}

/// Cursor over a run of TLVs. Offsets are tracked against the whole frame
/// so errors point at the offending octet.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    /// Reads the identifier and length octets without consuming anything.
    /// Returns `(tag, header_len, content_len)`.
    pub fn peek_header(&self) -> Result<(u8, usize, usize), CodecError> {
        let rest = &self.buf[self.pos..];
        let tag = *rest.first().ok_or(CodecError::Truncated {
            needed: self.offset() + 1,
            available: self.base + self.buf.len(),
        })?;
        if tag & 0x1F == 0x1F {
            return Err(CodecError::MalformedBer {
                offset: self.offset(),
                reason: "multi-octet tags are not supported",
            });
        }
        let first = *rest.get(1).ok_or(CodecError::Truncated {
            needed: self.offset() + 2,
            available: self.base + self.buf.len(),
        })?;
        if first < 0x80 {
            return Ok((tag, 2, first as usize));
        }
        let count = (first & 0x7F) as usize;
        if count == 0 {
            return Err(CodecError::MalformedBer {
                offset: self.offset() + 1,
                reason: "indefinite length",
            });
        }
        if count > 4 {
            return Err(CodecError::MalformedBer {
                offset: self.offset() + 1,
                reason: "length field wider than four octets",
            });
        }
        let octets = rest.get(2..2 + count).ok_or(CodecError::Truncated {
            needed: self.offset() + 2 + count,
            available: self.base + self.buf.len(),
        })?;
        let len = octets.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
        Ok((tag, 2 + count, len))
    }

    pub fn next_tlv(&mut self) -> Result<Tlv<'a>, CodecError> {
        let (tag, header_len, len) = self.peek_header()?;
        let start = self.pos + header_len;
        let available = self.buf.len() - start;
        if len > available {
            return Err(CodecError::Truncated {
                needed: self.base + start + len,
                available: self.base + self.buf.len(),
            });
        }
        let tlv = Tlv {
            tag,
            offset: self.offset(),
            value: &self.buf[start..start + len],
            value_offset: self.base + start,
        };
        self.pos = start + len;
        Ok(tlv)
    }

    /// Reads the next TLV and checks its tag.
    pub fn expect(&mut self, tag: u8) -> Result<Tlv<'a>, CodecError> {
        let offset = self.offset();
        let tlv = self.next_tlv()?;
        if tlv.tag != tag {
            return Err(CodecError::MalformedBer {
                offset,
                reason: "unexpected tag",
            });
        }
        Ok(tlv)
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CodecError::MalformedBer {
                offset: self.offset(),
                reason: "unexpected trailing element",
            })
        }
    }
}

impl<'a> Tlv<'a> {
    pub fn children(&self) -> Reader<'a> {
        Reader::new(self.value, self.value_offset)
    }

    fn malformed(&self, reason: &'static str) -> CodecError {
        CodecError::MalformedBer {
            offset: self.offset,
            reason,
        }
    }

    pub fn as_i64(&self) -> Result<i64, CodecError> {
        if self.value.is_empty() || self.value.len() > 8 {
            return Err(self.malformed("integer content must be 1..=8 octets"));
        }
        let negative = self.value[0] & 0x80 != 0;
        let init: i64 = if negative { -1 } else { 0 };
        Ok(self
            .value
            .iter()
            .fold(init, |acc, b| (acc << 8) | i64::from(*b)))
    }

    pub fn as_u32(&self) -> Result<u32, CodecError> {
        if self.value.len() > 5 {
            return Err(self.malformed("unsigned integer wider than 32 bits"));
        }
        let v = self.as_i64()?;
        u32::try_from(v).map_err(|_| self.malformed("integer out of unsigned 32-bit range"))
    }

    pub fn as_bool(&self) -> Result<bool, CodecError> {
        match self.value {
            [b] => Ok(*b != 0),
            _ => Err(self.malformed("boolean content must be one octet")),
        }
    }

    pub fn as_visible_string(&self) -> Result<String, CodecError> {
        if !self.value.iter().all(|b| (0x20..=0x7E).contains(b)) {
            return Err(self.malformed("visible-string holds a non-printable octet"));
        }
        // all octets are ASCII
        Ok(self.value.iter().map(|b| *b as char).collect())
    }

    /// Fixed-width big-endian unsigned content.
    pub fn as_fixed_be(&self, width: usize) -> Result<u64, CodecError> {
        if self.value.len() != width {
            return Err(self.malformed("fixed-width field has the wrong size"));
        }
        Ok(self.value.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b)))
    }
}
