//! Canonical big-endian encoding.
//!
//! ```text
//! op u8 | flags u8 | src u16 | dst u16 | index u16 | pad u16 |
//! fingerprint u32 | ts u32 | req_id u64 | payload_len u16 | payload
//! ```

use super::*;

/// Bytes before the payload length prefix.
pub const HEADER_LEN: usize = 26;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) -> Result<(), WireError> {
        let len = u16::try_from(b.len()).map_err(|_| WireError::PayloadOverflow { len: b.len() })?;
        self.u16(len);
        self.buf.extend_from_slice(b);
        Ok(())
    }
    fn delta(&mut self, d: &FieldDelta) -> Result<(), WireError> {
        if !d.is_consistent() {
            return Err(WireError::Malformed("delta bitmap/value count mismatch"));
        }
        self.u32(d.bitmap);
        for &v in &d.values {
            self.u32(v);
        }
        Ok(())
    }
    fn meta(&mut self, m: &MetadataPayload) -> Result<(), WireError> {
        m.check_size()?;
        match m {
            MetadataPayload::Full(loc) => {
                self.u8(0);
                self.u32(loc.log_id);
                self.u16(loc.data_node);
            }
            MetadataPayload::Partial(d) => {
                self.u8(1);
                self.delta(d)?;
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u16()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn flag(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Malformed("bad presence flag")),
        }
    }
    fn delta(&mut self) -> Result<FieldDelta, WireError> {
        let bitmap = self.u32()?;
        let n = bitmap.count_ones() as usize;
        let values = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        Ok(FieldDelta { bitmap, values })
    }
    fn meta(&mut self) -> Result<MetadataPayload, WireError> {
        let m = match self.u8()? {
            0 => MetadataPayload::Full(Location { log_id: self.u32()?, data_node: self.u16()? }),
            1 => MetadataPayload::Partial(self.delta()?),
            _ => return Err(WireError::Malformed("bad metadata kind")),
        };
        m.check_size()?;
        Ok(m)
    }
}

fn encode_body(w: &mut Writer, body: &Body) -> Result<(), WireError> {
    match body {
        Body::DataWriteReq { key, value, delta } => {
            w.bytes(key)?;
            w.bytes(value)?;
            match delta {
                Some(d) => {
                    MetadataPayload::Partial(d.clone()).check_size()?;
                    w.u8(1);
                    w.delta(d)?;
                }
                None => w.u8(0),
            }
        }
        Body::DataWriteResp { key, log_id, meta } => {
            w.bytes(key)?;
            w.u32(*log_id);
            w.meta(meta)?;
        }
        Body::DataReadReq { key, log_id } => {
            w.bytes(key)?;
            w.u32(*log_id);
        }
        Body::DataReadResp(outcome) => match outcome {
            ReadOutcome::Value(v) => {
                w.u8(0);
                w.bytes(v)?;
            }
            ReadOutcome::ValidationFail => w.u8(1),
            ReadOutcome::InvalidLogId => w.u8(2),
        },
        Body::MetaUpdateReq { key, meta } => {
            w.bytes(key)?;
            w.meta(meta)?;
        }
        Body::MetaReadReq { key, attached } => {
            w.bytes(key)?;
            match attached {
                Some(m) => {
                    w.u8(1);
                    w.meta(m)?;
                }
                None => w.u8(0),
            }
        }
        Body::MetaReadResp(view) => match view {
            MetaView::NotFound => w.u8(0),
            MetaView::Location(loc) => {
                w.u8(1);
                w.u32(loc.log_id);
                w.u16(loc.data_node);
            }
            MetaView::Fields(fields) => {
                w.u8(2);
                let n = u8::try_from(fields.len()).map_err(|_| WireError::Malformed("too many fields"))?;
                w.u8(n);
                for &f in fields {
                    w.u32(f);
                }
            }
        },
        Body::RecoverResp(rec) => match rec {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                w.bytes(&r.key)?;
                w.u32(r.log_id);
                w.meta(&r.meta)?;
            }
        },
        Body::Control { code, arg, data } => {
            w.u8(*code);
            w.u64(*arg);
            w.bytes(data)?;
        }
        Body::MetaUpdateResp | Body::ClearReq | Body::ClearAck | Body::RecoverReq => {}
    }
    Ok(())
}

fn decode_body(op: OpType, r: &mut Reader<'_>) -> Result<Body, WireError> {
    Ok(match op {
        OpType::DataWriteReq => {
            let key = r.bytes()?;
            let value = r.bytes()?;
            let delta = if r.flag()? { Some(r.delta()?) } else { None };
            Body::DataWriteReq { key, value, delta }
        }
        OpType::DataWriteResp => Body::DataWriteResp { key: r.bytes()?, log_id: r.u32()?, meta: r.meta()? },
        OpType::DataReadReq => Body::DataReadReq { key: r.bytes()?, log_id: r.u32()? },
        OpType::DataReadResp => Body::DataReadResp(match r.u8()? {
            0 => ReadOutcome::Value(r.bytes()?),
            1 => ReadOutcome::ValidationFail,
            2 => ReadOutcome::InvalidLogId,
            _ => return Err(WireError::Malformed("bad read outcome")),
        }),
        OpType::MetaUpdateReq => Body::MetaUpdateReq { key: r.bytes()?, meta: r.meta()? },
        OpType::MetaUpdateResp => Body::MetaUpdateResp,
        OpType::MetaReadReq => {
            let key = r.bytes()?;
            let attached = if r.flag()? { Some(r.meta()?) } else { None };
            Body::MetaReadReq { key, attached }
        }
        OpType::MetaReadResp => Body::MetaReadResp(match r.u8()? {
            0 => MetaView::NotFound,
            1 => MetaView::Location(Location { log_id: r.u32()?, data_node: r.u16()? }),
            2 => {
                let n = r.u8()? as usize;
                MetaView::Fields((0..n).map(|_| r.u32()).collect::<Result<_, _>>()?)
            }
            _ => return Err(WireError::Malformed("bad meta view")),
        }),
        OpType::ClearReq => Body::ClearReq,
        OpType::ClearAck => Body::ClearAck,
        OpType::RecoverReq => Body::RecoverReq,
        OpType::RecoverResp => Body::RecoverResp(if r.flag()? {
            Some(Recovered { key: r.bytes()?, log_id: r.u32()?, meta: r.meta()? })
        } else {
            None
        }),
        OpType::Control => Body::Control { code: r.u8()?, arg: r.u64()?, data: r.bytes()? },
    })
}

/// Serializes a message into its canonical byte form.
pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let h = &msg.header;
    if h.op != msg.body.op() {
        return Err(WireError::Malformed("header op does not match body"));
    }
    let mut body = Writer { buf: Vec::new() };
    encode_body(&mut body, &msg.body)?;
    let payload_len = u16::try_from(body.buf.len()).map_err(|_| WireError::PayloadOverflow { len: body.buf.len() })?;

    let mut w = Writer { buf: Vec::with_capacity(HEADER_LEN + 2 + body.buf.len()) };
    w.u8(h.op as u8);
    w.u8(h.flags.bits());
    w.u16(h.src);
    w.u16(h.dst);
    w.u16(h.hash.index);
    w.u16(0);
    w.u32(h.hash.fingerprint);
    w.u32(h.ts.0);
    w.u64(h.req_id);
    debug_assert_eq!(w.buf.len(), HEADER_LEN);
    w.u16(payload_len);
    w.buf.extend_from_slice(&body.buf);
    Ok(w.buf)
}

/// Parses a message produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() < HEADER_LEN + 2 {
        return Err(WireError::Truncated);
    }
    let mut r = Reader { buf: bytes };
    let op = OpType::from_u8(r.u8()?)?;
    let flags = Flags::from_bits(r.u8()?).ok_or(WireError::Malformed("unknown flag bits"))?;
    let src = r.u16()?;
    let dst = r.u16()?;
    let index = r.u16()?;
    let _pad = r.u16()?;
    let fingerprint = r.u32()?;
    let ts = Timestamp(r.u32()?);
    let req_id = r.u64()?;
    let len = r.u16()? as usize;
    let payload = r.take(len)?;
    if !r.buf.is_empty() {
        return Err(WireError::Malformed("trailing bytes"));
    }
    let mut pr = Reader { buf: payload };
    let body = decode_body(op, &mut pr)?;
    if !pr.buf.is_empty() {
        return Err(WireError::Malformed("trailing payload bytes"));
    }
    Ok(Message {
        header: DeltaHeader { op, flags, src, dst, hash: KeyHash { index, fingerprint }, ts, req_id },
        body,
    })
}
