//! Replicated service interface and the key-value store used by the harness.

use std::collections::BTreeMap;

use crate::wire::{Reader, WireError, Writer};

/// Deterministic state machine replicated by the protocol. `apply` must be a
/// pure function of current state and operation bytes; snapshots must be
/// canonical so equal states serialize to equal bytes.
pub trait ServiceApplication {
    fn apply(&mut self, op: &[u8]) -> Vec<u8>;
    fn snapshot(&self) -> Vec<u8>;
    fn restore(&mut self, snapshot: &[u8]) -> Result<(), WireError>;
}

/// Operations understood by `KvService`, with a byte codec so they can ride
/// in command payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KvOp {
    Put { key: Vec<u8>, value: Vec<u8> },
    Get { key: Vec<u8> },
    Delete { key: Vec<u8> },
}

const OP_PUT: u8 = 1;
const OP_GET: u8 = 2;
const OP_DELETE: u8 = 3;

const RESULT_OK: u8 = 1;
const RESULT_VALUE: u8 = 2;
const RESULT_ABSENT: u8 = 3;
const RESULT_BAD_OP: u8 = 4;

impl KvOp {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            KvOp::Put { key, value } => {
                w.put_u8(OP_PUT);
                w.put_bytes(key);
                w.put_bytes(value);
            }
            KvOp::Get { key } => {
                w.put_u8(OP_GET);
                w.put_bytes(key);
            }
            KvOp::Delete { key } => {
                w.put_u8(OP_DELETE);
                w.put_bytes(key);
            }
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<KvOp, WireError> {
        let mut r = Reader::new(bytes);
        let tag = r.get_u8()?;
        let op = match tag {
            OP_PUT => KvOp::Put {
                key: r.get_bytes()?,
                value: r.get_bytes()?,
            },
            OP_GET => KvOp::Get {
                key: r.get_bytes()?,
            },
            OP_DELETE => KvOp::Delete {
                key: r.get_bytes()?,
            },
            tag => return Err(WireError::UnknownTag { offset: 0, tag }),
        };
        r.finish()?;
        Ok(op)
    }
}

/// Outcome of a `KvService` operation, decoded from result bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KvResult {
    Ok,
    Value(Vec<u8>),
    Absent,
    BadOp,
}

impl KvResult {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            KvResult::Ok => w.put_u8(RESULT_OK),
            KvResult::Value(v) => {
                w.put_u8(RESULT_VALUE);
                w.put_bytes(v);
            }
            KvResult::Absent => w.put_u8(RESULT_ABSENT),
            KvResult::BadOp => w.put_u8(RESULT_BAD_OP),
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<KvResult, WireError> {
        let mut r = Reader::new(bytes);
        let tag = r.get_u8()?;
        let res = match tag {
            RESULT_OK => KvResult::Ok,
            RESULT_VALUE => KvResult::Value(r.get_bytes()?),
            RESULT_ABSENT => KvResult::Absent,
            RESULT_BAD_OP => KvResult::BadOp,
            tag => return Err(WireError::UnknownTag { offset: 0, tag }),
        };
        r.finish()?;
        Ok(res)
    }
}

/// In-memory key-value store with canonical snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvService {
    data: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl KvService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Applies a decoded op to a raw map; shared with the linearizability
    /// model so service semantics are defined exactly once.
    pub fn step(data: &mut BTreeMap<Vec<u8>, Vec<u8>>, op: &KvOp) -> KvResult {
        match op {
            KvOp::Put { key, value } => {
                data.insert(key.clone(), value.clone());
                KvResult::Ok
            }
            KvOp::Get { key } => match data.get(key) {
                Some(v) => KvResult::Value(v.clone()),
                None => KvResult::Absent,
            },
            KvOp::Delete { key } => {
                data.remove(key);
                KvResult::Ok
            }
        }
    }
}

impl ServiceApplication for KvService {
    fn apply(&mut self, op: &[u8]) -> Vec<u8> {
        match KvOp::decode(op) {
            Ok(op) => KvService::step(&mut self.data, &op).encode(),
            Err(_) => KvResult::BadOp.encode(),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u32(self.data.len() as u32);
        for (k, v) in &self.data {
            w.put_bytes(k);
            w.put_bytes(v);
        }
        w.into_bytes()
    }

    fn restore(&mut self, snapshot: &[u8]) -> Result<(), WireError> {
        let mut r = Reader::new(snapshot);
        let n = r.get_u32()? as usize;
        let mut data = BTreeMap::new();
        for _ in 0..n {
            let k = r.get_bytes()?;
            let v = r.get_bytes()?;
            data.insert(k, v);
        }
        r.finish()?;
        self.data = data;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_delete_semantics() {
        let mut kv = KvService::new();
        let put = KvOp::Put {
            key: b"k".to_vec(),
            value: b"v1".to_vec(),
        };
        assert_eq!(
            KvResult::decode(&kv.apply(&put.encode())).unwrap(),
            KvResult::Ok
        );
        let get = KvOp::Get { key: b"k".to_vec() };
        assert_eq!(
            KvResult::decode(&kv.apply(&get.encode())).unwrap(),
            KvResult::Value(b"v1".to_vec())
        );
        let del = KvOp::Delete { key: b"k".to_vec() };
        kv.apply(&del.encode());
        assert_eq!(
            KvResult::decode(&kv.apply(&get.encode())).unwrap(),
            KvResult::Absent
        );
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let mut kv = KvService::new();
        for i in 0..10u8 {
            kv.apply(
                &KvOp::Put {
                    key: vec![i],
                    value: vec![i, i],
                }
                .encode(),
            );
        }
        let snap = kv.snapshot();
        let mut fresh = KvService::new();
        fresh.restore(&snap).unwrap();
        assert_eq!(fresh, kv);
        assert_eq!(fresh.snapshot(), snap);
    }

    #[test]
    fn garbage_ops_yield_bad_op_not_panic() {
        let mut kv = KvService::new();
        assert_eq!(
            KvResult::decode(&kv.apply(&[0xff, 0x00])).unwrap(),
            KvResult::BadOp
        );
    }

    #[test]
    fn op_codec_round_trip() {
        for op in [
            KvOp::Put {
                key: b"a".to_vec(),
                value: b"b".to_vec(),
            },
            KvOp::Get { key: vec![] },
            KvOp::Delete { key: b"x".to_vec() },
        ] {
            assert_eq!(KvOp::decode(&op.encode()).unwrap(), op);
        }
    }
}
