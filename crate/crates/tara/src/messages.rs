//! Protocol tuple types and their canonical wire encoding.
//!
//! Layout: one tag byte, then the fields in declaration order. Integers are
//! fixed-width little-endian, byte strings and lists are u32-length-prefixed,
//! maps are encoded in ascending key order. Structurally equal tuples always
//! produce identical bytes, which makes encodings safe to hash and compare.

use std::collections::BTreeMap;
use std::fmt;

use crate::wire::{fnv64, Reader, WireError, Writer};

pub type ClientId = u64;
pub type ReplicaId = u32;
pub type ViewNumber = u64;
pub type RequestNumber = u64;
/// Merged or partition-local sequence number. Signed so that "nothing stable
/// yet" can be expressed as -1 without a separate sentinel type.
pub type Seq = i64;

/// Pseudo source id carried by filler requests minted during view change.
pub const NOOP_SOURCE: ReplicaId = ReplicaId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommandId {
    pub client: ClientId,
    /// Client-local logical timestamp; strictly increasing per client.
    pub timestamp: u64,
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.client, self.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub id: CommandId,
    /// Opaque service operation; the replication layer never interprets it.
    pub op: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub source: ReplicaId,
    /// Request number; strictly increasing per source.
    pub number: RequestNumber,
    pub commands: Vec<Command>,
}

impl Request {
    /// Filler request for a sequence gap; executes as a skip and produces no
    /// replies. `number` is the gap's partition-local sequence number, which
    /// keeps (source, number) unique within a partition.
    pub fn noop(sequence: Seq) -> Self {
        Request {
            source: NOOP_SOURCE,
            number: sequence as u64,
            commands: Vec::new(),
        }
    }

    pub fn is_noop(&self) -> bool {
        self.source == NOOP_SOURCE
    }

    /// Short digest used in traces and audit records: `source:number:hash8`.
    pub fn digest(&self) -> String {
        let h = fnv64(&Tuple::Request(self.clone()).encode());
        format!("{}:{}:{:08x}", self.source, self.number, h as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Propose {
    pub proposer: ReplicaId,
    pub sequence: Seq,
    pub view: ViewNumber,
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commit {
    pub committer: ReplicaId,
    pub sequence: Seq,
    pub view: ViewNumber,
    pub request: Request,
}

/// Announces that an executor wrote a durable snapshot covering every
/// position up to and including `sequence`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checkpoint {
    pub executor: ReplicaId,
    pub sequence: Seq,
}

/// Stability threshold announcement from a garbage-collection source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stable {
    pub source: ReplicaId,
    pub stable_sequence: Seq,
}

/// Outstanding-work report: highest request number a source has handed to
/// consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub source: ReplicaId,
    pub request_number: RequestNumber,
}

/// Progress report from an executor: per source, the highest request number
/// up to which every request has been executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Actual {
    pub executor: ReplicaId,
    pub progress: BTreeMap<ReplicaId, RequestNumber>,
}

/// View announcement from a controller; distributed through the view
/// sink/source feedback loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NewView {
    pub controller: ReplicaId,
    pub view: ViewNumber,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRecord {
    pub view: ViewNumber,
    pub request: Request,
}

/// A committer's full window contents, handed to the proposer taking over in
/// `view_target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Records {
    pub committer: ReplicaId,
    pub view_target: ViewNumber,
    pub records: BTreeMap<Seq, SlotRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub command: CommandId,
    pub result: Vec<u8>,
    /// Request source the command entered through; replies route back to the
    /// reply sink with the same index.
    pub source: ReplicaId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tuple {
    Command(Command),
    Request(Request),
    Propose(Propose),
    Commit(Commit),
    Checkpoint(Checkpoint),
    Stable(Stable),
    Target(Target),
    Actual(Actual),
    NewView(NewView),
    Records(Records),
    Reply(Reply),
}

const TAG_COMMAND: u8 = 1;
const TAG_REQUEST: u8 = 2;
const TAG_PROPOSE: u8 = 3;
const TAG_COMMIT: u8 = 4;
const TAG_CHECKPOINT: u8 = 5;
const TAG_STABLE: u8 = 6;
const TAG_TARGET: u8 = 7;
const TAG_ACTUAL: u8 = 8;
const TAG_NEW_VIEW: u8 = 9;
const TAG_RECORDS: u8 = 10;
const TAG_REPLY: u8 = 11;

fn put_command(w: &mut Writer, c: &Command) {
    w.put_u64(c.id.client);
    w.put_u64(c.id.timestamp);
    w.put_bytes(&c.op);
}

fn get_command(r: &mut Reader) -> Result<Command, WireError> {
    let client = r.get_u64()?;
    let timestamp = r.get_u64()?;
    let op = r.get_bytes()?;
    Ok(Command {
        id: CommandId { client, timestamp },
        op,
    })
}

fn put_request(w: &mut Writer, req: &Request) {
    w.put_u32(req.source);
    w.put_u64(req.number);
    w.put_u32(req.commands.len() as u32);
    for c in &req.commands {
        put_command(w, c);
    }
}

fn get_request(r: &mut Reader) -> Result<Request, WireError> {
    let source = r.get_u32()?;
    let number = r.get_u64()?;
    let n = r.get_u32()? as usize;
    let mut commands = Vec::new();
    for _ in 0..n {
        commands.push(get_command(r)?);
    }
    Ok(Request {
        source,
        number,
        commands,
    })
}

impl Tuple {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Tuple::Command(c) => {
                w.put_u8(TAG_COMMAND);
                put_command(&mut w, c);
            }
            Tuple::Request(req) => {
                w.put_u8(TAG_REQUEST);
                put_request(&mut w, req);
            }
            Tuple::Propose(p) => {
                w.put_u8(TAG_PROPOSE);
                w.put_u32(p.proposer);
                w.put_i64(p.sequence);
                w.put_u64(p.view);
                put_request(&mut w, &p.request);
            }
            Tuple::Commit(c) => {
                w.put_u8(TAG_COMMIT);
                w.put_u32(c.committer);
                w.put_i64(c.sequence);
                w.put_u64(c.view);
                put_request(&mut w, &c.request);
            }
            Tuple::Checkpoint(c) => {
                w.put_u8(TAG_CHECKPOINT);
                w.put_u32(c.executor);
                w.put_i64(c.sequence);
            }
            Tuple::Stable(s) => {
                w.put_u8(TAG_STABLE);
                w.put_u32(s.source);
                w.put_i64(s.stable_sequence);
            }
            Tuple::Target(t) => {
                w.put_u8(TAG_TARGET);
                w.put_u32(t.source);
                w.put_u64(t.request_number);
            }
            Tuple::Actual(a) => {
                w.put_u8(TAG_ACTUAL);
                w.put_u32(a.executor);
                w.put_u32(a.progress.len() as u32);
                for (src, q) in &a.progress {
                    w.put_u32(*src);
                    w.put_u64(*q);
                }
            }
            Tuple::NewView(v) => {
                w.put_u8(TAG_NEW_VIEW);
                w.put_u32(v.controller);
                w.put_u64(v.view);
            }
            Tuple::Records(rec) => {
                w.put_u8(TAG_RECORDS);
                w.put_u32(rec.committer);
                w.put_u64(rec.view_target);
                w.put_u32(rec.records.len() as u32);
                for (s, slot) in &rec.records {
                    w.put_i64(*s);
                    w.put_u64(slot.view);
                    put_request(&mut w, &slot.request);
                }
            }
            Tuple::Reply(rep) => {
                w.put_u8(TAG_REPLY);
                w.put_u64(rep.command.client);
                w.put_u64(rep.command.timestamp);
                w.put_bytes(&rep.result);
                w.put_u32(rep.source);
            }
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Tuple, WireError> {
        let mut r = Reader::new(bytes);
        let tag = r.get_u8()?;
        let tuple = match tag {
            TAG_COMMAND => Tuple::Command(get_command(&mut r)?),
            TAG_REQUEST => Tuple::Request(get_request(&mut r)?),
            TAG_PROPOSE => {
                let proposer = r.get_u32()?;
                let sequence = r.get_i64()?;
                let view = r.get_u64()?;
                let request = get_request(&mut r)?;
                Tuple::Propose(Propose {
                    proposer,
                    sequence,
                    view,
                    request,
                })
            }
            TAG_COMMIT => {
                let committer = r.get_u32()?;
                let sequence = r.get_i64()?;
                let view = r.get_u64()?;
                let request = get_request(&mut r)?;
                Tuple::Commit(Commit {
                    committer,
                    sequence,
                    view,
                    request,
                })
            }
            TAG_CHECKPOINT => Tuple::Checkpoint(Checkpoint {
                executor: r.get_u32()?,
                sequence: r.get_i64()?,
            }),
            TAG_STABLE => Tuple::Stable(Stable {
                source: r.get_u32()?,
                stable_sequence: r.get_i64()?,
            }),
            TAG_TARGET => Tuple::Target(Target {
                source: r.get_u32()?,
                request_number: r.get_u64()?,
            }),
            TAG_ACTUAL => {
                let executor = r.get_u32()?;
                let n = r.get_u32()? as usize;
                let mut progress = BTreeMap::new();
                for _ in 0..n {
                    let src = r.get_u32()?;
                    let q = r.get_u64()?;
                    progress.insert(src, q);
                }
                Tuple::Actual(Actual { executor, progress })
            }
            TAG_NEW_VIEW => Tuple::NewView(NewView {
                controller: r.get_u32()?,
                view: r.get_u64()?,
            }),
            TAG_RECORDS => {
                let committer = r.get_u32()?;
                let view_target = r.get_u64()?;
                let n = r.get_u32()? as usize;
                let mut records = BTreeMap::new();
                for _ in 0..n {
                    let s = r.get_i64()?;
                    let view = r.get_u64()?;
                    let request = get_request(&mut r)?;
                    records.insert(s, SlotRecord { view, request });
                }
                Tuple::Records(Records {
                    committer,
                    view_target,
                    records,
                })
            }
            TAG_REPLY => {
                let client = r.get_u64()?;
                let timestamp = r.get_u64()?;
                let result = r.get_bytes()?;
                let source = r.get_u32()?;
                Tuple::Reply(Reply {
                    command: CommandId { client, timestamp },
                    result,
                    source,
                })
            }
            other => {
                return Err(WireError::UnknownTag {
                    offset: 0,
                    tag: other,
                })
            }
        };
        r.finish()?;
        Ok(tuple)
    }

    pub fn digest64(&self) -> u64 {
        fnv64(&self.encode())
    }

    /// Compact single-line summary for trace records. Fields are
    /// semicolon-separated; requests appear as `source:number:hash8`.
    pub fn summary(&self) -> String {
        match self {
            Tuple::Command(c) => format!("command;{};{}", c.id.client, c.id.timestamp),
            Tuple::Request(r) => format!("request;{}", r.digest()),
            Tuple::Propose(p) => format!(
                "propose;{};{};{};{}",
                p.proposer,
                p.sequence,
                p.view,
                p.request.digest()
            ),
            Tuple::Commit(c) => format!(
                "commit;{};{};{};{}",
                c.committer,
                c.sequence,
                c.view,
                c.request.digest()
            ),
            Tuple::Checkpoint(c) => format!("checkpoint;{};{}", c.executor, c.sequence),
            Tuple::Stable(s) => format!("stable;{};{}", s.source, s.stable_sequence),
            Tuple::Target(t) => format!("target;{};{}", t.source, t.request_number),
            Tuple::Actual(a) => format!("actual;{};{:08x}", a.executor, self.digest64() as u32),
            Tuple::NewView(v) => format!("view;{};{}", v.controller, v.view),
            Tuple::Records(r) => format!(
                "records;{};{};{};{:08x}",
                r.committer,
                r.view_target,
                r.records.len(),
                self.digest64() as u32
            ),
            Tuple::Reply(r) => format!(
                "reply;{};{};{};{:08x}",
                r.command.client,
                r.command.timestamp,
                r.source,
                fnv64(&r.result) as u32
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_request() -> Request {
        Request {
            source: 1,
            number: 7,
            commands: vec![
                Command {
                    id: CommandId {
                        client: 3,
                        timestamp: 12,
                    },
                    op: vec![0xaa, 0xbb],
                },
                Command {
                    id: CommandId {
                        client: 4,
                        timestamp: 1,
                    },
                    op: vec![],
                },
            ],
        }
    }

    fn sample_tuples() -> Vec<Tuple> {
        vec![
            Tuple::Command(Command {
                id: CommandId {
                    client: 9,
                    timestamp: 2,
                },
                op: vec![1, 2, 3],
            }),
            Tuple::Request(sample_request()),
            Tuple::Propose(Propose {
                proposer: 0,
                sequence: 41,
                view: 2,
                request: sample_request(),
            }),
            Tuple::Commit(Commit {
                committer: 2,
                sequence: 41,
                view: 2,
                request: sample_request(),
            }),
            Tuple::Checkpoint(Checkpoint {
                executor: 1,
                sequence: 100,
            }),
            Tuple::Stable(Stable {
                source: 0,
                stable_sequence: 200,
            }),
            Tuple::Target(Target {
                source: 1,
                request_number: 55,
            }),
            Tuple::Actual(Actual {
                executor: 2,
                progress: [(0u32, 10u64), (1, 9)].into_iter().collect(),
            }),
            Tuple::NewView(NewView {
                controller: 1,
                view: 3,
            }),
            Tuple::Records(Records {
                committer: 2,
                view_target: 3,
                records: [(
                    41i64,
                    SlotRecord {
                        view: 2,
                        request: sample_request(),
                    },
                )]
                .into_iter()
                .collect(),
            }),
            Tuple::Reply(Reply {
                command: CommandId {
                    client: 3,
                    timestamp: 12,
                },
                result: vec![0x01],
                source: 1,
            }),
        ]
    }

    #[test]
    fn round_trip_all_kinds() {
        for t in sample_tuples() {
            let bytes = t.encode();
            assert_eq!(Tuple::decode(&bytes).unwrap(), t);
        }
    }

    #[test]
    fn equal_tuples_encode_identically() {
        let a = Tuple::Actual(Actual {
            executor: 2,
            progress: [(1u32, 9u64), (0, 10)].into_iter().collect(),
        });
        let b = Tuple::Actual(Actual {
            executor: 2,
            progress: [(0u32, 10u64), (1, 9)].into_iter().collect(),
        });
        assert_eq!(a, b);
        assert_eq!(a.encode(), b.encode());
    }

    // Frozen byte layouts. These fail if the wire format drifts.
    #[test]
    fn golden_encodings() {
        let hex = |t: &Tuple| -> String { t.encode().iter().map(|b| format!("{b:02x}")).collect() };
        let checkpoint = Tuple::Checkpoint(Checkpoint {
            executor: 1,
            sequence: 100,
        });
        assert_eq!(hex(&checkpoint), "05010000006400000000000000");
        let stable = Tuple::Stable(Stable {
            source: 0,
            stable_sequence: -1,
        });
        assert_eq!(hex(&stable), "0600000000ffffffffffffffff");
        let view = Tuple::NewView(NewView {
            controller: 1,
            view: 3,
        });
        assert_eq!(hex(&view), "09010000000300000000000000");
        let request = Tuple::Request(Request {
            source: 1,
            number: 7,
            commands: vec![Command {
                id: CommandId {
                    client: 3,
                    timestamp: 12,
                },
                op: vec![0xaa],
            }],
        });
        assert_eq!(
            hex(&request),
            "02010000000700000000000000010000000300000000000000\
             0c0000000000000001000000aa"
        );
        let reply = Tuple::Reply(Reply {
            command: CommandId {
                client: 3,
                timestamp: 12,
            },
            result: vec![0x01],
            source: 1,
        });
        assert_eq!(
            hex(&reply),
            "0b03000000000000000c00000000000000010000000101000000"
        );
    }

    #[test]
    fn noop_requests_are_recognizable() {
        let n = Request::noop(42);
        assert!(n.is_noop());
        assert!(n.commands.is_empty());
        assert!(!sample_request().is_noop());
    }

    proptest! {
        #[test]
        fn decode_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Tuple::decode(&bytes);
        }

        #[test]
        fn request_round_trip(
            source in 0u32..8,
            number in 0u64..1000,
            ops in proptest::collection::vec(
                (0u64..16, 0u64..64, proptest::collection::vec(any::<u8>(), 0..12)),
                0..6,
            ),
        ) {
            let commands = ops
                .into_iter()
                .map(|(client, timestamp, op)| Command {
                    id: CommandId { client, timestamp },
                    op,
                })
                .collect();
            let t = Tuple::Request(Request { source, number, commands });
            prop_assert_eq!(Tuple::decode(&t.encode()).unwrap(), t);
        }
    }
}
