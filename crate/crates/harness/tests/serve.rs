use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;

use bandx_core::codec::Payload;
use bandx_core::credential::SigningKey;
use bandx_core::market::{Link, OfferTerms};
use bandx_core::money::{Currency, Money};
use bandx_harness::envelope::read_envelope;
use bandx_harness::serve::{bind, spawn_local};
use bandx_harness::service::ClearingHouseService;
use bandx_harness::{msg, Envelope};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn open(addr: SocketAddr) -> Conn {
        let s = TcpStream::connect(addr).unwrap();
        Conn {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    fn raw(&mut self, bytes: &[u8]) -> Envelope {
        self.writer.write_all(bytes).unwrap();
        read_envelope(&mut self.reader).unwrap().expect("a reply")
    }

    fn send(&mut self, e: &Envelope) -> Envelope {
        self.raw(e.encode().as_bytes())
    }
}

fn house() -> SocketAddr {
    spawn_local(Box::new(ClearingHouseService::new("20031119T090000".parse().unwrap()))).unwrap()
}

fn probe(seq: u64) -> Envelope {
    Envelope::new(msg::PROBE, "harness", seq, Payload::new())
}

#[test]
fn malformed_envelope_gets_a_protocol_error_and_the_connection_survives() {
    let mut c = Conn::open(house());
    let r = c.raw(b"HELLO THERE\n");
    assert_eq!(r.msg_type, msg::PROTOCOL_ERROR);
    assert_eq!(r.seq, 0);
    assert_eq!(r.payload.get("code"), Some("ProtocolError"));
    let r = c.raw(b"BXE1 PROBE harness 3 3\nxyz\n");
    assert_eq!(r.msg_type, msg::PROTOCOL_ERROR);
    let r = c.send(&probe(4));
    assert_eq!((r.msg_type.as_str(), r.seq), (msg::PROBED, 4));
    assert_eq!(r.payload.get("offers"), Some("0"));
}

#[test]
fn unknown_msg_type_gets_a_protocol_error_with_its_sequence() {
    let mut c = Conn::open(house());
    let r = c.send(&Envelope::new("FROBNICATE", "harness", 9, Payload::new()));
    assert_eq!(r.msg_type, msg::PROTOCOL_ERROR);
    assert_eq!(r.seq, 9);
    assert_eq!(r.sender, "clearinghouse");
    assert_eq!(c.send(&probe(10)).msg_type, msg::PROBED);
}

#[test]
fn concurrent_clients_are_serialized() {
    let addr = house();
    let handles: Vec<_> = (0..8)
        .map(|i| {
            thread::spawn(move || {
                let key = SigningKey::derive(&format!("serve-test/isp{i}"));
                let cred = OfferTerms::new(
                    Link::new("Rome", &format!("City{i}")),
                    100,
                    Money::from_minor(100 + i, Currency::usd()),
                    "20031130".parse().unwrap(),
                )
                .sign(&key)
                .unwrap();
                let mut c = Conn::open(addr);
                for seq in 1..=5u64 {
                    let e = Envelope::new(
                        msg::POST_OFFER,
                        &key.public_id().to_string(),
                        seq,
                        Payload::new().with_blob("offer", cred.render()),
                    );
                    let r = c.send(&e);
                    assert_eq!((r.msg_type.as_str(), r.seq), (msg::POSTED, seq));
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let r = Conn::open(addr).send(&probe(1));
    assert_eq!(r.payload.get("offers"), Some("8"), "reposts are idempotent");
}

#[test]
fn occupied_address_is_a_bind_failure() {
    let taken = house();
    let err = bind(&taken.to_string()).unwrap_err();
    assert!(err.to_string().contains("cannot bind"), "{err}");
}
