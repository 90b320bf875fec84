mod support;

use std::io::Write;
use std::net::TcpListener;
use std::thread;

use proptest::collection::vec;
use proptest::prelude::*;

use dispatchfuzz::protocol::{decode, encode, read_message, Connection, FrameReader, Message};
use support::messages::message;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn encode_decode_identity(msg in message()) {
        let bytes = encode(&msg).unwrap();
        let (back, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn chunked_stream_reassembles(
        msgs in vec(message(), 1..12),
        cuts in vec(1usize..40, 1..64),
    ) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut reader = FrameReader::new();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut i = 0;
        while pos < stream.len() {
            let n = cuts[i % cuts.len()].min(stream.len() - pos);
            reader.push(&stream[pos..pos + n]);
            pos += n;
            i += 1;
            while let Some(m) = reader.next_message().unwrap() {
                out.push(m);
            }
        }
        prop_assert_eq!(reader.buffered(), 0);
        prop_assert_eq!(out, msgs);
    }

    #[test]
    fn byte_at_a_time_blocking_reads(msgs in vec(message(), 1..6)) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut r = OneByte(&stream);
        let mut out = Vec::new();
        while let Some(m) = read_message(&mut r).unwrap() {
            out.push(m);
        }
        prop_assert_eq!(out, msgs);
    }
}

/// Reader that yields at most one byte per call.
struct OneByte<'a>(&'a [u8]);

impl std::io::Read for OneByte<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.0.is_empty() || buf.is_empty() {
            return Ok(0);
        }
        buf[0] = self.0[0];
        self.0 = &self.0[1..];
        Ok(1)
    }
}

#[test]
fn tcp_delivers_split_writes() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let msgs = vec![
        Message::RequestTask { worker_id: "w0".into() },
        Message::Shutdown,
        Message::GetStats,
    ];
    let bytes: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
    let writer = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        s.set_nodelay(true).unwrap();
        for chunk in bytes.chunks(3) {
            s.write_all(chunk).unwrap();
            s.flush().unwrap();
            thread::sleep(std::time::Duration::from_millis(1));
        }
    });
    let mut conn = Connection::connect(addr).unwrap();
    for m in &msgs {
        assert_eq!(&conn.recv().unwrap(), m);
    }
    assert!(conn.recv_opt().unwrap().is_none());
    writer.join().unwrap();
}

#[test]
fn truncated_frame_is_an_error() {
    let bytes = encode(&Message::RequestTask { worker_id: "w1".into() }).unwrap();
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    let mut r = OneByte(&bytes[..bytes.len() - 1]);
    assert!(read_message(&mut r).is_err());
}
