use std::io::{BufReader, ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use bytes::BytesMut;

use super::{decode, encode_into, Message, ProtocolError, HEADER_LEN, MAX_FRAME_LEN};

/// Writes one frame.
pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    let mut buf = BytesMut::new();
    encode_into(msg, &mut buf)?;
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one frame. Returns `None` on a clean end of stream before any byte
/// of a new frame.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(std::io::Error::from(ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut frame = vec![0u8; HEADER_LEN + len];
    frame[..HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut frame[HEADER_LEN..])?;
    let (msg, _) = decode(&frame)?;
    Ok(Some(msg))
}

/// A blocking request-response connection with message counters.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pub sent: u64,
    pub received: u64,
}

impl Connection {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> std::io::Result<Self> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn connect_timeout(addr: &std::net::SocketAddr, timeout: Duration) -> std::io::Result<Self> {
        Self::from_stream(TcpStream::connect_timeout(addr, timeout)?)
    }

    pub fn from_stream(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            sent: 0,
            received: 0,
        })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        write_message(&mut self.writer, msg)?;
        self.sent += 1;
        Ok(())
    }

    /// Next message; end of stream is an error here.
    pub fn recv(&mut self) -> Result<Message, ProtocolError> {
        match read_message(&mut self.reader)? {
            Some(m) => {
                self.received += 1;
                Ok(m)
            }
            None => Err(std::io::Error::from(ErrorKind::UnexpectedEof).into()),
        }
    }

    pub fn recv_opt(&mut self) -> Result<Option<Message>, ProtocolError> {
        let m = read_message(&mut self.reader)?;
        if m.is_some() {
            self.received += 1;
        }
        Ok(m)
    }

    pub fn call(&mut self, msg: &Message) -> Result<Message, ProtocolError> {
        self.send(msg)?;
        self.recv()
    }

    pub fn stream(&self) -> &TcpStream {
        &self.writer
    }
}
