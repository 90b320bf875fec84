//! TCP front end for [`SeedStore`] and the matching client.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use super::{
    ActivateOutcome, CrashInfo, CrashRecord, FuzzStatus, PutOutcome, Seed, SeedId, SeedStore,
    StatusDelta, StoreAccess, StoreError, StoreStats,
};
use crate::protocol::{read_message, write_message, Connection, Message, ProtocolError};

/// Retry hint sent when an evaluator polls an empty pending queue.
pub const EMPTY_QUEUE_RETRY_MS: u32 = 100;

pub struct StoreServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl StoreServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for s in self.streams.lock().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Serves `store` on `listener`, one thread per connection.
pub fn serve_store(listener: TcpListener, store: Arc<SeedStore>) -> std::io::Result<StoreServer> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let streams: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));
    let accept = {
        let stop = stop.clone();
        let streams = streams.clone();
        std::thread::Builder::new()
            .name("store-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(c) = stream.try_clone() {
                        streams.lock().push(c);
                    }
                    let store = store.clone();
                    let stop = stop.clone();
                    let _ = std::thread::Builder::new()
                        .name("store-conn".into())
                        .spawn(move || {
                            if let Err(e) = handle_connection(stream, &store, &stop) {
                                log::debug!("store connection ended: {e}");
                            }
                        });
                }
            })?
    };
    Ok(StoreServer {
        addr,
        stop,
        streams,
        accept: Some(accept),
    })
}

fn error_reply(e: &StoreError) -> Message {
    let message = match e {
        StoreError::NotFound(id) | StoreError::HashMismatch(id) | StoreError::NotACrash(id) => {
            id.to_hex()
        }
        other => other.to_string(),
    };
    Message::StoreError {
        code: e.code(),
        message,
    }
}

fn handle_connection(
    stream: TcpStream,
    store: &SeedStore,
    stop: &AtomicBool,
) -> Result<(), ProtocolError> {
    let mut reader = std::io::BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    while let Some(msg) = read_message(&mut reader)? {
        let reply = match msg {
            Message::PutSeed { seed, status } => match store.put_seed(seed, status) {
                Ok(p) => Message::PutSeedOk {
                    seed_id: p.id,
                    fresh: p.fresh,
                },
                Err(e) => error_reply(&e),
            },
            Message::GetSeed { seed_id } => match store.get_seed(seed_id) {
                Ok(seed) => Message::SeedData { seed },
                Err(e) => error_reply(&e),
            },
            Message::GetStatus { seed_id } => match store.get_status(seed_id) {
                Ok(status) => Message::StatusValue { seed_id, status },
                Err(e) => error_reply(&e),
            },
            Message::UpdateStatus { seed_id, delta } => match store.update_status(seed_id, delta) {
                Ok(status) => Message::StatusValue { seed_id, status },
                Err(e) => error_reply(&e),
            },
            Message::EvalBatchRequest { max, .. } => {
                let seed_ids = store.pop_pending(max as usize);
                if seed_ids.is_empty() {
                    Message::NoTaskAvailable {
                        retry_after_ms: EMPTY_QUEUE_RETRY_MS,
                    }
                } else {
                    Message::EvalBatch { seed_ids }
                }
            }
            Message::ActivateSeed {
                seed_id,
                coverage_digest,
            } => match store.activate(seed_id, coverage_digest) {
                Ok(ActivateOutcome::Activated(status)) => Message::StatusValue { seed_id, status },
                Ok(ActivateOutcome::DuplicateCoverage) => Message::DuplicateCoverage { seed_id },
                Err(e) => error_reply(&e),
            },
            Message::DiscardSeed { seed_id } => match store.discard_seed(seed_id) {
                Ok(()) => Message::Ack,
                Err(e) => error_reply(&e),
            },
            Message::PutCrash { record } => match store.put_crash(record) {
                Ok(fresh) => Message::PutCrashOk { fresh },
                Err(e) => error_reply(&e),
            },
            Message::ListActive { since } => Message::SeedIds {
                seed_ids: store.list_active(since as usize),
            },
            Message::GetStats => Message::Stats {
                stats: store.stats(),
            },
            Message::ListCrashes => Message::Crashes {
                crashes: store.crashes(),
            },
            Message::Subscribe => return stream_signals(&mut writer, store, stop),
            Message::Shutdown => return Ok(()),
            other => Message::StoreError {
                code: StoreError::Protocol(String::new()).code(),
                message: format!("store does not handle {}", other.name()),
            },
        };
        write_message(&mut writer, &reply)?;
    }
    Ok(())
}

fn stream_signals(
    writer: &mut TcpStream,
    store: &SeedStore,
    stop: &AtomicBool,
) -> Result<(), ProtocolError> {
    let rx = store.subscribe();
    write_message(writer, &Message::Ack)?;
    while !stop.load(Ordering::SeqCst) {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(seed_id) => write_message(writer, &Message::UpdateSignal { seed_id })?,
            Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
            Err(_) => break,
        }
    }
    Ok(())
}

/// Blocking store client over one TCP connection.
pub struct RemoteStore {
    conn: Connection,
}

fn unexpected(m: Message) -> StoreError {
    StoreError::Protocol(format!("unexpected reply {}", m.name()))
}

fn remote_error(code: u8, message: String) -> StoreError {
    let id = || message.parse::<SeedId>().ok();
    match code {
        1 => match id() {
            Some(id) => StoreError::NotFound(id),
            None => StoreError::Protocol(message),
        },
        4 => match id() {
            Some(id) => StoreError::HashMismatch(id),
            None => StoreError::Protocol(message),
        },
        _ => StoreError::Protocol(message),
    }
}

fn proto(e: ProtocolError) -> StoreError {
    match e {
        ProtocolError::Io(io) => StoreError::Io(io),
        other => StoreError::Protocol(other.to_string()),
    }
}

impl RemoteStore {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, StoreError> {
        Ok(RemoteStore {
            conn: Connection::connect(addr)?,
        })
    }

    fn call(&mut self, msg: Message) -> Result<Message, StoreError> {
        match self.conn.call(&msg).map_err(proto)? {
            Message::StoreError { code, message } => Err(remote_error(code, message)),
            m => Ok(m),
        }
    }

    /// Requests sent so far (each is one round trip).
    pub fn round_trips(&self) -> u64 {
        self.conn.sent
    }

    /// Pops an evaluation batch; `Err(retry_ms)` when the queue is empty.
    pub fn eval_batch(&mut self, worker_id: &str, max: u32) -> Result<Result<Vec<SeedId>, u32>, StoreError> {
        match self.call(Message::EvalBatchRequest {
            worker_id: worker_id.to_string(),
            max: max.max(1),
        })? {
            Message::EvalBatch { seed_ids } => Ok(Ok(seed_ids)),
            Message::NoTaskAvailable { retry_after_ms } => Ok(Err(retry_after_ms)),
            m => Err(unexpected(m)),
        }
    }

    pub fn stats(&mut self) -> Result<StoreStats, StoreError> {
        match self.call(Message::GetStats)? {
            Message::Stats { stats } => Ok(stats),
            m => Err(unexpected(m)),
        }
    }

    pub fn crashes(&mut self) -> Result<Vec<CrashInfo>, StoreError> {
        match self.call(Message::ListCrashes)? {
            Message::Crashes { crashes } => Ok(crashes),
            m => Err(unexpected(m)),
        }
    }

    /// Turns this connection into an update-signal stream.
    pub fn into_signal_stream(mut self) -> Result<Connection, StoreError> {
        match self.call(Message::Subscribe)? {
            Message::Ack => Ok(self.conn),
            m => Err(unexpected(m)),
        }
    }
}

impl StoreAccess for RemoteStore {
    fn put_seed(&mut self, seed: Seed, status: FuzzStatus) -> Result<PutOutcome, StoreError> {
        match self.call(Message::PutSeed { seed, status })? {
            Message::PutSeedOk { seed_id, fresh } => Ok(PutOutcome { id: seed_id, fresh }),
            m => Err(unexpected(m)),
        }
    }

    fn get_seed(&mut self, id: SeedId) -> Result<Seed, StoreError> {
        match self.call(Message::GetSeed { seed_id: id })? {
            Message::SeedData { seed } => Ok(seed),
            m => Err(unexpected(m)),
        }
    }

    fn get_status(&mut self, id: SeedId) -> Result<FuzzStatus, StoreError> {
        match self.call(Message::GetStatus { seed_id: id })? {
            Message::StatusValue { status, .. } => Ok(status),
            m => Err(unexpected(m)),
        }
    }

    fn update_status(&mut self, id: SeedId, delta: StatusDelta) -> Result<FuzzStatus, StoreError> {
        match self.call(Message::UpdateStatus { seed_id: id, delta })? {
            Message::StatusValue { status, .. } => Ok(status),
            m => Err(unexpected(m)),
        }
    }

    fn pop_pending(&mut self, max: usize) -> Result<Vec<SeedId>, StoreError> {
        Ok(self
            .eval_batch("client", max.clamp(1, u32::MAX as usize) as u32)?
            .unwrap_or_default())
    }

    fn activate(&mut self, id: SeedId, coverage_digest: [u8; 32]) -> Result<ActivateOutcome, StoreError> {
        match self.call(Message::ActivateSeed {
            seed_id: id,
            coverage_digest,
        })? {
            Message::StatusValue { status, .. } => Ok(ActivateOutcome::Activated(status)),
            Message::DuplicateCoverage { .. } => Ok(ActivateOutcome::DuplicateCoverage),
            m => Err(unexpected(m)),
        }
    }

    fn discard_seed(&mut self, id: SeedId) -> Result<(), StoreError> {
        match self.call(Message::DiscardSeed { seed_id: id })? {
            Message::Ack => Ok(()),
            m => Err(unexpected(m)),
        }
    }

    fn put_crash(&mut self, record: CrashRecord) -> Result<bool, StoreError> {
        match self.call(Message::PutCrash { record })? {
            Message::PutCrashOk { fresh } => Ok(fresh),
            m => Err(unexpected(m)),
        }
    }

    fn list_active(&mut self, since: usize) -> Result<Vec<SeedId>, StoreError> {
        match self.call(Message::ListActive { since: since as u64 })? {
            Message::SeedIds { seed_ids } => Ok(seed_ids),
            m => Err(unexpected(m)),
        }
    }
}
