use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use dispatchfuzz::campaign::SharedLog;
use dispatchfuzz::protocol::Message;
use dispatchfuzz::seedstore::{
    serve_store, ActivateOutcome, CrashRecord, RemoteStore, StoreConfig, StoreError, StoreServer,
};
use dispatchfuzz::{ExecOutcome, FuzzStatus, Seed, SeedId, SeedState, SeedStore, StatusDelta, StoreAccess};

fn server(store: Arc<SeedStore>) -> StoreServer {
    serve_store(TcpListener::bind("127.0.0.1:0").unwrap(), store).unwrap()
}

fn pending(content: &[u8]) -> (Seed, FuzzStatus) {
    (Seed::new(content.to_vec(), None, 1, "w0"), FuzzStatus::discovered(1, 4, 10))
}

#[test]
fn seed_lifecycle_over_tcp() {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let srv = server(store.clone());
    let mut c = RemoteStore::connect(srv.addr()).unwrap();

    let (a, st) = pending(b"alpha");
    let put = c.put_seed(a.clone(), st).unwrap();
    assert!(put.fresh);
    assert_eq!(put.id, SeedId::of(b"alpha"));
    assert!(!c.put_seed(a.clone(), st).unwrap().fresh);
    assert_eq!(c.get_seed(put.id).unwrap(), a);
    assert_eq!(c.get_status(put.id).unwrap().state, SeedState::PendingEvaluation);

    let (b, st) = pending(b"beta");
    c.put_seed(b, st).unwrap();
    assert_eq!(c.pop_pending(10).unwrap(), vec![SeedId::of(b"alpha"), SeedId::of(b"beta")]);
    assert!(c.pop_pending(10).unwrap().is_empty());

    let digest = [7u8; 32];
    assert!(matches!(c.activate(put.id, digest).unwrap(), ActivateOutcome::Activated(s) if s.state == SeedState::Active));
    assert_eq!(
        c.activate(SeedId::of(b"beta"), digest).unwrap(),
        ActivateOutcome::DuplicateCoverage
    );
    assert_eq!(c.get_status(SeedId::of(b"beta")).unwrap().state, SeedState::Discarded);
    assert_eq!(c.list_active(0).unwrap(), vec![put.id]);

    let s = c.update_status(put.id, StatusDelta::fuzzed()).unwrap();
    assert_eq!(s.fuzz_count, 1);

    let crash = CrashRecord::new(b"boom".to_vec(), Some(put.id), ExecOutcome::Crash, 5);
    assert!(c.put_crash(crash.clone()).unwrap());
    assert!(!c.put_crash(crash).unwrap());
    let stats = c.stats().unwrap();
    assert_eq!((stats.active, stats.discarded, stats.crashes), (1, 1, 1));
    assert_eq!(c.crashes().unwrap().len(), 1);
}

#[test]
fn missing_seed_is_not_found() {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let srv = server(store);
    let mut c = RemoteStore::connect(srv.addr()).unwrap();
    let id = SeedId::of(b"nope");
    assert!(matches!(c.get_seed(id), Err(StoreError::NotFound(x)) if x == id));
}

#[test]
fn concurrent_duplicate_puts_store_once() {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let srv = server(store.clone());
    let addr = srv.addr();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            thread::spawn(move || {
                let mut c = RemoteStore::connect(addr).unwrap();
                (0..50u32)
                    .filter(|i| {
                        let (s, st) = pending(&i.to_be_bytes());
                        c.put_seed(s, st).unwrap().fresh
                    })
                    .count()
            })
        })
        .collect();
    let fresh: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(fresh, 50);
    assert_eq!(store.stats().seeds, 50);
    assert_eq!(store.pending_len(), 50);
}

#[test]
fn subscribers_get_one_signal_per_fresh_put() {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let srv = server(store);
    let mut sub = RemoteStore::connect(srv.addr()).unwrap().into_signal_stream().unwrap();
    let mut c = RemoteStore::connect(srv.addr()).unwrap();
    for content in [&b"one"[..], b"two", b"one"] {
        let (s, st) = pending(content);
        c.put_seed(s, st).unwrap();
    }
    assert_eq!(sub.recv().unwrap(), Message::UpdateSignal { seed_id: SeedId::of(b"one") });
    assert_eq!(sub.recv().unwrap(), Message::UpdateSignal { seed_id: SeedId::of(b"two") });
}

#[test]
fn log_replay_restores_state() {
    let log = SharedLog::default();
    let store = SeedStore::new(StoreConfig::default()).with_log(Box::new(log.clone()));
    let (a, st) = pending(b"a");
    let (b, st_b) = pending(b"b");
    store.put_seed(a, st).unwrap();
    store.put_seed(b, st_b).unwrap();
    store.put_seed(Seed::new(b"c".to_vec(), None, 0, "corpus"), FuzzStatus::initial(3, 9)).unwrap();
    assert_eq!(store.pop_pending(1), vec![SeedId::of(b"a")]);
    store.activate(SeedId::of(b"a"), [1; 32]).unwrap();
    store.update_status(SeedId::of(b"a"), StatusDelta::set_favored(true)).unwrap();

    let replayed = SeedStore::replay(StoreConfig::default(), &log.0.lock().unwrap()).unwrap();
    assert_eq!(replayed.stats(), store.stats());
    assert_eq!(replayed.list_active(0), store.list_active(0));
    assert!(replayed.get_status(SeedId::of(b"a")).unwrap().favored);
    assert_eq!(replayed.pop_pending(10), vec![SeedId::of(b"b")]);
}
