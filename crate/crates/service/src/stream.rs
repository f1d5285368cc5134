use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use futures::Stream;
use tokio::sync::watch;

use crate::error::ApiError;

const KEEP_SESSIONS: usize = 256;

#[derive(Default)]
struct Log {
    lines: Vec<String>,
    started: bool,
    done: bool,
}

/// Trace lines of one decode session, readable while it runs.
pub struct Session {
    log: Mutex<Log>,
    changed: watch::Sender<usize>,
}

impl Session {
    fn new() -> Self {
        Self { log: Mutex::new(Log::default()), changed: watch::channel(0).0 }
    }

    pub fn push(&self, line: String) {
        let n = {
            let mut log = self.log.lock().unwrap();
            log.lines.push(line);
            log.lines.len()
        };
        self.changed.send_replace(n);
    }

    pub fn finish(&self) {
        self.log.lock().unwrap().done = true;
        self.changed.send_modify(|_| {});
    }
}

/// Sessions by id. Readers may subscribe before the decode starts.
/// Live sessions plus their ids in creation order.
type Sessions = (HashMap<String, Arc<Session>>, VecDeque<String>);

#[derive(Default)]
pub struct StreamHub {
    sessions: Mutex<Sessions>,
}

impl StreamHub {
    fn entry(&self, id: &str) -> Arc<Session> {
        let mut guard = self.sessions.lock().unwrap();
        let (map, order) = &mut *guard;
        if let Some(s) = map.get(id) {
            return s.clone();
        }
        while order.len() >= KEEP_SESSIONS {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        let s = Arc::new(Session::new());
        map.insert(id.to_string(), s.clone());
        order.push_back(id.to_string());
        s
    }

    /// Claims `id` for a new decode; an id is used once.
    pub fn begin(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        if id.is_empty() || id.len() > 128 {
            return Err(ApiError::bad_request("session id must be 1 to 128 bytes"));
        }
        let s = self.entry(id);
        let mut log = s.log.lock().unwrap();
        if log.started {
            return Err(ApiError::bad_request(format!("session {id:?} was already used")));
        }
        log.started = true;
        drop(log);
        Ok(s)
    }

    /// Newline-delimited JSON of every event so far, then live events until
    /// the session finishes.
    pub fn follow(&self, id: &str) -> impl Stream<Item = Result<Bytes, std::convert::Infallible>> + Send + 'static {
        let session = self.entry(id);
        let rx = session.changed.subscribe();
        futures::stream::unfold((session, rx, 0usize), |(session, mut rx, mut next)| async move {
            loop {
                rx.borrow_and_update();
                {
                    let log = session.log.lock().unwrap();
                    if next < log.lines.len() {
                        let mut chunk = String::new();
                        for line in &log.lines[next..] {
                            chunk.push_str(line);
                            chunk.push('\n');
                        }
                        next = log.lines.len();
                        drop(log);
                        return Some((Ok(Bytes::from(chunk)), (session, rx, next)));
                    }
                    if log.done {
                        return None;
                    }
                }
                if rx.changed().await.is_err() {
                    return None;
                }
            }
        })
    }
}
