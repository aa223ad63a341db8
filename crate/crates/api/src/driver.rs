//! The engine thread: drains the job queue and, while unpaused, advances
//! the simulation at the engine's rate.

use crate::ApiError;
use dtm_core::engine::{CommandReply, CommandRequest, Engine, EngineError, EngineEvent};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};
use tokio::sync::{broadcast, oneshot};

/// Events buffered per stream subscriber before it counts as lagging.
const STREAM_BUFFER: usize = 4096;
/// A late pacing loop catches up by at most this much.
const MAX_CATCH_UP: Duration = Duration::from_secs(1);

type Reader = Box<dyn FnOnce(&Engine, &broadcast::Sender<EngineEvent>) + Send>;

enum Job {
    Read(Reader),
    Submit(
        CommandRequest,
        oneshot::Sender<Result<CommandReply, EngineError>>,
    ),
    Stop,
}

/// Cheap to clone; every clone feeds the same queue.
#[derive(Clone)]
pub struct EngineHandle {
    jobs: mpsc::Sender<Job>,
}

impl EngineHandle {
    /// Run `f` on the engine thread between two commands.
    pub async fn read<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Job::Read(Box::new(move |e, _| {
                let _ = tx.send(f(e));
            })))
            .map_err(|_| ApiError::EngineGone)?;
        rx.await.map_err(|_| ApiError::EngineGone)
    }

    /// Queue a command and wait until it is committed.
    pub async fn submit(&self, req: CommandRequest) -> Result<CommandReply, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Job::Submit(req, tx))
            .map_err(|_| ApiError::EngineGone)?;
        Ok(rx.await.map_err(|_| ApiError::EngineGone)??)
    }

    /// Events with `seq >= from` plus a receiver for everything after them.
    pub async fn subscribe(
        &self,
        from: u64,
    ) -> Result<(Vec<EngineEvent>, broadcast::Receiver<EngineEvent>), ApiError> {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Job::Read(Box::new(move |e, events| {
                let _ = tx.send((e.events_since(from).to_vec(), events.subscribe()));
            })))
            .map_err(|_| ApiError::EngineGone)?;
        rx.await.map_err(|_| ApiError::EngineGone)
    }
}

pub struct EngineThread {
    handle: EngineHandle,
    join: thread::JoinHandle<Engine>,
}

impl EngineThread {
    pub fn handle(&self) -> EngineHandle {
        self.handle.clone()
    }

    /// Stop after the jobs already queued and return the engine.
    pub async fn stop(self) -> Result<Engine, ApiError> {
        let _ = self.handle.jobs.send(Job::Stop);
        let join = self.join;
        tokio::task::spawn_blocking(move || join.join())
            .await
            .map_err(|e| ApiError::Server(e.to_string()))?
            .map_err(|_| ApiError::Server("engine thread panicked".into()))
    }
}

/// Move `engine` onto its own thread.
pub fn spawn_engine(mut engine: Engine, start_paused: bool) -> EngineThread {
    if start_paused && !engine.is_paused() {
        engine
            .submit(dtm_core::engine::Command::Pause.into())
            .expect("pause always succeeds");
    }
    let (tx, rx) = mpsc::channel();
    let join = thread::Builder::new()
        .name("engine".into())
        .spawn(move || drive(engine, rx))
        .expect("spawn engine thread");
    EngineThread {
        handle: EngineHandle { jobs: tx },
        join,
    }
}

struct Driver {
    engine: Engine,
    events: broadcast::Sender<EngineEvent>,
    published: u64,
}

impl Driver {
    fn publish(&mut self) {
        let last = self.engine.last_seq();
        if last > self.published {
            for e in self.engine.events_since(self.published + 1) {
                // no subscribers is fine
                let _ = self.events.send(e.clone());
            }
            self.published = last;
        }
    }

    /// Returns false on `Stop`.
    fn handle(&mut self, job: Job) -> bool {
        match job {
            Job::Read(f) => f(&self.engine, &self.events),
            Job::Submit(req, reply) => {
                let r = self.engine.submit(req);
                self.publish();
                let _ = reply.send(r);
            }
            Job::Stop => return false,
        }
        true
    }
}

fn period(rate: f64) -> Duration {
    Duration::from_secs_f64(1.0 / rate)
}

fn drive(engine: Engine, jobs: mpsc::Receiver<Job>) -> Engine {
    let (events, _) = broadcast::channel(STREAM_BUFFER);
    let published = engine.last_seq();
    let mut d = Driver {
        engine,
        events,
        published,
    };
    let mut next = Instant::now();
    'run: loop {
        while let Ok(job) = jobs.try_recv() {
            if !d.handle(job) {
                break 'run;
            }
        }
        if d.engine.is_paused() {
            match jobs.recv() {
                Ok(job) => {
                    if !d.handle(job) {
                        break;
                    }
                }
                Err(_) => break,
            }
            next = Instant::now();
            continue;
        }
        let now = Instant::now();
        if now >= next {
            d.engine.advance();
            d.publish();
            next += period(d.engine.rate());
            if next + MAX_CATCH_UP < now {
                next = now;
            }
            continue;
        }
        match jobs.recv_timeout(next - now) {
            Ok(job) => {
                if !d.handle(job) {
                    break;
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    d.engine
}
