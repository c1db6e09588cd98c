//! The `run` pipeline: a reader thread feeds raw lines through an ordered
//! queue into the monitor, which owns all segment state. Each board gets its
//! own publisher thread so a dead endpoint never stalls ingestion.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use roadwatch_core::display::{render_board, AlertMessage, BoardSpec};
use roadwatch_core::monitor::{Counters, Monitor, MonitorOutput};

use crate::config::{InputSource, Loaded};
use crate::sink::{Outcome, Publisher, SinkAddress};
use crate::wire::{parse_frame, TransitionRecord};

const QUEUE_DEPTH: usize = 4096;
const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BoardStats {
    pub published: u64,
    pub suppressed: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub frames: Counters,
    pub transitions: u64,
    pub anomaly_events: u64,
    pub history_records: u64,
    pub boards: BTreeMap<String, BoardStats>,
}

fn spawn_reader(source: InputSource, tx: SyncSender<Vec<u8>>, shutdown: Arc<AtomicBool>) -> Result<JoinHandle<Result<()>>> {
    match source {
        InputSource::File(path) => {
            let file = File::open(&path).with_context(|| format!("cannot open input {}", path.display()))?;
            Ok(thread::spawn(move || {
                for line in BufReader::new(file).split(b'\n') {
                    if shutdown.load(Ordering::Relaxed) {
                        break;
                    }
                    let line = line.context("reading input")?;
                    if tx.send(line).is_err() {
                        break;
                    }
                }
                Ok(())
            }))
        }
        InputSource::Tcp(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("cannot listen on {addr}"))?;
            listener.set_nonblocking(true)?;
            log::info!("listening for frames on {}", listener.local_addr()?);
            Ok(thread::spawn(move || serve(listener, tx, shutdown)))
        }
    }
}

/// Accepts one producer at a time and reads its lines until it hangs up.
/// Stops when shutdown is requested and the current producer is idle.
fn serve(listener: TcpListener, tx: SyncSender<Vec<u8>>, shutdown: Arc<AtomicBool>) -> Result<()> {
    loop {
        let stream = match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("producer connected from {peer}");
                stream
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if shutdown.load(Ordering::Relaxed) {
                    return Ok(());
                }
                thread::sleep(POLL);
                continue;
            }
            Err(e) => return Err(e).context("accepting producer"),
        };
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL))?;
        let mut reader = BufReader::new(stream);
        let mut line = Vec::new();
        loop {
            match reader.read_until(b'\n', &mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if line.last() == Some(&b'\n') {
                        line.pop();
                    }
                    if tx.send(std::mem::take(&mut line)).is_err() {
                        return Ok(());
                    }
                }
                // shutdown is honoured once the producer goes quiet; a
                // partial line stays buffered across timeouts
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if shutdown.load(Ordering::Relaxed) {
                        return Ok(());
                    }
                }
                Err(e) => {
                    log::warn!("producer connection failed: {e}");
                    break;
                }
            }
        }
    }
}

fn spawn_publisher(
    board: &BoardSpec,
    address: SinkAddress,
    retries: u32,
    backoff: Duration,
) -> (SyncSender<AlertMessage>, JoinHandle<BoardStats>) {
    let (tx, rx): (SyncSender<AlertMessage>, Receiver<AlertMessage>) = mpsc::sync_channel(QUEUE_DEPTH);
    let (rows, cols) = (board.rows as usize, board.cols as usize);
    let handle = thread::spawn(move || {
        let mut publisher = Publisher::new(address, retries, backoff);
        let mut stats = BoardStats::default();
        for message in rx {
            match publisher.publish(&message) {
                Ok(Outcome::Published) => {
                    stats.published += 1;
                    for line in render_board(&message, rows, cols) {
                        log::debug!("[{}] {line}", message.board_id);
                    }
                }
                Ok(Outcome::Suppressed) => stats.suppressed += 1,
                Err(e) => {
                    stats.failed += 1;
                    log::warn!("board {}: {e}", message.board_id);
                }
            }
        }
        stats
    });
    (tx, handle)
}

struct BoardQueue {
    tx: SyncSender<AlertMessage>,
    /// File sinks always keep up eventually, so they get backpressure and
    /// replays stay exact; network sinks may hang and must not stall us.
    blocking: bool,
}

struct Outputs {
    transitions: BufWriter<File>,
    history: BufWriter<File>,
    boards: BTreeMap<String, BoardQueue>,
    summary: RunSummary,
}

impl Outputs {
    fn handle(&mut self, out: MonitorOutput) -> Result<()> {
        for t in &out.transitions {
            serde_json::to_writer(&mut self.transitions, &TransitionRecord::from(t))?;
            self.transitions.write_all(b"\n")?;
            log::info!("{} {} -> {} at {} (ratio {:.3})", t.segment_id, t.from, t.to, t.ts, t.ratio);
        }
        for record in &out.history {
            serde_json::to_writer(&mut self.history, record)?;
            self.history.write_all(b"\n")?;
        }
        for event in &out.anomalies {
            log::warn!(
                "{} on {} since {} (confidence {:.2})",
                event.class,
                event.segment_id,
                event.start_ts,
                event.peak_confidence
            );
        }
        self.summary.transitions += out.transitions.len() as u64;
        self.summary.history_records += out.history.len() as u64;
        self.summary.anomaly_events += out.anomalies.len() as u64;
        if !out.transitions.is_empty() {
            self.transitions.flush()?;
        }
        for message in out.messages {
            let Some(queue) = self.boards.get(&message.board_id) else {
                continue;
            };
            if queue.blocking {
                let _ = queue.tx.send(message);
            } else if let Err(mpsc::TrySendError::Full(m)) = queue.tx.try_send(message) {
                // newer messages supersede this one anyway
                log::warn!("board {} is backlogged; dropping message issued at {}", m.board_id, m.issued_at);
            }
        }
        Ok(())
    }
}

/// Processes the configured stream to completion (file) or until
/// `shutdown` is set (socket).
pub fn run(loaded: Loaded, shutdown: Arc<AtomicBool>) -> Result<RunSummary> {
    let Loaded {
        config,
        monitor: monitor_config,
        streets,
        graph,
        boards,
        cameras,
        history,
    } = loaded;
    let mut monitor = Monitor::new(monitor_config, streets, cameras, graph, boards.clone(), history)?;

    let transitions = File::create(&config.transition_log)
        .with_context(|| format!("cannot create {}", config.transition_log.display()))?;
    let history_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.history)
        .with_context(|| format!("cannot open {}", config.history.display()))?;

    let backoff = Duration::from_millis(config.tunables.publish_backoff_ms);
    let mut senders = BTreeMap::new();
    let mut handles = Vec::new();
    for board in &boards {
        let address = SinkAddress::parse(&board.endpoint, config.endpoint_base()).expect("endpoints validated at load");
        let blocking = matches!(address, SinkAddress::File(_));
        let (tx, handle) = spawn_publisher(board, address, config.tunables.publish_retries, backoff);
        senders.insert(board.board_id.clone(), BoardQueue { tx, blocking });
        handles.push((board.board_id.clone(), handle));
    }
    let mut outputs = Outputs {
        transitions: BufWriter::new(transitions),
        history: BufWriter::new(history_file),
        boards: senders,
        summary: RunSummary::default(),
    };

    let (tx, rx) = mpsc::sync_channel::<Vec<u8>>(QUEUE_DEPTH);
    let reader = spawn_reader(config.input.clone(), tx, shutdown)?;
    for line in rx {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match parse_frame(&line) {
            Ok(frame) => {
                let (out, err) = monitor.ingest(frame);
                if let Some(e) = err {
                    log::warn!("frame rejected: {e}");
                }
                outputs.handle(out)?;
            }
            Err(e) => {
                log::warn!("frame rejected: {e}");
                monitor.reject_undecodable(&e);
            }
        }
    }
    let read_result = reader.join().map_err(|_| anyhow::anyhow!("input reader panicked"))?;
    outputs.handle(monitor.finish())?;
    outputs.transitions.flush()?;
    outputs.history.flush()?;

    let mut summary = std::mem::take(&mut outputs.summary);
    drop(outputs);
    for (board_id, handle) in handles {
        let stats = handle.join().map_err(|_| anyhow::anyhow!("publisher for {board_id} panicked"))?;
        summary.boards.insert(board_id, stats);
    }
    summary.frames = monitor.counters().clone();
    if !summary.frames.reconciles() {
        bail!("frame accounting does not reconcile: {:?}", summary.frames);
    }
    if let Some(path) = &config.summary {
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    read_result?;
    Ok(summary)
}
