//! WebSocket streaming service.
//!
//! Each connection owns a [`Session`]. The socket reader only validates and
//! stages messages under a short lock; a dedicated generation thread runs
//! the paced stream and pushes audio and metrics through an unbounded queue
//! to the socket writer, so control traffic never holds up audio.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use futures_util::{SinkExt, StreamExt};
use livemusic::controls::extract_descriptors;
use livemusic::stream::{run, Clock, Pacing, Stream, StreamMetrics, SystemClock};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::config::SessionConfig;
use crate::error::ServiceError;
use crate::protocol::{BinaryFrame, Descriptors, ServerMessage};
use crate::session::Session;

#[derive(Clone, Debug)]
pub struct ServerOptions {
    pub config: SessionConfig,
    /// Where to write each session's JSONL log when it closes.
    pub log_dir: Option<PathBuf>,
}

pub struct Server {
    listener: TcpListener,
    options: Arc<ServerOptions>,
}

impl Server {
    pub async fn bind(addr: &str, options: ServerOptions) -> anyhow::Result<Self> {
        options.config.validate()?;
        let listener = TcpListener::bind(addr).await?;
        Ok(Self {
            listener,
            options: Arc::new(options),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> anyhow::Result<()> {
        let ids = AtomicU64::new(0);
        loop {
            let (tcp, peer) = self.listener.accept().await?;
            let id = ids.fetch_add(1, Ordering::Relaxed);
            let options = self.options.clone();
            tokio::spawn(async move {
                info!(id, %peer, "connection opened");
                match connection(tcp, id, options).await {
                    Ok(()) => info!(id, "connection closed"),
                    Err(e) => warn!(id, error = %e, "connection failed"),
                }
            });
        }
    }
}

type Outbox = UnboundedSender<Message>;

fn send(out: &Outbox, msg: &ServerMessage) {
    // A closed outbox means the client is gone; the reader notices separately.
    let _ = out.send(Message::text(msg.to_json()));
}

async fn connection(tcp: TcpStream, id: u64, options: Arc<ServerOptions>) -> anyhow::Result<()> {
    let ws = tokio_tungstenite::accept_async(tcp).await?;
    let (mut sink, mut source) = ws.split();
    let (out, mut outbox) = unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let opened = Session::new(options.config.clone()).and_then(|s| Ok((s.create_stream()?, s)));
    let (stream, session) = match opened {
        Ok(pair) => pair,
        Err(e) => {
            send(&out, &ServerMessage::error(&e));
            drop(out);
            writer.await?;
            return Err(e.into());
        }
    };
    send(&out, &session.hello());
    let session = Arc::new(Mutex::new(session));
    let stream = Arc::new(Mutex::new(stream));
    let clock: Arc<SystemClock> = Arc::new(SystemClock::new());
    let mut generators: Vec<JoinHandle<()>> = Vec::new();

    while let Some(frame) = source.next().await {
        let frame = match frame {
            Ok(f) => f,
            Err(e) => {
                debug!(id, error = %e, "read failed");
                break;
            }
        };
        match frame {
            Message::Text(text) => {
                let outcome = session.lock().expect("session lock").handle_text(&text, clock.now());
                if let Some(reply) = &outcome.reply {
                    send(&out, reply);
                }
                if outcome.start_generation {
                    generators.retain(|g| !g.is_finished());
                    let (session, stream, clock, out) = (session.clone(), stream.clone(), clock.clone(), out.clone());
                    generators.push(std::thread::spawn(move || generate(&session, &stream, clock.as_ref(), &out)));
                }
            }
            Message::Binary(bytes) => {
                if let Some(err) = session.lock().expect("session lock").handle_binary(&bytes) {
                    send(&out, &err);
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }

    session.lock().expect("session lock").close();
    let joined = tokio::task::spawn_blocking(move || {
        for g in generators {
            let _ = g.join();
        }
    });
    joined.await?;
    if let Some(dir) = &options.log_dir {
        // Written aside and renamed so readers never see a partial log.
        let path = dir.join(format!("session-{id}.jsonl"));
        let partial = path.with_extension("jsonl.partial");
        let file = std::fs::File::create(&partial).map_err(|e| ServiceError::io(&partial, e))?;
        session
            .lock()
            .expect("session lock")
            .write_log(std::io::BufWriter::new(file))?;
        std::fs::rename(&partial, &path).map_err(|e| ServiceError::io(&path, e))?;
        info!(id, path = %path.display(), "session log written");
    }
    drop(out);
    writer.await?;
    Ok(())
}

/// Runs the stream in real time until the session stops.
fn generate(session: &Mutex<Session>, stream: &Mutex<Stream>, clock: &dyn Clock, out: &Outbox) {
    let mut stream = stream.lock().expect("stream lock");
    let mut metrics = StreamMetrics::default();
    let mut failure: Option<ServiceError> = None;
    let result = run(
        &mut stream,
        clock,
        Pacing::Realtime,
        |chunk, now| match session.lock().expect("session lock").boundary(chunk, now) {
            Ok(b) => Ok(b),
            Err(e) => {
                failure = Some(e);
                Ok(None)
            }
        },
        |pc| {
            let frame = BinaryFrame::Audio {
                chunk_index: pc.output.chunk_index as u32,
                audio: pc.output.audio.clone(),
            };
            let _ = out.send(Message::binary(frame.encode()));
            let row = metrics
                .record(pc.output.chunk_index, pc.latency, pc.slot, pc.delays.clone())
                .clone();
            let d = extract_descriptors(&pc.output.audio)?;
            send(
                out,
                &ServerMessage::Metrics {
                    chunk_index: row.chunk_index,
                    latency: row.latency,
                    rtf_chunk: row.rtf_chunk,
                    rtf_cum: row.rtf_cum,
                    underruns: metrics.underruns,
                    delays: row.delays,
                    controls: pc.output.controls,
                    descriptors: Descriptors {
                        bpm: d.bpm,
                        centroid_hz: d.centroid_hz,
                        bandwidth_hz: d.bandwidth_hz,
                        density: d.density,
                        key: d.key,
                    },
                },
            );
            Ok(())
        },
    );
    if let Err(e) = result {
        failure = Some(e.into());
    }
    if let Some(e) = failure {
        warn!(error = %e, "generation stopped");
        // Session and stream may now disagree on the chunk index.
        session.lock().expect("session lock").close();
        send(out, &ServerMessage::error(&e));
    }
    send(
        out,
        &ServerMessage::Stopped {
            chunks: stream.chunk_index(),
        },
    );
}
