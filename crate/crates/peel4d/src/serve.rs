//! WebSocket frame service.
//!
//! Each connection owns one request slot. A newer request replaces a queued
//! older one, so navigation never builds a backlog. A single render worker
//! visits the slots round-robin and sends each result back through the
//! connection's outgoing queue.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use peel4d_core::cache::CachedRenderer;
use peel4d_core::scene::frame_at;
use peel4d_core::{Camera, Mat3, Vec3};
use tungstenite::{Message, WebSocket};

use crate::checkpoint::Checkpoint;
use crate::frames::{self, InferenceConfig};
use crate::pngio;
use crate::prefetch::Prefetcher;
use crate::protocol::{self, Encoding, FrameHeader, RenderRequest, RequestError};

const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeConfig {
    pub inference: InferenceConfig,
    pub max_resolution: u32,
    pub cache_capacity: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { inference: InferenceConfig::default(), max_resolution: protocol::DEFAULT_MAX_RESOLUTION, cache_capacity: 3 }
    }
}

/// Renders requests from shared, immutable frame caches.
pub struct FrameServer {
    template: Camera,
    num_frames: usize,
    config: ServeConfig,
    prefetcher: Prefetcher,
}

impl FrameServer {
    /// Builds the cache of frame 0 before returning.
    pub fn new(ckpt: Arc<Checkpoint>, config: ServeConfig) -> Self {
        let template = ckpt.sources.cameras[0].clone();
        let num_frames = ckpt.model.scene.num_frames();
        let precision = config.inference.precision;
        let prefetcher = Prefetcher::new(num_frames, config.cache_capacity, move |f| frames::build_cache(&ckpt, f, precision));
        prefetcher.get(0);
        Self { template, num_frames, config, prefetcher }
    }

    pub fn config(&self) -> &ServeConfig {
        &self.config
    }

    pub fn parse(&self, text: &str) -> Result<RenderRequest, RequestError> {
        let req = protocol::parse_request(text, self.config.max_resolution)?;
        self.camera_for(&req)?;
        Ok(req)
    }

    pub fn camera_for(&self, req: &RenderRequest) -> Result<Camera, RequestError> {
        let rot = Mat3::from_row_major(&req.pose.r);
        let t = Vec3::from_array(req.pose.t);
        let mut cam = frames::posed_camera(&self.template, rot, t, req.width, req.height)
            .map_err(|e| RequestError { id: Some(req.id), reason: e.to_string() })?;
        if let Some(k) = req.intrinsics {
            cam = Camera::new(k.fx, k.fy, k.cx, k.cy, rot, t, req.width, req.height, cam.near, cam.far)
                .map_err(|e| RequestError { id: Some(req.id), reason: e.to_string() })?;
        }
        Ok(cam)
    }

    pub fn frame_for(&self, req: &RenderRequest) -> usize {
        frame_at(req.time, self.num_frames)
    }

    /// Renders a validated request into RGB8 pixels.
    pub fn render_rgb8(&self, req: &RenderRequest, renderer: &mut CachedRenderer) -> Result<Vec<u8>, RequestError> {
        let cam = self.camera_for(req)?;
        let frame = self.frame_for(req);
        let cache = self.prefetcher.get(frame);
        self.prefetcher.prefetch_around(frame);
        Ok(frames::composite_to_rgb8(renderer.render(&cache, &cam, self.config.inference.k)))
    }

    /// Renders and encodes a complete binary response frame.
    pub fn respond(&self, req: &RenderRequest, renderer: &mut CachedRenderer) -> Result<Vec<u8>, RequestError> {
        let rgb = self.render_rgb8(req, renderer)?;
        let encoding = Encoding::for_size(req.width, req.height);
        let payload = match encoding {
            Encoding::RawRgb8 => rgb,
            Encoding::Png => pngio::encode_rgb8(req.width as usize, req.height as usize, &rgb)
                .map_err(|e| RequestError { id: Some(req.id), reason: e.to_string() })?,
        };
        let header = FrameHeader { id: req.id, width: req.width, height: req.height, encoding, payload_len: payload.len() as u32 };
        Ok(protocol::encode_frame(&header, &payload))
    }
}

struct Connection {
    slot: Mutex<Option<RenderRequest>>,
    out: Mutex<Sender<Message>>,
    closed: AtomicBool,
}

#[derive(Default)]
struct Registry {
    conns: Mutex<Vec<Arc<Connection>>>,
    wake: Condvar,
    /// Guards the worker's sleep; paired with `wake`.
    pending: Mutex<bool>,
}

impl Registry {
    fn notify(&self) {
        *self.pending.lock().unwrap() = true;
        self.wake.notify_all();
    }

    /// Next queued request in round-robin order after `cursor`.
    fn next(&self, cursor: &mut usize) -> Option<(Arc<Connection>, RenderRequest)> {
        let mut conns = self.conns.lock().unwrap();
        conns.retain(|c| !c.closed.load(Ordering::Acquire));
        let n = conns.len();
        for i in 0..n {
            let idx = (*cursor + i) % n;
            if let Some(req) = conns[idx].slot.lock().unwrap().take() {
                *cursor = idx + 1;
                return Some((conns[idx].clone(), req));
            }
        }
        None
    }
}

/// Running service; dropping it stops every thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Arc<Registry>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.registry.notify();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

pub fn spawn(server: Arc<FrameServer>, listener: TcpListener) -> std::io::Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Arc::new(Registry::default());
    let worker = {
        let (server, registry, stop) = (server.clone(), registry.clone(), stop.clone());
        thread::Builder::new().name("peel4d-render".into()).spawn(move || render_worker(&server, &registry, &stop))?
    };
    let acceptor = {
        let (registry, stop) = (registry.clone(), stop.clone());
        thread::Builder::new().name("peel4d-accept".into()).spawn(move || accept_loop(listener, server, registry, stop))?
    };
    Ok(ServiceHandle { addr, stop, registry, threads: vec![worker, acceptor] })
}

fn render_worker(server: &FrameServer, registry: &Registry, stop: &AtomicBool) {
    let mut renderer = CachedRenderer::new();
    let mut cursor = 0;
    while !stop.load(Ordering::Acquire) {
        match registry.next(&mut cursor) {
            Some((conn, req)) => {
                let msg = match server.respond(&req, &mut renderer) {
                    Ok(frame) => Message::binary(frame),
                    Err(e) => Message::text(protocol::error_json(&e)),
                };
                let _ = conn.out.lock().unwrap().send(msg);
            }
            None => {
                let mut pending = registry.pending.lock().unwrap();
                if !*pending {
                    pending = registry.wake.wait_timeout(pending, Duration::from_millis(50)).unwrap().0;
                }
                *pending = false;
            }
        }
    }
}

fn accept_loop(listener: TcpListener, server: Arc<FrameServer>, registry: Arc<Registry>, stop: Arc<AtomicBool>) {
    let mut conns = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (server, registry, stop) = (server.clone(), registry.clone(), stop.clone());
                let spawned = thread::Builder::new()
                    .name(format!("peel4d-conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = connection(stream, &server, &registry, &stop) {
                            log::debug!("connection {peer} ended: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => conns.push(h),
                    Err(e) => log::warn!("cannot spawn connection thread: {e}"),
                }
                conns.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

fn connection(stream: TcpStream, server: &FrameServer, registry: &Registry, stop: &AtomicBool) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(ErrorKind::WouldBlock.into()),
    })?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (tx, rx) = mpsc::channel();
    let conn = Arc::new(Connection { slot: Mutex::new(None), out: Mutex::new(tx), closed: AtomicBool::new(false) });
    registry.conns.lock().unwrap().push(conn.clone());
    let result = serve_connection(&mut ws, &rx, &conn, server, registry, stop);
    conn.closed.store(true, Ordering::Release);
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn serve_connection(
    ws: &mut WebSocket<TcpStream>,
    rx: &Receiver<Message>,
    conn: &Connection,
    server: &FrameServer,
    registry: &Registry,
    stop: &AtomicBool,
) -> tungstenite::Result<()> {
    while !stop.load(Ordering::Acquire) {
        while let Ok(msg) = rx.try_recv() {
            ws.send(msg)?;
        }
        let reply = match ws.read() {
            Ok(Message::Text(text)) => match server.parse(&text) {
                Ok(req) => {
                    *conn.slot.lock().unwrap() = Some(req);
                    registry.notify();
                    None
                }
                Err(e) => Some(protocol::error_json(&e)),
            },
            Ok(Message::Binary(_)) => Some(protocol::error_json(&RequestError { id: None, reason: "requests must be text messages".into() })),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => None,
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => None,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        };
        if let Some(text) = reply {
            ws.send(Message::text(text))?;
        }
    }
    Ok(())
}
