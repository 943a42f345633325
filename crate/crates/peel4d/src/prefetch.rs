//! Double-buffered frame-cache prefetch.
//!
//! A background worker builds caches for frames that are likely to be
//! requested next. [`Prefetcher::get`] returns a ready cache without
//! blocking, waits only when the requested frame is being built, and builds
//! it on the calling thread when nobody has started it.

use std::collections::VecDeque;
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use peel4d_core::cache::FrameCache;

type Builder = dyn Fn(usize) -> FrameCache + Send + Sync;

#[derive(Default)]
struct Slots {
    ready: VecDeque<(usize, Arc<FrameCache>)>,
    building: Vec<usize>,
}

struct Shared {
    slots: Mutex<Slots>,
    done: Condvar,
    capacity: usize,
    build: Box<Builder>,
}

impl Shared {
    fn lookup(slots: &Slots, frame: usize) -> Option<Arc<FrameCache>> {
        slots.ready.iter().find(|(f, _)| *f == frame).map(|(_, c)| c.clone())
    }

    fn finish(&self, frame: usize, cache: Arc<FrameCache>) {
        let mut s = self.slots.lock().unwrap();
        s.building.retain(|&f| f != frame);
        s.ready.retain(|(f, _)| *f != frame);
        s.ready.push_back((frame, cache));
        while s.ready.len() > self.capacity {
            s.ready.pop_front();
        }
        self.done.notify_all();
    }

    /// Marks `frame` as being built unless it is ready or already claimed.
    fn claim(&self, frame: usize) -> bool {
        let mut s = self.slots.lock().unwrap();
        if Self::lookup(&s, frame).is_some() || s.building.contains(&frame) {
            return false;
        }
        s.building.push(frame);
        true
    }
}

pub struct Prefetcher {
    shared: Arc<Shared>,
    tx: Option<Sender<usize>>,
    worker: Option<JoinHandle<()>>,
    num_frames: usize,
}

impl Prefetcher {
    /// `capacity` caches stay resident; at least 3 (previous, current, next).
    pub fn new(num_frames: usize, capacity: usize, build: impl Fn(usize) -> FrameCache + Send + Sync + 'static) -> Self {
        let shared = Arc::new(Shared { slots: Mutex::default(), done: Condvar::new(), capacity: capacity.max(3), build: Box::new(build) });
        let (tx, rx) = mpsc::channel::<usize>();
        let worker_shared = shared.clone();
        let worker = thread::Builder::new()
            .name("peel4d-prefetch".into())
            .spawn(move || {
                for frame in rx {
                    if worker_shared.claim(frame) {
                        let cache = Arc::new((worker_shared.build)(frame));
                        worker_shared.finish(frame, cache);
                    }
                }
            })
            .expect("spawn prefetch worker");
        Self { shared, tx: Some(tx), worker: Some(worker), num_frames }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn is_ready(&self, frame: usize) -> bool {
        Shared::lookup(&self.shared.slots.lock().unwrap(), frame).is_some()
    }

    /// Queues `frame` for the background worker.
    pub fn prefetch(&self, frame: usize) {
        if frame < self.num_frames {
            if let Some(tx) = &self.tx {
                let _ = tx.send(frame);
            }
        }
    }

    /// Queues the neighbours of `frame`.
    pub fn prefetch_around(&self, frame: usize) {
        self.prefetch(frame + 1);
        if frame > 0 {
            self.prefetch(frame - 1);
        }
    }

    pub fn get(&self, frame: usize) -> Arc<FrameCache> {
        assert!(frame < self.num_frames, "frame {frame} out of range");
        let mut s = self.shared.slots.lock().unwrap();
        loop {
            if let Some(c) = Shared::lookup(&s, frame) {
                return c;
            }
            if !s.building.contains(&frame) {
                break;
            }
            s = self.shared.done.wait(s).unwrap();
        }
        s.building.push(frame);
        drop(s);
        let cache = Arc::new((self.shared.build)(frame));
        self.shared.finish(frame, cache.clone());
        cache
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
