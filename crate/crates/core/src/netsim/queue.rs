use alloc::collections::BTreeMap;

use crate::Tick;

/// Pending events in the total order `(time, node, sequence)`.
#[derive(Clone, Debug)]
pub struct EventQueue<T> {
    items: BTreeMap<(Tick, usize, u64), T>,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            items: BTreeMap::new(),
            next_seq: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues an item and returns its sequence number.
    pub fn push(&mut self, time: Tick, node: usize, item: T) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.items.insert((time, node, seq), item);
        seq
    }

    pub fn pop(&mut self) -> Option<(Tick, usize, T)> {
        self.items
            .pop_first()
            .map(|((time, node, _), item)| (time, node, item))
    }

    pub fn peek_time(&self) -> Option<Tick> {
        self.items.keys().next().map(|k| k.0)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Removes every item matching the predicate.
    pub fn retain(&mut self, mut keep: impl FnMut(&T) -> bool) {
        self.items.retain(|_, v| keep(v));
    }
}

/// An event queue with a clock that never moves backwards.
#[derive(Clone, Debug)]
pub struct Simulator<T> {
    now: Tick,
    queue: EventQueue<T>,
}

impl<T> Default for Simulator<T> {
    fn default() -> Self {
        Simulator {
            now: 0,
            queue: EventQueue::new(),
        }
    }
}

impl<T> Simulator<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Schedules an event; times in the past are clamped to now.
    pub fn schedule(&mut self, at: Tick, node: usize, item: T) {
        self.queue.push(at.max(self.now), node, item);
    }

    /// Pops the minimal event and advances the clock to its time. An empty
    /// queue is a no-op.
    pub fn step(&mut self) -> Option<(Tick, usize, T)> {
        let (time, node, item) = self.queue.pop()?;
        self.now = time;
        Some((time, node, item))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
