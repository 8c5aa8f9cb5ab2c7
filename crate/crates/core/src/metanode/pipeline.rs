//! Batched apply of deferred updates: sort by key, then run the batch on `k`
//! round-robin execution streams that suspend at each index access.

use super::index::{LeafRef, PagedIndex};
use crate::wire::{MetadataPayload, Timestamp};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Update {
    pub key: Vec<u8>,
    pub meta: MetadataPayload,
    pub ts: Timestamp,
}

/// Outcome of one applied update, in apply order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    /// Position of the update in the batch as given.
    pub slot: usize,
    pub prev_ts: Timestamp,
    pub result_ts: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Dir,
    Leaf,
}

enum Stream {
    Idle,
    /// Waiting for the directory slot to arrive.
    Root(usize),
    /// Waiting for the leaf page to arrive.
    Leaf(usize, LeafRef),
}

#[inline]
fn prefetch(addr: *const u8) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: prefetch is a hint and never faults, even on invalid addresses.
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(addr as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = addr;
}

pub struct Pipeline {
    streams: usize,
    /// `(update slot, access)` in execution order, kept for inspection.
    pub accesses: Vec<(usize, Access)>,
    /// Leaf versions that changed between descent and apply.
    pub redescents: u64,
}

impl Pipeline {
    pub fn new(streams: usize) -> Self {
        Pipeline { streams: streams.max(1), accesses: Vec::new(), redescents: 0 }
    }

    /// Applies `batch` newest-wins and returns the apply order.
    pub fn run(&mut self, index: &mut PagedIndex, batch: &[Update]) -> Vec<Applied> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| batch[a].key.cmp(&batch[b].key));

        let mut next = order.into_iter();
        let mut streams: Vec<Stream> = (0..self.streams).map(|_| Stream::Idle).collect();
        let mut out = Vec::with_capacity(batch.len());
        loop {
            let mut progressed = false;
            for s in streams.iter_mut() {
                *s = match std::mem::replace(s, Stream::Idle) {
                    Stream::Idle => match next.next() {
                        Some(slot) => {
                            prefetch(index.dir_addr(&batch[slot].key));
                            Stream::Root(slot)
                        }
                        None => Stream::Idle,
                    },
                    Stream::Root(slot) => {
                        self.accesses.push((slot, Access::Dir));
                        let leaf = index.descend(&batch[slot].key);
                        prefetch(index.page_addr(leaf));
                        Stream::Leaf(slot, leaf)
                    }
                    Stream::Leaf(slot, mut leaf) => {
                        let u = &batch[slot];
                        if !index.is_current(leaf) {
                            self.redescents += 1;
                            leaf = index.descend(&u.key);
                        }
                        self.accesses.push((slot, Access::Leaf));
                        let (prev_ts, result_ts) = index.apply_at(leaf, &u.key, &u.meta, u.ts);
                        out.push(Applied { slot, prev_ts, result_ts });
                        match next.next() {
                            Some(slot) => {
                                prefetch(index.dir_addr(&batch[slot].key));
                                Stream::Root(slot)
                            }
                            None => Stream::Idle,
                        }
                    }
                };
                progressed |= !matches!(s, Stream::Idle);
            }
            if !progressed {
                break;
            }
        }
        out
    }
}

/// One-at-a-time application in the given order; the reference behaviour.
pub fn apply_sequential(index: &mut PagedIndex, batch: &[Update]) {
    for u in batch {
        index.apply(&u.key, &u.meta, u.ts);
    }
}
