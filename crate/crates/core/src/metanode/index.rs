//! Paged ordered index: a sorted directory of low keys over sorted leaf pages.
//!
//! Every lookup touches the directory and then one leaf, which gives the
//! batch scheduler two natural suspension points.

use serde::Serialize;

use crate::wire::{Location, MetadataPayload, Timestamp, FIELD_COUNT};

pub const PAGE_CAPACITY: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetaValue {
    Location(Location),
    /// Partial-mode record: every field with the timestamp that set it.
    Fields { values: [u32; FIELD_COUNT], ts: [u32; FIELD_COUNT] },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaRecord {
    pub value: MetaValue,
    /// Newest applied update.
    pub ts: Timestamp,
}

impl MetaRecord {
    pub fn new(meta: &MetadataPayload, ts: Timestamp) -> Self {
        let value = match meta {
            MetadataPayload::Full(loc) => MetaValue::Location(*loc),
            MetadataPayload::Partial(_) => MetaValue::Fields { values: [0; FIELD_COUNT], ts: [0; FIELD_COUNT] },
        };
        let mut rec = MetaRecord { value, ts: Timestamp::NONE };
        rec.apply(meta, ts);
        rec
    }

    /// Newest-wins merge. Partial deltas are merged field by field.
    pub fn apply(&mut self, meta: &MetadataPayload, ts: Timestamp) {
        match (&mut self.value, meta) {
            (MetaValue::Location(cur), MetadataPayload::Full(loc)) => {
                if ts > self.ts {
                    *cur = *loc;
                }
            }
            (MetaValue::Fields { values, ts: fts }, MetadataPayload::Partial(delta)) => {
                for (f, v) in delta.iter() {
                    if ts.0 > fts[f] {
                        values[f] = v;
                        fts[f] = ts.0;
                    }
                }
            }
            // a key never switches between full and partial records
            _ => return,
        }
        self.ts = self.ts.max(ts);
    }

    /// Fields with `delta` merged over them, without persisting.
    pub fn merged_fields(&self, delta: Option<(&MetadataPayload, Timestamp)>) -> Option<Vec<u32>> {
        let mut tmp = self.clone();
        if let Some((meta, ts)) = delta {
            tmp.apply(meta, ts);
        }
        match tmp.value {
            MetaValue::Fields { values, .. } => Some(values.to_vec()),
            MetaValue::Location(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Page {
    entries: Vec<(Vec<u8>, MetaRecord)>,
    version: u64,
}

/// Position of a leaf found by a descent, with the version it had then.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafRef {
    pub page: usize,
    pub version: u64,
}

#[derive(Clone, Debug)]
pub struct PagedIndex {
    /// `(low key, page id)` sorted by low key; the first low key is empty.
    dir: Vec<(Vec<u8>, usize)>,
    pages: Vec<Page>,
    len: usize,
}

impl Default for PagedIndex {
    fn default() -> Self {
        PagedIndex { dir: vec![(Vec::new(), 0)], pages: vec![Page::default()], len: 0 }
    }
}

impl PagedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn dir_slot(&self, key: &[u8]) -> usize {
        self.dir.partition_point(|(low, _)| low.as_slice() <= key) - 1
    }

    /// Directory access.
    pub fn descend(&self, key: &[u8]) -> LeafRef {
        let page = self.dir[self.dir_slot(key)].1;
        LeafRef { page, version: self.pages[page].version }
    }

    /// Address of the directory slot a descent for `key` will read.
    pub(crate) fn dir_addr(&self, key: &[u8]) -> *const u8 {
        let slot = self.dir.partition_point(|(low, _)| low.as_slice() <= key).saturating_sub(1);
        self.dir.as_ptr().wrapping_add(slot) as *const u8
    }

    pub(crate) fn page_addr(&self, leaf: LeafRef) -> *const u8 {
        self.pages[leaf.page].entries.as_ptr() as *const u8
    }

    pub fn is_current(&self, leaf: LeafRef) -> bool {
        self.pages[leaf.page].version == leaf.version
    }

    pub fn get(&self, key: &[u8]) -> Option<&MetaRecord> {
        let page = &self.pages[self.descend(key).page];
        page.entries.binary_search_by(|(k, _)| k.as_slice().cmp(key)).ok().map(|i| &page.entries[i].1)
    }

    /// Newest-wins upsert; returns `(previous ts, resulting ts)`.
    pub fn apply(&mut self, key: &[u8], meta: &MetadataPayload, ts: Timestamp) -> (Timestamp, Timestamp) {
        let leaf = self.descend(key);
        self.apply_at(leaf, key, meta, ts)
    }

    /// Leaf access. `leaf` must be current for `key`.
    pub fn apply_at(&mut self, leaf: LeafRef, key: &[u8], meta: &MetadataPayload, ts: Timestamp) -> (Timestamp, Timestamp) {
        debug_assert!(self.is_current(leaf));
        let page = &mut self.pages[leaf.page];
        let out = match page.entries.binary_search_by(|(k, _)| k.as_slice().cmp(key)) {
            Ok(i) => {
                let rec = &mut page.entries[i].1;
                let prev = rec.ts;
                rec.apply(meta, ts);
                (prev, rec.ts)
            }
            Err(i) => {
                let rec = MetaRecord::new(meta, ts);
                let res = rec.ts;
                page.entries.insert(i, (key.to_vec(), rec));
                page.version += 1;
                self.len += 1;
                (Timestamp::NONE, res)
            }
        };
        if self.pages[leaf.page].entries.len() > PAGE_CAPACITY {
            self.split(leaf.page);
        }
        out
    }

    fn split(&mut self, page: usize) {
        let half = self.pages[page].entries.len() / 2;
        let upper = self.pages[page].entries.split_off(half);
        self.pages[page].version += 1;
        let low = upper[0].0.clone();
        let id = self.pages.len();
        self.pages.push(Page { entries: upper, version: 0 });
        let at = self.dir.partition_point(|(l, _)| *l <= low);
        self.dir.insert(at, (low, id));
    }

    /// All records in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &MetaRecord)> {
        self.dir
            .iter()
            .flat_map(move |(_, p)| self.pages[*p].entries.iter().map(|(k, r)| (k.as_slice(), r)))
    }

    /// Sorted JSON lines: `{key, log_id, ts}` or `{key, fields, ts}`.
    pub fn dump(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            key: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            log_id: Option<u32>,
            #[serde(skip_serializing_if = "Option::is_none")]
            fields: Option<&'a [u32]>,
            ts: u32,
        }
        let rows: Vec<Row> = self
            .iter()
            .map(|(k, r)| {
                let (log_id, fields) = match &r.value {
                    MetaValue::Location(l) => (Some(l.log_id), None),
                    MetaValue::Fields { values, .. } => (None, Some(&values[..])),
                };
                Row { key: hex::encode(k), log_id, fields, ts: r.ts.0 }
            })
            .collect();
        crate::trace::to_json_lines(&rows)
    }
}
