//! Sparse `(token, count)` lists and the tables that own them.

use super::hash::mix64;

pub const MAX_LIST: usize = 32;
const FIRST_CAP: usize = 4;
const NO_LIST: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Entry {
    pub token: u16,
    pub count: u16,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    start: u32,
    len: u8,
    cap: u8,
}

/// Arena of growable lists with per-capacity free lists. Capacities double
/// from 4 up to 32; a full 32-entry list replaces its first minimum-count
/// entry.
#[derive(Debug, Default)]
pub struct ListPool {
    heads: Vec<Head>,
    data: Vec<Entry>,
    free: [Vec<u32>; 4],
}

fn class(cap: usize) -> usize {
    (cap / FIRST_CAP).trailing_zeros() as usize
}

impl ListPool {
    fn alloc_block(&mut self, cap: usize) -> u32 {
        if let Some(start) = self.free[class(cap)].pop() {
            return start;
        }
        let start = self.data.len() as u32;
        self.data.resize(self.data.len() + cap, Entry::default());
        start
    }

    /// New list holding `(token, 1)`.
    pub fn create(&mut self, token: u16) -> u32 {
        let start = self.alloc_block(FIRST_CAP);
        self.data[start as usize] = Entry { token, count: 1 };
        self.heads.push(Head {
            start,
            len: 1,
            cap: FIRST_CAP as u8,
        });
        (self.heads.len() - 1) as u32
    }

    pub fn get(&self, list: u32) -> &[Entry] {
        let h = self.heads[list as usize];
        &self.data[h.start as usize..][..h.len as usize]
    }

    pub fn bump(&mut self, list: u32, token: u16) {
        let h = self.heads[list as usize];
        let entries = &mut self.data[h.start as usize..][..h.len as usize];
        if let Some(e) = entries.iter_mut().find(|e| e.token == token) {
            e.count = e.count.saturating_add(1);
            return;
        }
        let fresh = Entry { token, count: 1 };
        if (h.len as usize) < h.cap as usize {
            self.data[h.start as usize + h.len as usize] = fresh;
            self.heads[list as usize].len += 1;
        } else if (h.cap as usize) < MAX_LIST {
            let cap = h.cap as usize * 2;
            let start = self.alloc_block(cap);
            self.data
                .copy_within(h.start as usize..h.start as usize + h.len as usize, start as usize);
            self.data[start as usize + h.len as usize] = fresh;
            self.free[class(h.cap as usize)].push(h.start);
            self.heads[list as usize] = Head {
                start,
                len: h.len + 1,
                cap: cap as u8,
            };
        } else {
            let mut victim = 0;
            for (k, e) in entries.iter().enumerate() {
                if e.count < entries[victim].count {
                    victim = k;
                }
            }
            entries[victim] = fresh;
        }
    }
}

/// Open-addressed table from 64-bit context keys to sparse lists. Key 0
/// marks an empty slot. Keys live in their own array so untouched pages of
/// a large table are never faulted in.
#[derive(Debug)]
pub struct NgramTable {
    keys: Vec<u64>,
    /// List index + 1; zero-initialized like `keys`.
    lists: Vec<u32>,
    pool: ListPool,
    mask: usize,
    depth: usize,
    dropped: u64,
}

impl NgramTable {
    pub fn new(slot_bits: u32, probe_depth: usize) -> Self {
        let n = 1usize << slot_bits;
        Self {
            keys: vec![0; n],
            lists: vec![0; n],
            pool: ListPool::default(),
            mask: n - 1,
            depth: probe_depth.clamp(1, n),
            dropped: 0,
        }
    }

    /// Slot holding `key` and the number of slots inspected, or `None` with
    /// the first empty slot met (if any) when the key is absent.
    fn probe(&self, key: u64) -> (Result<usize, Option<usize>>, usize) {
        debug_assert_ne!(key, 0);
        let home = mix64(key) as usize & self.mask;
        for i in 0..self.depth {
            let s = (home + i) & self.mask;
            match self.keys[s] {
                k if k == key => return (Ok(s), i + 1),
                0 => return (Err(Some(s)), i + 1),
                _ => {}
            }
        }
        (Err(None), self.depth)
    }

    pub fn lookup(&self, key: u64) -> Option<&[Entry]> {
        match self.probe(key).0 {
            Ok(s) => Some(self.pool.get(self.lists[s] - 1)),
            Err(_) => None,
        }
    }

    /// Slots inspected to find `key`, if present.
    pub fn probe_len(&self, key: u64) -> Option<usize> {
        match self.probe(key) {
            (Ok(_), n) => Some(n),
            _ => None,
        }
    }

    pub fn update(&mut self, key: u64, token: u16) {
        match self.probe(key).0 {
            Ok(s) => self.pool.bump(self.lists[s] - 1, token),
            Err(Some(s)) => {
                self.keys[s] = key;
                self.lists[s] = self.pool.create(token) + 1;
            }
            Err(None) => self.dropped += 1,
        }
    }

    /// Updates discarded because the probe window was full.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn occupied(&self) -> usize {
        self.pool.heads.len()
    }

    pub fn capacity(&self) -> usize {
        self.keys.len()
    }
}

/// Sparse next-token lists indexed directly by the previous token.
#[derive(Debug)]
pub struct BigramArray {
    lists: Vec<u32>,
    pool: ListPool,
}

impl BigramArray {
    pub fn new(v_e: usize) -> Self {
        Self {
            lists: vec![NO_LIST; v_e],
            pool: ListPool::default(),
        }
    }

    pub fn lookup(&self, prev: u32) -> Option<&[Entry]> {
        match self.lists[prev as usize] {
            NO_LIST => None,
            l => Some(self.pool.get(l)),
        }
    }

    pub fn update(&mut self, prev: u32, token: u16) {
        match self.lists[prev as usize] {
            NO_LIST => self.lists[prev as usize] = self.pool.create(token),
            l => self.pool.bump(l, token),
        }
    }
}
