//! Intrusive doubly-linked lists over dense page slots.
//!
//! One [`ListArena`] holds the links for every page; a page is linked into
//! at most one list at a time. Lists are just head/tail/len triples, so the
//! swap policy's single LRU and the per-context multi-queue levels share
//! the same storage.

pub const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct List {
    head: u32,
    tail: u32,
    len: usize,
}

impl Default for List {
    fn default() -> Self {
        Self { head: NIL, tail: NIL, len: 0 }
    }
}

impl List {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn front(&self) -> Option<u32> {
        (self.head != NIL).then_some(self.head)
    }

    pub fn back(&self) -> Option<u32> {
        (self.tail != NIL).then_some(self.tail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ListArena {
    prev: Vec<u32>,
    next: Vec<u32>,
    linked: Vec<bool>,
}

impl ListArena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ensure(&mut self, slots: usize) {
        if self.prev.len() < slots {
            self.prev.resize(slots, NIL);
            self.next.resize(slots, NIL);
            self.linked.resize(slots, false);
        }
    }

    #[inline]
    pub fn is_linked(&self, slot: u32) -> bool {
        self.linked.get(slot as usize).copied().unwrap_or(false)
    }

    pub fn push_front(&mut self, list: &mut List, slot: u32) {
        debug_assert!(!self.linked[slot as usize], "slot {slot} already linked");
        let s = slot as usize;
        self.prev[s] = NIL;
        self.next[s] = list.head;
        if list.head != NIL {
            self.prev[list.head as usize] = slot;
        } else {
            list.tail = slot;
        }
        list.head = slot;
        list.len += 1;
        self.linked[s] = true;
    }

    pub fn push_back(&mut self, list: &mut List, slot: u32) {
        debug_assert!(!self.linked[slot as usize], "slot {slot} already linked");
        let s = slot as usize;
        self.next[s] = NIL;
        self.prev[s] = list.tail;
        if list.tail != NIL {
            self.next[list.tail as usize] = slot;
        } else {
            list.head = slot;
        }
        list.tail = slot;
        list.len += 1;
        self.linked[s] = true;
    }

    /// Unlink `slot` from `list`. The caller guarantees membership.
    pub fn remove(&mut self, list: &mut List, slot: u32) {
        let s = slot as usize;
        debug_assert!(self.linked[s], "slot {slot} not linked");
        let (p, n) = (self.prev[s], self.next[s]);
        if p != NIL {
            self.next[p as usize] = n;
        } else {
            list.head = n;
        }
        if n != NIL {
            self.prev[n as usize] = p;
        } else {
            list.tail = p;
        }
        self.prev[s] = NIL;
        self.next[s] = NIL;
        self.linked[s] = false;
        list.len -= 1;
    }

    pub fn pop_front(&mut self, list: &mut List) -> Option<u32> {
        let h = list.front()?;
        self.remove(list, h);
        Some(h)
    }

    pub fn pop_back(&mut self, list: &mut List) -> Option<u32> {
        let t = list.back()?;
        self.remove(list, t);
        Some(t)
    }

    #[inline]
    pub fn next_of(&self, slot: u32) -> Option<u32> {
        let n = self.next[slot as usize];
        (n != NIL).then_some(n)
    }

    /// Front-to-back iteration.
    pub fn iter<'a>(&'a self, list: &List) -> impl Iterator<Item = u32> + 'a {
        let mut cur = list.head;
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let out = cur;
            cur = self.next[cur as usize];
            Some(out)
        })
    }
}
