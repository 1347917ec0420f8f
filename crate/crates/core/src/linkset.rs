//! Subsets of links.
//!
//! Link `i` corresponds to bit `i` of the integer encoding used by the exhaustive oracle
//! routines, so `{0, 2}` encodes as `0b101 = 5`.

use std::fmt;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct LinkSet {
    members: Vec<bool>,
    len: usize,
}

impl LinkSet {
    pub fn empty(n_links: usize) -> Self {
        Self { members: vec![false; n_links], len: 0 }
    }

    pub fn full(n_links: usize) -> Self {
        Self { members: vec![true; n_links], len: n_links }
    }

    pub fn from_ids(n_links: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n_links);
        for i in ids {
            s.insert(i);
        }
        s
    }

    /// Decodes the bit-index encoding. Bits at or above `n_links` are ignored.
    pub fn from_mask(n_links: usize, mask: u64) -> Self {
        Self::from_ids(n_links, (0..n_links.min(64)).filter(|&i| mask >> i & 1 == 1))
    }

    /// Bit-index encoding. Only meaningful for `n_links <= 64`.
    pub fn to_mask(&self) -> u64 {
        self.iter().filter(|&i| i < 64).fold(0, |m, i| m | 1 << i)
    }

    #[inline]
    pub fn n_links(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.members.get(i).copied().unwrap_or(false)
    }

    /// Returns `true` when the link was not already present.
    pub fn insert(&mut self, i: usize) -> bool {
        let was = std::mem::replace(&mut self.members[i], true);
        if !was {
            self.len += 1;
        }
        !was
    }

    /// Returns `true` when the link was present.
    pub fn remove(&mut self, i: usize) -> bool {
        let was = std::mem::replace(&mut self.members[i], false);
        if was {
            self.len -= 1;
        }
        was
    }

    pub fn set(&mut self, i: usize, on: bool) {
        if on {
            self.insert(i);
        } else {
            self.remove(i);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn as_flags(&self) -> &[bool] {
        &self.members
    }
}

impl fmt::Debug for LinkSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for LinkSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}
