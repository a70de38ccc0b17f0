//! Order-statistic multiset.
//!
//! An arena-backed treap whose nodes carry subtree sizes, so that rank
//! selection, rank-of-value queries, insertion and removal by rank are all
//! `O(log n)` expected. Duplicates are allowed; equal elements keep their
//! insertion order relative to one another.
//!
//! An optional [`Summary`] folds an associative aggregate over each subtree,
//! which serves range queries by position.
//!
//! Node priorities come from a private xorshift generator with a fixed seed,
//! so the tree shape is a deterministic function of the operation sequence
//! and never consumes randomness from a simulation stream.

use std::cmp::Ordering;

const NIL: usize = usize::MAX;

/// Associative aggregate maintained per subtree.
pub trait Summary<T> {
    type Value: Copy + std::fmt::Debug;
    fn leaf(value: &T) -> Self::Value;
    fn combine(a: Self::Value, b: Self::Value) -> Self::Value;
}

/// The trivial aggregate.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSummary;

impl<T> Summary<T> for NoSummary {
    type Value = ();
    fn leaf(_: &T) {}
    fn combine(_: (), _: ()) {}
}

#[derive(Debug, Clone)]
struct Node<T, S: Copy> {
    value: T,
    prio: u64,
    left: usize,
    right: usize,
    size: usize,
    agg: S,
}

/// Indexable ordered multiset with `O(log n)` rank operations.
#[derive(Debug, Clone)]
pub struct OrderStatTree<T, A: Summary<T> = NoSummary> {
    nodes: Vec<Node<T, A::Value>>,
    free: Vec<usize>,
    root: usize,
    prio_state: u64,
}

impl<T: Ord + Copy, A: Summary<T>> Default for OrderStatTree<T, A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Ord + Copy, A: Summary<T>> OrderStatTree<T, A> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            free: Vec::new(),
            root: NIL,
            prio_state: 0x9E37_79B9_7F4A_7C15,
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        let mut t = Self::new();
        t.nodes.reserve(cap);
        t
    }

    pub fn len(&self) -> usize {
        self.size(self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }

    fn size(&self, t: usize) -> usize {
        if t == NIL {
            0
        } else {
            self.nodes[t].size
        }
    }

    fn next_prio(&mut self) -> u64 {
        // xorshift64*
        let mut x = self.prio_state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.prio_state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    fn alloc(&mut self, value: T) -> usize {
        let prio = self.next_prio();
        let node = Node {
            value,
            prio,
            left: NIL,
            right: NIL,
            size: 1,
            agg: A::leaf(&value),
        };
        match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn update(&mut self, t: usize) {
        let (l, r) = (self.nodes[t].left, self.nodes[t].right);
        self.nodes[t].size = 1 + self.size(l) + self.size(r);
        let mut agg = A::leaf(&self.nodes[t].value);
        if l != NIL {
            agg = A::combine(self.nodes[l].agg, agg);
        }
        if r != NIL {
            agg = A::combine(agg, self.nodes[r].agg);
        }
        self.nodes[t].agg = agg;
    }

    /// Aggregate over zero-based positions `lo..hi`; `None` when empty.
    pub fn fold(&self, lo: usize, hi: usize) -> Option<A::Value> {
        let hi = hi.min(self.len());
        if lo >= hi {
            return None;
        }
        self.fold_node(self.root, lo, hi)
    }

    fn fold_node(&self, t: usize, lo: usize, hi: usize) -> Option<A::Value> {
        let node = &self.nodes[t];
        if lo == 0 && hi == node.size {
            return Some(node.agg);
        }
        let ls = self.size(node.left);
        let mut acc: Option<A::Value> = None;
        let mut join = |v: A::Value| {
            acc = Some(match acc {
                Some(a) => A::combine(a, v),
                None => v,
            });
        };
        if lo < ls {
            if let Some(v) = self.fold_node(node.left, lo, hi.min(ls)) {
                join(v);
            }
        }
        if lo <= ls && ls < hi {
            join(A::leaf(&node.value));
        }
        if hi > ls + 1 {
            if let Some(v) = self.fold_node(node.right, lo.saturating_sub(ls + 1), hi - ls - 1) {
                join(v);
            }
        }
        acc
    }

    fn merge(&mut self, a: usize, b: usize) -> usize {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        if self.nodes[a].prio > self.nodes[b].prio {
            let r = self.nodes[a].right;
            self.nodes[a].right = self.merge(r, b);
            self.update(a);
            a
        } else {
            let l = self.nodes[b].left;
            self.nodes[b].left = self.merge(a, l);
            self.update(b);
            b
        }
    }

    /// Splits into (elements `<= v`, elements `> v`).
    fn split_le(&mut self, t: usize, v: &T) -> (usize, usize) {
        if t == NIL {
            return (NIL, NIL);
        }
        if self.nodes[t].value <= *v {
            let r = self.nodes[t].right;
            let (a, b) = self.split_le(r, v);
            self.nodes[t].right = a;
            self.update(t);
            (t, b)
        } else {
            let l = self.nodes[t].left;
            let (a, b) = self.split_le(l, v);
            self.nodes[t].left = b;
            self.update(t);
            (a, t)
        }
    }

    /// Splits into (first `k` elements, the rest).
    fn split_at(&mut self, t: usize, k: usize) -> (usize, usize) {
        if t == NIL {
            return (NIL, NIL);
        }
        let l = self.nodes[t].left;
        let ls = self.size(l);
        if k <= ls {
            let (a, b) = self.split_at(l, k);
            self.nodes[t].left = b;
            self.update(t);
            (a, t)
        } else {
            let r = self.nodes[t].right;
            let (a, b) = self.split_at(r, k - ls - 1);
            self.nodes[t].right = a;
            self.update(t);
            (t, b)
        }
    }

    pub fn insert(&mut self, value: T) {
        let n = self.alloc(value);
        let root = self.root;
        let (a, b) = self.split_le(root, &value);
        let a = self.merge(a, n);
        self.root = self.merge(a, b);
    }

    /// Removes and returns the element at zero-based position `idx`.
    pub fn remove_at(&mut self, idx: usize) -> Option<T> {
        if idx >= self.len() {
            return None;
        }
        let root = self.root;
        let (a, rest) = self.split_at(root, idx);
        let (mid, b) = self.split_at(rest, 1);
        let value = self.nodes[mid].value;
        self.free.push(mid);
        self.root = self.merge(a, b);
        Some(value)
    }

    /// Element at zero-based position `idx` in ascending order.
    pub fn get(&self, mut idx: usize) -> Option<&T> {
        if idx >= self.len() {
            return None;
        }
        let mut t = self.root;
        loop {
            let node = &self.nodes[t];
            let ls = self.size(node.left);
            match idx.cmp(&ls) {
                Ordering::Less => t = node.left,
                Ordering::Equal => return Some(&node.value),
                Ordering::Greater => {
                    idx -= ls + 1;
                    t = node.right;
                }
            }
        }
    }

    /// Number of elements `<= v`.
    pub fn count_le(&self, v: &T) -> usize {
        let mut t = self.root;
        let mut acc = 0;
        while t != NIL {
            let node = &self.nodes[t];
            if node.value <= *v {
                acc += self.size(node.left) + 1;
                t = node.right;
            } else {
                t = node.left;
            }
        }
        acc
    }

    /// Number of elements `< v`.
    pub fn count_lt(&self, v: &T) -> usize {
        let mut t = self.root;
        let mut acc = 0;
        while t != NIL {
            let node = &self.nodes[t];
            if node.value < *v {
                acc += self.size(node.left) + 1;
                t = node.right;
            } else {
                t = node.left;
            }
        }
        acc
    }

    pub fn first(&self) -> Option<&T> {
        self.get(0)
    }

    pub fn last(&self) -> Option<&T> {
        self.len().checked_sub(1).and_then(|i| self.get(i))
    }

    /// In-order iterator.
    pub fn iter(&self) -> Iter<'_, T, A> {
        let mut it = Iter {
            tree: self,
            stack: Vec::new(),
        };
        it.push_left(self.root);
        it
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().copied().collect()
    }
}

impl<T: Ord + Copy, A: Summary<T>> FromIterator<T> for OrderStatTree<T, A> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut t = Self::new();
        for v in iter {
            t.insert(v);
        }
        t
    }
}

pub struct Iter<'a, T, A: Summary<T>> {
    tree: &'a OrderStatTree<T, A>,
    stack: Vec<usize>,
}

impl<T, A: Summary<T>> Iter<'_, T, A> {
    fn push_left(&mut self, mut t: usize) {
        while t != NIL {
            self.stack.push(t);
            t = self.tree.nodes[t].left;
        }
    }
}

impl<'a, T, A: Summary<T>> Iterator for Iter<'a, T, A> {
    type Item = &'a T;

    fn next(&mut self) -> Option<&'a T> {
        let t = self.stack.pop()?;
        let right = self.tree.nodes[t].right;
        self.push_left(right);
        Some(&self.tree.nodes[t].value)
    }
}
