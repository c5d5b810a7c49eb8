use crate::crypto::{EncryptedRecord, KeyMaterial, Trapdoor};
use crate::error::Result;
use crate::fuzzyset::Method;

use super::{build_table, run_search, symbols_of, Corpus, IndexMeta, ResultSet, SearchRequest, Table, TrapdoorLookup};

pub(crate) const NIL: u32 = u32::MAX;

/// Arena node. Children form a singly linked sibling list sorted by symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Node {
    pub symbol: u16,
    pub first_child: u32,
    pub next_sibling: u32,
    pub leaf: u32,
}

impl Node {
    fn new(symbol: u16) -> Self {
        Node {
            symbol,
            first_child: NIL,
            next_sibling: NIL,
            leaf: NIL,
        }
    }
}

/// Sparse symbol trie: only paths of inserted trapdoors exist. Every leaf
/// sits at depth `l / n`; node 0 is the root and carries no symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrieIndex {
    pub(crate) meta: IndexMeta,
    pub(crate) nodes: Vec<Node>,
    pub(crate) leaves: Vec<Vec<EncryptedRecord>>,
}

impl TrieIndex {
    pub(crate) fn empty(meta: IndexMeta) -> Self {
        TrieIndex {
            meta,
            nodes: vec![Node::new(0)],
            leaves: Vec::new(),
        }
    }

    pub(crate) fn from_table(meta: IndexMeta, table: &Table) -> Self {
        let mut trie = TrieIndex::empty(meta);
        for (t, records) in table {
            trie.insert(t, records);
        }
        trie
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of leaves, one per distinct trapdoor.
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> NodeRef<'_> {
        NodeRef { trie: self, id: 0 }
    }

    /// Finds the child of `parent` labelled `symbol`.
    pub(crate) fn child(&self, parent: u32, symbol: u16) -> Option<u32> {
        let mut c = self.nodes[parent as usize].first_child;
        while c != NIL {
            let node = &self.nodes[c as usize];
            if node.symbol == symbol {
                return Some(c);
            }
            if node.symbol > symbol {
                return None;
            }
            c = node.next_sibling;
        }
        None
    }

    fn child_or_insert(&mut self, parent: u32, symbol: u16) -> u32 {
        let mut prev = NIL;
        let mut c = self.nodes[parent as usize].first_child;
        while c != NIL && self.nodes[c as usize].symbol < symbol {
            prev = c;
            c = self.nodes[c as usize].next_sibling;
        }
        if c != NIL && self.nodes[c as usize].symbol == symbol {
            return c;
        }
        let id = u32::try_from(self.nodes.len()).expect("trie exceeds u32 nodes");
        let mut node = Node::new(symbol);
        node.next_sibling = c;
        self.nodes.push(node);
        if prev == NIL {
            self.nodes[parent as usize].first_child = id;
        } else {
            self.nodes[prev as usize].next_sibling = id;
        }
        id
    }

    fn insert(&mut self, t: &Trapdoor, records: &[EncryptedRecord]) {
        let mut cur = 0u32;
        for s in symbols_of(t.as_bytes(), self.meta.symbol_bits) {
            cur = self.child_or_insert(cur, s);
        }
        let node = &mut self.nodes[cur as usize];
        if node.leaf == NIL {
            node.leaf = self.leaves.len() as u32;
            self.leaves.push(Vec::new());
        }
        let leaf = node.leaf as usize;
        self.leaves[leaf].extend_from_slice(records);
    }

    /// Follows `t`'s symbols from the root as far as they match. Returns the
    /// matched length and the deepest node reached.
    pub(crate) fn walk(&self, t: &Trapdoor) -> (usize, u32) {
        let mut cur = 0u32;
        let mut matched = 0;
        for s in symbols_of(t.as_bytes(), self.meta.symbol_bits) {
            match self.child(cur, s) {
                Some(c) => {
                    cur = c;
                    matched += 1;
                }
                None => break,
            }
        }
        (matched, cur)
    }

    pub(crate) fn leaf_records(&self, node: u32) -> Option<&[EncryptedRecord]> {
        match self.nodes[node as usize].leaf {
            NIL => None,
            leaf => Some(&self.leaves[leaf as usize]),
        }
    }

    pub(crate) fn children_of(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        let mut c = self.nodes[id as usize].first_child;
        std::iter::from_fn(move || {
            if c == NIL {
                return None;
            }
            let out = c;
            c = self.nodes[c as usize].next_sibling;
            Some(out)
        })
    }

    /// Depth of every leaf, in depth-first order.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaves.len());
        let mut stack = vec![(0u32, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            if self.nodes[id as usize].leaf != NIL {
                out.push(depth);
            }
            stack.extend(self.children_of(id).map(|c| (c, depth + 1)));
        }
        out
    }
}

impl TrapdoorLookup for TrieIndex {
    fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    fn lookup(&self, t: &Trapdoor) -> Option<&[EncryptedRecord]> {
        let (matched, node) = self.walk(t);
        if matched == self.meta.depth() {
            self.leaf_records(node)
        } else {
            None
        }
    }
}

/// Read-only view of one trie node.
#[derive(Clone, Copy)]
pub struct NodeRef<'a> {
    trie: &'a TrieIndex,
    id: u32,
}

impl<'a> NodeRef<'a> {
    /// The symbol on the edge into this node; `None` for the root.
    pub fn symbol(&self) -> Option<u16> {
        (self.id != 0).then(|| self.trie.nodes[self.id as usize].symbol)
    }

    pub fn children(&self) -> impl Iterator<Item = NodeRef<'a>> + 'a {
        let trie = self.trie;
        trie.children_of(self.id).map(move |id| NodeRef { trie, id })
    }

    pub fn is_leaf(&self) -> bool {
        self.trie.nodes[self.id as usize].leaf != NIL
    }

    /// Records stored at a leaf; empty for internal nodes.
    pub fn records(&self) -> &'a [EncryptedRecord] {
        self.trie.leaf_records(self.id).unwrap_or(&[])
    }
}

pub fn build_trie_index(corpus: &Corpus, d: usize, km: &KeyMaterial, method: Method) -> Result<TrieIndex> {
    let meta = IndexMeta::new(km, d, method)?;
    Ok(TrieIndex::from_table(meta, &build_table(corpus, d, km, method)?))
}

pub fn search_trie(index: &TrieIndex, req: &SearchRequest) -> Result<ResultSet> {
    run_search(index, req)
}
