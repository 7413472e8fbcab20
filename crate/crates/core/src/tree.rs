//! Rooted binary trees with branch lengths and their Newick representation.
//!
//! Branch lengths are in days. The root's branch length is always zero; a
//! Newick root length, if present, is accepted and dropped.
//!
//! Grammar accepted by [`ReconTree::parse_newick`]:
//!
//! ```text
//! tree    := subtree ";"
//! subtree := leaf | "(" subtree "," subtree ")" [label] [":" length]
//! leaf    := label [":" length]
//! label   := [A-Za-z0-9_.-]+
//! ```
//!
//! Every non-root edge must carry a length. Whitespace between tokens is
//! ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fmt::round_sig;

/// Significant digits used for branch lengths in serialized Newick.
pub const NEWICK_DIGITS: usize = 12;

/// A rooted binary tree with branch lengths.
///
/// Children keep their input order; nothing is ladderized.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconTree {
    Leaf {
        branch_length: f64,
        label: Option<String>,
    },
    Internal {
        branch_length: f64,
        label: Option<String>,
        left: Box<ReconTree>,
        right: Box<ReconTree>,
    },
}

/// Position of a node inside the tree it was annotated from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeContext {
    /// Distance from the root, in days.
    pub depth: f64,
    /// Height of the whole (super)tree the node belongs to.
    pub supertree_height: f64,
}

/// One node of a [`FlatTree`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatNode {
    pub depth: f64,
    pub branch: f64,
    /// Indices of the left and right children, both smaller than this node's.
    pub children: Option<(usize, usize)>,
}

/// Post-order array form of a tree; the root is the last element.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTree {
    pub nodes: Vec<FlatNode>,
    pub height: f64,
}

impl ReconTree {
    pub fn leaf(branch_length: f64) -> Self {
        ReconTree::Leaf {
            branch_length,
            label: None,
        }
    }

    pub fn labeled_leaf(label: impl Into<String>, branch_length: f64) -> Self {
        ReconTree::Leaf {
            branch_length,
            label: Some(label.into()),
        }
    }

    pub fn internal(branch_length: f64, left: ReconTree, right: ReconTree) -> Self {
        ReconTree::Internal {
            branch_length,
            label: None,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn branch_length(&self) -> f64 {
        match self {
            ReconTree::Leaf { branch_length, .. } | ReconTree::Internal { branch_length, .. } => {
                *branch_length
            }
        }
    }

    pub fn set_branch_length(&mut self, length: f64) {
        match self {
            ReconTree::Leaf { branch_length, .. } | ReconTree::Internal { branch_length, .. } => {
                *branch_length = length
            }
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ReconTree::Leaf { label, .. } | ReconTree::Internal { label, .. } => label.as_deref(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ReconTree::Leaf { .. })
    }

    pub fn left(&self) -> Option<&ReconTree> {
        match self {
            ReconTree::Internal { left, .. } => Some(left),
            ReconTree::Leaf { .. } => None,
        }
    }

    pub fn right(&self) -> Option<&ReconTree> {
        match self {
            ReconTree::Internal { right, .. } => Some(right),
            ReconTree::Leaf { .. } => None,
        }
    }

    pub fn tip_count(&self) -> usize {
        match self {
            ReconTree::Leaf { .. } => 1,
            ReconTree::Internal { left, right, .. } => left.tip_count() + right.tip_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        2 * self.tip_count() - 1
    }

    /// Longest root-to-tip path, ignoring this node's own branch.
    pub fn height(&self) -> f64 {
        match self {
            ReconTree::Leaf { .. } => 0.0,
            ReconTree::Internal { left, right, .. } => {
                let l = left.branch_length() + left.height();
                let r = right.branch_length() + right.height();
                l.max(r)
            }
        }
    }

    /// Depth of every node, in pre-order (node, left subtree, right subtree).
    pub fn annotate_depths(&self) -> Vec<NodeContext> {
        let supertree_height = self.height();
        let mut out = Vec::with_capacity(self.node_count());
        let mut stack = vec![(self, 0.0)];
        while let Some((node, depth)) = stack.pop() {
            out.push(NodeContext {
                depth,
                supertree_height,
            });
            if let ReconTree::Internal { left, right, .. } = node {
                stack.push((right, depth + right.branch_length()));
                stack.push((left, depth + left.branch_length()));
            }
        }
        out
    }

    /// Post-order array view used by the embedding network.
    pub fn flatten(&self) -> FlatTree {
        fn walk(node: &ReconTree, depth: f64, branch: f64, out: &mut Vec<FlatNode>) -> usize {
            let children = match node {
                ReconTree::Leaf { .. } => None,
                ReconTree::Internal { left, right, .. } => {
                    let l = walk(left, depth + left.branch_length(), left.branch_length(), out);
                    let r = walk(right, depth + right.branch_length(), right.branch_length(), out);
                    Some((l, r))
                }
            };
            out.push(FlatNode {
                depth,
                branch,
                children,
            });
            out.len() - 1
        }
        let mut nodes = Vec::with_capacity(self.node_count());
        walk(self, 0.0, 0.0, &mut nodes);
        FlatTree {
            nodes,
            height: self.height(),
        }
    }

    /// Copy with every branch length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ReconTree {
        match self {
            ReconTree::Leaf {
                branch_length,
                label,
            } => ReconTree::Leaf {
                branch_length: branch_length * factor,
                label: label.clone(),
            },
            ReconTree::Internal {
                branch_length,
                label,
                left,
                right,
            } => ReconTree::Internal {
                branch_length: branch_length * factor,
                label: label.clone(),
                left: Box::new(left.scaled(factor)),
                right: Box::new(right.scaled(factor)),
            },
        }
    }

    /// Tip labels in left-to-right order.
    pub fn tip_labels(&self) -> Vec<Option<&str>> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                ReconTree::Leaf { label, .. } => out.push(label.as_deref()),
                ReconTree::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Check the structural invariants: finite non-negative branch lengths
    /// and a zero-length root branch.
    pub fn validate(&self) -> Result<()> {
        if self.branch_length() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "root branch length must be 0, got {}",
                self.branch_length()
            )));
        }
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            let b = node.branch_length();
            if !b.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite branch length {b}")));
            }
            if b < 0.0 {
                return Err(Error::NegativeBranch { pos: 0, length: b });
            }
            if let ReconTree::Internal { left, right, .. } = node {
                stack.push(left);
                stack.push(right);
            }
        }
        Ok(())
    }

    /// Same topology and branch lengths within `tol`, ignoring labels.
    pub fn same_shape(&self, other: &ReconTree, tol: f64) -> bool {
        if (self.branch_length() - other.branch_length()).abs() > tol {
            return false;
        }
        match (self, other) {
            (ReconTree::Leaf { .. }, ReconTree::Leaf { .. }) => true,
            (
                ReconTree::Internal {
                    left: l1,
                    right: r1,
                    ..
                },
                ReconTree::Internal {
                    left: l2,
                    right: r2,
                    ..
                },
            ) => l1.same_shape(l2, tol) && r1.same_shape(r2, tol),
            _ => false,
        }
    }

    /// Canonical Newick: children left then right, lengths rounded to 12
    /// significant digits, no root length. Unlabeled tips are written as
    /// `tip<k>` where `k` is the tip's left-to-right index.
    pub fn to_newick(&self) -> String {
        fn write(node: &ReconTree, is_root: bool, next_tip: &mut usize, out: &mut String) {
            match node {
                ReconTree::Leaf { label, .. } => {
                    match label {
                        Some(l) => out.push_str(l),
                        None => {
                            let _ = write!(out, "tip{next_tip}");
                        }
                    }
                    *next_tip += 1;
                }
                ReconTree::Internal {
                    label, left, right, ..
                } => {
                    out.push('(');
                    write(left, false, next_tip, out);
                    out.push(',');
                    write(right, false, next_tip, out);
                    out.push(')');
                    if let Some(l) = label {
                        out.push_str(l);
                    }
                }
            }
            if !is_root {
                let _ = write!(out, ":{}", round_sig(node.branch_length(), NEWICK_DIGITS));
            }
        }
        let mut out = String::new();
        let mut next_tip = 0;
        write(self, true, &mut next_tip, &mut out);
        out.push(';');
        out
    }

    pub fn parse_newick(text: &str) -> Result<ReconTree> {
        let mut parser = Parser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        let mut tree = parser.subtree(true)?;
        parser.skip_ws();
        if parser.peek() != Some(b';') {
            return Err(parser.malformed("expected ';'"));
        }
        parser.pos += 1;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(parser.malformed("trailing characters after ';'"));
        }
        tree.set_branch_length(0.0);
        Ok(tree)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn is_label_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-')
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn malformed(&self, msg: &str) -> Error {
        Error::MalformedNewick {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn label(&mut self) -> Option<String> {
        let start = self.pos;
        while self.peek().is_some_and(is_label_byte) {
            self.pos += 1;
        }
        (self.pos > start)
            .then(|| String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn length(&mut self, is_root: bool) -> Result<f64> {
        self.skip_ws();
        if self.peek() != Some(b':') {
            if is_root {
                return Ok(0.0);
            }
            return Err(self.malformed("missing branch length"));
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
        {
            self.pos += 1;
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        let value: f64 = token.parse().map_err(|_| Error::MalformedNewick {
            pos: start,
            msg: format!("non-numeric branch length {token:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::MalformedNewick {
                pos: start,
                msg: format!("non-finite branch length {token:?}"),
            });
        }
        if value < 0.0 {
            return Err(Error::NegativeBranch {
                pos: start,
                length: value,
            });
        }
        Ok(value)
    }

    fn subtree(&mut self, is_root: bool) -> Result<ReconTree> {
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let open = self.pos;
            self.pos += 1;
            let mut children = vec![self.subtree(false)?];
            loop {
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                        children.push(self.subtree(false)?);
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return Err(self.malformed("expected ',' or ')'")),
                    None => return Err(self.malformed("unbalanced parentheses")),
                }
            }
            if children.len() != 2 {
                return Err(Error::NonBinary {
                    pos: open,
                    children: children.len(),
                });
            }
            self.skip_ws();
            let label = self.label();
            let branch_length = self.length(is_root)?;
            let right = children.pop().map(Box::new);
            let left = children.pop().map(Box::new);
            match (left, right) {
                (Some(left), Some(right)) => Ok(ReconTree::Internal {
                    branch_length,
                    label,
                    left,
                    right,
                }),
                _ => unreachable!("two children checked above"),
            }
        } else {
            if matches!(self.peek(), Some(b')') | None) {
                return Err(self.malformed("unbalanced parentheses"));
            }
            let label = self.label();
            if label.is_none() && !matches!(self.peek(), Some(b':' | b',' | b';')) {
                return Err(self.malformed("unexpected character"));
            }
            let branch_length = self.length(is_root)?;
            Ok(ReconTree::Leaf {
                branch_length,
                label,
            })
        }
    }
}

impl std::str::FromStr for ReconTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReconTree::parse_newick(s)
    }
}

impl std::fmt::Display for ReconTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_newick())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> ReconTree {
        ReconTree::parse_newick(s).unwrap()
    }

    #[test]
    fn height_of_simple_trees() {
        assert_eq!(ReconTree::leaf(0.0).height(), 0.0);
        assert_eq!(parse("(A:1.0,B:2.0):0.0;").height(), 2.0);
        // root-to-tip sums: 1+1, 1+1, 0.5
        assert_eq!(parse("((A:1,B:1):1,C:0.5):0;").height(), 2.0);
    }

    #[test]
    fn parses_cherry() {
        let t = parse("(A:1.0,B:2.0);");
        let expected = ReconTree::internal(
            0.0,
            ReconTree::labeled_leaf("A", 1.0),
            ReconTree::labeled_leaf("B", 2.0),
        );
        assert_eq!(t, expected);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ReconTree::parse_newick("(A:1.0,B:2.0,C:3.0);"),
            Err(Error::NonBinary { children: 3, .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("((A:1,B:1):1;"),
            Err(Error::MalformedNewick { .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A:1,B:1)"),
            Err(Error::MalformedNewick { .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A:x,B:1);"),
            Err(Error::MalformedNewick { .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A:1,B:-1);"),
            Err(Error::NegativeBranch { .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A,B:1);"),
            Err(Error::MalformedNewick { .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A:1);"),
            Err(Error::NonBinary { children: 1, .. })
        ));
        assert!(matches!(
            ReconTree::parse_newick("(A:1,B:1));"),
            Err(Error::MalformedNewick { .. })
        ));
    }

    #[test]
    fn root_length_is_dropped() {
        let t = parse("(A:1,B:2):5;");
        assert_eq!(t.branch_length(), 0.0);
        t.validate().unwrap();
    }

    #[test]
    fn serializes_canonically() {
        assert_eq!(ReconTree::leaf(0.0).to_newick(), "tip0;");
        let t = ReconTree::internal(0.0, ReconTree::leaf(1.0), ReconTree::leaf(2.0));
        assert_eq!(t.to_newick(), "(tip0:1,tip1:2);");
        let t = parse("( (A : 0.1 , B:0.2)x:0.30000000000000004 , C:1e-3 ) ;");
        assert_eq!(t.to_newick(), "((A:0.1,B:0.2)x:0.3,C:0.001);");
    }

    #[test]
    fn depths_of_cherry() {
        let ctx = parse("(A:1.0,B:2.0);").annotate_depths();
        assert_eq!(ctx.len(), 3);
        assert_eq!(ctx[0].depth, 0.0);
        assert_eq!(ctx[1].depth, 1.0);
        assert_eq!(ctx[2].depth, 2.0);
        assert!(ctx.iter().all(|c| c.supertree_height == 2.0));
    }

    #[test]
    fn flatten_is_post_order() {
        let flat = parse("((A:1,B:1):1,C:0.5);").flatten();
        assert_eq!(flat.nodes.len(), 5);
        assert_eq!(flat.height, 2.0);
        let root = flat.nodes.last().unwrap();
        assert_eq!(root.depth, 0.0);
        assert_eq!(root.branch, 0.0);
        for (i, n) in flat.nodes.iter().enumerate() {
            if let Some((l, r)) = n.children {
                assert!(l < i && r < i);
                assert_eq!(flat.nodes[l].depth, n.depth + flat.nodes[l].branch);
            }
        }
    }

    fn arb_tree() -> impl Strategy<Value = ReconTree> {
        let leaf = (0.0f64..10.0).prop_map(ReconTree::leaf);
        leaf.prop_recursive(8, 64, 2, |inner| {
            (0.0f64..10.0, inner.clone(), inner)
                .prop_map(|(b, l, r)| ReconTree::internal(b, l, r))
        })
        .prop_map(|mut t| {
            t.set_branch_length(0.0);
            t
        })
    }

    fn count_top_level_commas(s: &str) -> usize {
        s.bytes().filter(|&b| b == b',').count()
    }

    proptest! {
        #[test]
        fn newick_round_trip(t in arb_tree()) {
            let s = t.to_newick();
            let back = ReconTree::parse_newick(&s).unwrap();
            prop_assert!(back.same_shape(&t, 1e-9));
            prop_assert_eq!(back.to_newick(), s.clone());
            prop_assert_eq!(back.tip_count(), 1 + count_top_level_commas(&s));
        }

        #[test]
        fn depths_chain_along_edges(t in arb_tree()) {
            let ctx = t.annotate_depths();
            let h = t.height();
            let max_depth = ctx.iter().map(|c| c.depth).fold(0.0, f64::max);
            prop_assert!((max_depth - h).abs() <= 1e-12 * h.max(1.0));
            let flat = t.flatten();
            for n in &flat.nodes {
                if let Some((l, r)) = n.children {
                    prop_assert_eq!(flat.nodes[l].depth, n.depth + flat.nodes[l].branch);
                    prop_assert_eq!(flat.nodes[r].depth, n.depth + flat.nodes[r].branch);
                }
                if h > 0.0 {
                    let ratio = n.depth / h;
                    prop_assert!((0.0..=1.0 + 1e-9).contains(&ratio));
                }
            }
        }
    }
}
