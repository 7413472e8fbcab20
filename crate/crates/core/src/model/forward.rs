//! Level-batched evaluation of the tree embedding and prediction networks
//! on a [`Tape`].
//!
//! A leaf sits on level 0 and an internal node one level above its higher
//! child, so every node on a level depends only on lower levels. All nodes
//! of one level, across every tree in a batch, go through the embedding
//! network as a single matrix.

use rand::Rng;

use crate::nn::{elu, Dropout, Matrix, Piece, Tape, Var};
use crate::tree::FlatTree;

/// Row `row` of level `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    level: usize,
    row: usize,
}

#[derive(Debug)]
struct InternalLevel {
    /// `ELU([depth/h, branch/h])` per node.
    feats: Matrix,
    children: Vec<(Slot, Slot)>,
}

/// Evaluation order for the nodes of a batch of trees.
#[derive(Debug)]
pub(crate) struct TreePlan {
    n: usize,
    /// Leaf embeddings, `ELU([depth/h, branch/h, 0, ..])`.
    leaves: Vec<f64>,
    internal: Vec<InternalLevel>,
    roots: Vec<Slot>,
}

fn ratio(x: f64, h: f64) -> f64 {
    // Only a single-leaf tree has zero height, and all of its ratios are 0.
    if h > 0.0 {
        x / h
    } else {
        0.0
    }
}

impl TreePlan {
    pub(crate) fn new(trees: &[&FlatTree], n: usize) -> Self {
        let mut plan = TreePlan {
            n,
            leaves: Vec::new(),
            internal: Vec::new(),
            roots: Vec::with_capacity(trees.len()),
        };
        let mut internal_feats: Vec<Vec<f64>> = Vec::new();
        for tree in trees {
            let h = tree.height;
            let mut slots: Vec<Slot> = Vec::with_capacity(tree.nodes.len());
            for node in &tree.nodes {
                let d = elu(ratio(node.depth, h));
                let b = elu(ratio(node.branch, h));
                let slot = match node.children {
                    None => {
                        let row = plan.leaves.len() / n;
                        plan.leaves.extend([d, b]);
                        plan.leaves.extend(std::iter::repeat_n(0.0, n - 2));
                        Slot { level: 0, row }
                    }
                    Some((l, r)) => {
                        let (a, c) = (slots[l], slots[r]);
                        let level = 1 + a.level.max(c.level);
                        while plan.internal.len() < level {
                            plan.internal.push(InternalLevel {
                                feats: Matrix::zeros(0, 2),
                                children: Vec::new(),
                            });
                            internal_feats.push(Vec::new());
                        }
                        let lvl = &mut plan.internal[level - 1];
                        lvl.children.push((a, c));
                        internal_feats[level - 1].extend([d, b]);
                        Slot {
                            level,
                            row: lvl.children.len() - 1,
                        }
                    }
                };
                slots.push(slot);
            }
            plan.roots.push(*slots.last().expect("tree has a root"));
        }
        for (lvl, feats) in plan.internal.iter_mut().zip(internal_feats) {
            lvl.feats = Matrix::from_vec(lvl.children.len(), 2, feats);
        }
        plan
    }

    /// Record the embedding of every tree on `tape`, using network `btu`.
    /// Returns the variable and row that hold each tree's root embedding.
    pub(crate) fn embed<R: Rng + ?Sized>(
        self,
        tape: &mut Tape,
        btu: usize,
        mut dropout: Option<(Dropout, &mut R)>,
    ) -> Vec<(Var, usize)> {
        let n = self.n;
        let leaf_rows = self.leaves.len() / n;
        let mut vars = vec![tape.input(Matrix::from_vec(leaf_rows, n, self.leaves))];
        for lvl in self.internal {
            let feats = tape.input(lvl.feats);
            let rows = lvl.children.len();
            let mut pieces = Vec::with_capacity(3 * rows);
            for (r, (a, b)) in lvl.children.iter().enumerate() {
                pieces.push(Piece {
                    src: feats,
                    src_row: r,
                    dst_row: r,
                    dst_col: 0,
                });
                pieces.push(Piece {
                    src: vars[a.level],
                    src_row: a.row,
                    dst_row: r,
                    dst_col: 2,
                });
                pieces.push(Piece {
                    src: vars[b.level],
                    src_row: b.row,
                    dst_row: r,
                    dst_col: 2 + n,
                });
            }
            let x = tape.assemble(rows, 2 * n + 2, pieces);
            let drop = dropout.as_mut().map(|(d, rng)| (*d, &mut **rng));
            vars.push(tape.mlp(btu, x, drop));
        }
        self.roots.iter().map(|s| (vars[s.level], s.row)).collect()
    }
}

/// Record the prediction network on `tape` for query rows. Row `q` joins
/// the embedding `roots[tree_of[q]]` with `scalars` row `q`. Channel 0 of
/// the output goes through softplus.
pub(crate) fn predict_rows<R: Rng + ?Sized>(
    tape: &mut Tape,
    pred: usize,
    roots: &[(Var, usize)],
    tree_of: &[usize],
    scalars: Matrix,
    dropout: Option<(Dropout, &mut R)>,
) -> Var {
    let rows = scalars.rows;
    debug_assert_eq!(tree_of.len(), rows);
    let width = tape.value(roots[0].0).cols;
    let sc = tape.input(scalars);
    let mut pieces = Vec::with_capacity(2 * rows);
    for (q, &t) in tree_of.iter().enumerate() {
        let (var, row) = roots[t];
        pieces.push(Piece {
            src: var,
            src_row: row,
            dst_row: q,
            dst_col: 0,
        });
        pieces.push(Piece {
            src: sc,
            src_row: q,
            dst_row: q,
            dst_col: width,
        });
    }
    let x = tape.assemble(rows, width + 4, pieces);
    let y = tape.mlp(pred, x, dropout);
    tape.softplus_col(y, 0)
}
