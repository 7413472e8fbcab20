use super::process::{EventKind, TransmissionTree};
use crate::error::{Error, Result};
use crate::tree::ReconTree;

/// Reconstructed phylogeny of the sequenced infections.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub tree: ReconTree,
    /// Time of the last sampling event; the "present".
    pub t_present: f64,
    /// Absolute time of the root (the most recent common ancestor).
    pub t_mrca: f64,
    /// Transmission-tree segment of each tip, in left-to-right tip order.
    pub tip_nodes: Vec<usize>,
}

/// Keep only the lineages ancestral to at least one sample, suppress the
/// resulting degree-two nodes and root the result at the most recent common
/// ancestor of all samples. Tips are labelled `tip<k>` left to right.
pub fn prune_to_reconstructed(tt: &TransmissionTree) -> Result<Reconstruction> {
    let nodes = tt.nodes();
    let n_samples = tt.sample_count();
    if n_samples < 2 {
        return Err(Error::FewerThanTwoSamples(n_samples));
    }

    // Children always come after their parent, so one reverse sweep settles
    // which segments lead to a sample.
    let mut sampled = vec![false; nodes.len()];
    for i in (0..nodes.len()).rev() {
        sampled[i] = match nodes[i].kind {
            EventKind::Sampling => true,
            EventKind::Birth => {
                let (a, b) = nodes[i].children.expect("birth has two children");
                sampled[a] || sampled[b]
            }
            EventKind::Death | EventKind::Extant => false,
        };
    }

    // Follow single-sampled-child births down to the next sample or branching.
    let descend = |mut i: usize| -> usize {
        loop {
            match nodes[i].children {
                Some((a, b)) if sampled[a] && sampled[b] => return i,
                Some((a, _)) if sampled[a] => i = a,
                Some((_, b)) => i = b,
                None => return i,
            }
        }
    };

    let mrca = descend(TransmissionTree::ROOT);
    if nodes[mrca].kind != EventKind::Birth {
        return Err(Error::FewerThanTwoSamples(n_samples));
    }

    struct Builder<'a> {
        tt: &'a TransmissionTree,
        tip_nodes: Vec<usize>,
        t_present: f64,
    }

    impl Builder<'_> {
        fn build(&mut self, i: usize, parent_time: f64, descend: &dyn Fn(usize) -> usize) -> ReconTree {
            let node = self.tt.nodes()[i];
            let branch = node.time - parent_time;
            match node.children {
                Some((a, b)) => {
                    let left = self.build(descend(a), node.time, descend);
                    let right = self.build(descend(b), node.time, descend);
                    ReconTree::internal(branch, left, right)
                }
                None => {
                    debug_assert_eq!(node.kind, EventKind::Sampling);
                    let label = format!("tip{}", self.tip_nodes.len());
                    self.tip_nodes.push(i);
                    self.t_present = self.t_present.max(node.time);
                    ReconTree::labeled_leaf(label, branch)
                }
            }
        }
    }

    let t_mrca = nodes[mrca].time;
    let mut builder = Builder {
        tt,
        tip_nodes: Vec::with_capacity(n_samples),
        t_present: f64::NEG_INFINITY,
    };
    let tree = builder.build(mrca, t_mrca, &descend);
    debug_assert_eq!(builder.tip_nodes.len(), n_samples);
    Ok(Reconstruction {
        tree,
        t_present: builder.t_present,
        t_mrca,
        tip_nodes: builder.tip_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::process::StopReason;

    #[test]
    fn two_samples_form_a_cherry() {
        // Index case infects at t=1; the infector is sampled at 4, the
        // infectee at 2.5.
        let mut tt = TransmissionTree::new();
        let (a, b) = tt.birth(TransmissionTree::ROOT, 1.0);
        tt.sample(a, 4.0);
        tt.sample(b, 2.5);
        tt.finish(5.0, StopReason::TimeLimit);
        let rec = prune_to_reconstructed(&tt).unwrap();
        assert_eq!(rec.t_mrca, 1.0);
        assert_eq!(rec.t_present, 4.0);
        assert_eq!(rec.tree.to_newick(), "(tip0:3,tip1:1.5);");
        assert_eq!(rec.tree.height(), 3.0);
    }

    #[test]
    fn unsampled_lineages_are_removed() {
        // root -> birth(1) -> [x, y]; x -> birth(2) -> [x1 sampled 3, x2 dies 4];
        // y -> birth(1.5) -> [y1 sampled 5, y2 extant]
        let mut tt = TransmissionTree::new();
        let (x, y) = tt.birth(TransmissionTree::ROOT, 1.0);
        let (x1, x2) = tt.birth(x, 2.0);
        let (y1, _y2) = tt.birth(y, 1.5);
        tt.sample(x1, 3.0);
        tt.death(x2, 4.0);
        tt.sample(y1, 5.0);
        tt.finish(6.0, StopReason::TimeLimit);
        let rec = prune_to_reconstructed(&tt).unwrap();
        // Suppressed nodes merge into edges of length 3-1 and 5-1.
        assert_eq!(rec.tree.to_newick(), "(tip0:2,tip1:4);");
        assert_eq!(rec.tip_nodes, vec![x1, y1]);
    }

    #[test]
    fn one_sample_is_an_error() {
        let mut tt = TransmissionTree::new();
        let (a, _) = tt.birth(TransmissionTree::ROOT, 1.0);
        tt.sample(a, 2.0);
        tt.finish(3.0, StopReason::TimeLimit);
        assert!(matches!(prune_to_reconstructed(&tt), Err(Error::FewerThanTwoSamples(1))));
    }
}
