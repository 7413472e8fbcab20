//! Reverse-mode differentiation over row-batched matrices.
//!
//! Every tape variable is a matrix whose rows are independent items (tree
//! nodes, query points). Operations append to the tape during the forward
//! pass; [`Tape::backward`] walks it in reverse and accumulates parameter
//! gradients for every network the tape was built over. A network can be
//! applied any number of times on one tape (weight sharing), which is what
//! the recursive tree embedding needs.

use rand::Rng;

use super::dense::{elu, elu_grad, sigmoid, softplus, DenseNet, Dropout, NetGrads};
use super::loss::{pinball_grad, pinball_loss};
use super::matrix::{gemm_ab, gemm_abt, gemm_atb, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Copy all of row `src_row` of `src` into row `dst_row` of the assembled
/// matrix, starting at column `dst_col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub src: Var,
    pub src_row: usize,
    pub dst_row: usize,
    pub dst_col: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Dense { x: usize, net: usize, layer: usize },
    Elu { x: usize },
    Mask { x: usize, mask: Vec<f64> },
    Softplus { x: usize, col: usize },
    Assemble { pieces: Vec<Piece> },
    Pinball { x: usize, targets: Matrix, taus: Vec<f64>, scale: f64 },
    Add { xs: Vec<usize> },
    Sum { x: usize },
}

#[derive(Debug)]
struct Entry {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'n> {
    nets: Vec<&'n DenseNet>,
    entries: Vec<Entry>,
}

impl<'n> Tape<'n> {
    /// A tape whose `Dense` operations refer to `nets` by index.
    pub fn new(nets: Vec<&'n DenseNet>) -> Self {
        Tape {
            nets,
            entries: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.entries.push(Entry {
            value,
            op,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.entries[v.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A constant.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    /// `x · Wᵀ + b` for layer `layer` of network `net`.
    pub fn dense(&mut self, net: usize, layer: usize, x: Var) -> Var {
        let l = &self.nets[net].layers[layer];
        let xv = &self.entries[x.0].value;
        assert_eq!(xv.cols, l.weights.cols, "dense input width");
        let mut y = Matrix::zeros(xv.rows, l.weights.rows);
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&l.bias);
        }
        gemm_abt(1.0, xv, &l.weights, 1.0, &mut y);
        self.push(y, Op::Dense { x: x.0, net, layer }, true)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let xv = &self.entries[x.0].value;
        let y = Matrix::from_vec(xv.rows, xv.cols, xv.data.iter().map(|&v| elu(v)).collect());
        let ng = self.entries[x.0].needs_grad;
        self.push(y, Op::Elu { x: x.0 }, ng)
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = &self.entries[x.0].value;
        assert_eq!(mask.len(), xv.data.len(), "mask shape");
        let y = Matrix::from_vec(
            xv.rows,
            xv.cols,
            xv.data.iter().zip(&mask).map(|(a, b)| a * b).collect(),
        );
        let ng = self.entries[x.0].needs_grad;
        self.push(y, Op::Mask { x: x.0, mask }, ng)
    }

    /// Softplus applied to column `col` only; other columns pass through.
    pub fn softplus_col(&mut self, x: Var, col: usize) -> Var {
        let mut y = self.entries[x.0].value.clone();
        for r in 0..y.rows {
            let v = &mut y.data[r * y.cols + col];
            *v = softplus(*v);
        }
        let ng = self.entries[x.0].needs_grad;
        self.push(y, Op::Softplus { x: x.0, col }, ng)
    }

    /// Build a `rows × cols` matrix out of row copies. Cells not covered by
    /// any piece are zero.
    pub fn assemble(&mut self, rows: usize, cols: usize, pieces: Vec<Piece>) -> Var {
        let mut y = Matrix::zeros(rows, cols);
        let mut ng = false;
        for p in &pieces {
            let src = &self.entries[p.src.0];
            ng |= src.needs_grad;
            let row = src.value.row(p.src_row);
            y.row_mut(p.dst_row)[p.dst_col..p.dst_col + row.len()].copy_from_slice(row);
        }
        self.push(y, Op::Assemble { pieces }, ng)
    }

    /// `scale · Σ_r Σ_c pinball(taus[r], x[r,c], targets[r,c])` as a 1×1.
    pub fn pinball(&mut self, x: Var, targets: Matrix, taus: Vec<f64>, scale: f64) -> Var {
        let xv = &self.entries[x.0].value;
        assert_eq!((xv.rows, xv.cols), (targets.rows, targets.cols), "pinball shapes");
        assert_eq!(taus.len(), xv.rows, "one tau per row");
        let mut total = 0.0;
        for r in 0..xv.rows {
            for c in 0..xv.cols {
                total += pinball_loss(taus[r], xv.get(r, c), targets.get(r, c));
            }
        }
        let ng = self.entries[x.0].needs_grad;
        self.push(
            Matrix::from_vec(1, 1, vec![scale * total]),
            Op::Pinball {
                x: x.0,
                targets,
                taus,
                scale,
            },
            ng,
        )
    }

    /// Elementwise sum of same-shaped variables.
    pub fn add(&mut self, xs: &[Var]) -> Var {
        let first = &self.entries[xs[0].0].value;
        let mut y = Matrix::zeros(first.rows, first.cols);
        let mut ng = false;
        for x in xs {
            let e = &self.entries[x.0];
            assert_eq!(e.value.data.len(), y.data.len(), "add shapes");
            ng |= e.needs_grad;
            y.data.iter_mut().zip(&e.value.data).for_each(|(a, b)| *a += b);
        }
        self.push(y, Op::Add { xs: xs.iter().map(|v| v.0).collect() }, ng)
    }

    /// Sum of all entries as a 1×1.
    pub fn sum(&mut self, x: Var) -> Var {
        let e = &self.entries[x.0];
        let total = e.value.data.iter().sum();
        let ng = e.needs_grad;
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::Sum { x: x.0 }, ng)
    }

    /// Full forward pass of network `net` on the rows of `x`: affine and
    /// activation per hidden layer, with inverted dropout on hidden units if
    /// `dropout` is given, then a plain affine output layer.
    pub fn mlp<R: Rng + ?Sized>(
        &mut self,
        net: usize,
        x: Var,
        mut dropout: Option<(Dropout, &mut R)>,
    ) -> Var {
        let n_layers = self.nets[net].layers.len();
        let mut h = x;
        for layer in 0..n_layers {
            h = self.dense(net, layer, h);
            if layer + 1 < n_layers {
                h = self.elu(h);
                if let Some((drop, rng)) = dropout.as_mut() {
                    if drop.rate > 0.0 {
                        let len = self.entries[h.0].value.data.len();
                        let mask = drop.mask(len, *rng);
                        h = self.mask(h, mask);
                    }
                }
            }
        }
        h
    }

    /// Gradients of the 1×1 variable `loss` with respect to the parameters of
    /// every network on the tape, in the order the tape was created with.
    pub fn backward(&self, loss: Var) -> Vec<NetGrads> {
        assert_eq!(self.entries[loss.0].value.data.len(), 1, "loss must be a scalar");
        let mut grads: Vec<NetGrads> = self.nets.iter().map(|n| NetGrads::zeros_like(n)).collect();
        let mut adj: Vec<Option<Matrix>> = (0..self.entries.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        fn acc<'a>(adj: &'a mut [Option<Matrix>], entries: &[Entry], i: usize) -> &'a mut Matrix {
            adj[i].get_or_insert_with(|| {
                let v = &entries[i].value;
                Matrix::zeros(v.rows, v.cols)
            })
        }

        for i in (0..=loss.0).rev() {
            let entry = &self.entries[i];
            if !entry.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &entry.op {
                Op::Input => {}
                Op::Dense { x, net, layer } => {
                    let xv = &self.entries[*x].value;
                    let lg = &mut grads[*net].layers[*layer];
                    gemm_atb(1.0, &g, xv, 1.0, &mut lg.weights);
                    for r in 0..g.rows {
                        lg.bias.iter_mut().zip(g.row(r)).for_each(|(b, v)| *b += v);
                    }
                    if self.entries[*x].needs_grad {
                        let w = &self.nets[*net].layers[*layer].weights;
                        let dx = acc(&mut adj, &self.entries, *x);
                        gemm_ab(1.0, &g, w, 1.0, dx);
                    }
                }
                Op::Elu { x } => {
                    let xv = &self.entries[*x].value.data;
                    let dx = acc(&mut adj, &self.entries, *x);
                    for ((d, gv), xv) in dx.data.iter_mut().zip(&g.data).zip(xv) {
                        *d += gv * elu_grad(*xv);
                    }
                }
                Op::Mask { x, mask } => {
                    let dx = acc(&mut adj, &self.entries, *x);
                    for ((d, gv), m) in dx.data.iter_mut().zip(&g.data).zip(mask) {
                        *d += gv * m;
                    }
                }
                Op::Softplus { x, col } => {
                    let xv = &self.entries[*x].value;
                    let dx = acc(&mut adj, &self.entries, *x);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            let k = r * g.cols + c;
                            let d = if c == *col { sigmoid(xv.data[k]) } else { 1.0 };
                            dx.data[k] += g.data[k] * d;
                        }
                    }
                }
                Op::Assemble { pieces } => {
                    for p in pieces {
                        if !self.entries[p.src.0].needs_grad {
                            continue;
                        }
                        let dx = acc(&mut adj, &self.entries, p.src.0);
                        let width = dx.cols;
                        let src = &g.row(p.dst_row)[p.dst_col..p.dst_col + width];
                        dx.row_mut(p.src_row).iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Pinball {
                    x,
                    targets,
                    taus,
                    scale,
                } => {
                    let upstream = g.data[0] * scale;
                    let xv = &self.entries[*x].value;
                    let dx = acc(&mut adj, &self.entries, *x);
                    for r in 0..xv.rows {
                        for c in 0..xv.cols {
                            dx.data[r * xv.cols + c] +=
                                upstream * pinball_grad(taus[r], xv.get(r, c), targets.get(r, c));
                        }
                    }
                }
                Op::Sum { x } => {
                    let dx = acc(&mut adj, &self.entries, *x);
                    dx.data.iter_mut().for_each(|d| *d += g.data[0]);
                }
                Op::Add { xs } => {
                    for x in xs {
                        if self.entries[*x].needs_grad {
                            let dx = acc(&mut adj, &self.entries, *x);
                            dx.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
        }
        grads
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    pub(crate) fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    }

    /// Relative error with the denominator floored at 1e-4, so gradients
    /// that are zero up to rounding do not dominate.
    pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    /// Largest relative error between tape gradients and central finite
    /// differences (step `h`) over every parameter of every network.
    pub(crate) fn max_fd_error(
        nets: &[DenseNet],
        h: f64,
        build: &dyn Fn(&mut Tape) -> Var,
    ) -> f64 {
        let refs: Vec<&DenseNet> = nets.iter().collect();
        let mut tape = Tape::new(refs);
        let loss = build(&mut tape);
        let grads = tape.backward(loss);
        let eval = |nets: &[DenseNet]| {
            let mut tape = Tape::new(nets.iter().collect());
            let loss = build(&mut tape);
            tape.value(loss).data[0]
        };
        let mut worst = 0.0f64;
        for (k, g) in grads.iter().enumerate() {
            let analytic = g.flat();
            let base = nets[k].flat_params();
            for (i, a) in analytic.iter().enumerate() {
                let mut plus = nets.to_vec();
                let mut p = base.clone();
                p[i] += h;
                plus[k].set_flat_params(&p);
                let mut minus = nets.to_vec();
                p[i] = base[i] - h;
                minus[k].set_flat_params(&p);
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(*a, fd));
            }
        }
        worst
    }

    fn smooth_readout(tape: &mut Tape, y: Var, targets: Matrix) -> Var {
        let rows = targets.rows;
        let sp = tape.softplus_col(y, 0);
        let s = tape.sum(sp);
        let p = tape.pinball(y, targets, vec![0.3; rows], 0.5);
        tape.add(&[s, p])
    }

    #[test]
    fn last_bias_gradient_of_output_sum_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 4], &mut rng);
        let mut tape = Tape::new(vec![&net]);
        let x = tape.input(random_matrix(1, 3, &mut rng));
        let y = tape.mlp::<NoRng>(0, x, None);
        let loss = tape.sum(y);
        let grads = tape.backward(loss);
        assert_eq!(grads[0].layers[1].bias, vec![1.0; 4]);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[4, 6, 6, 3], &mut rng);
        let xs = random_matrix(5, 4, &mut rng);
        let mut tape = Tape::new(vec![&net]);
        let x = tape.input(xs.clone());
        let y = tape.mlp::<NoRng>(0, x, None);
        for r in 0..5 {
            let plain = net.forward(xs.row(r), None).unwrap();
            for (a, b) in plain.iter().zip(tape.value(y).row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let depth = 1 + trial % 3;
            let mut dims = vec![rng.random_range(1..=8)];
            for _ in 0..depth {
                dims.push(rng.random_range(1..=8));
            }
            let net = DenseNet::new(&dims, &mut rng);
            let xs = random_matrix(3, dims[0], &mut rng);
            let out = *dims.last().unwrap();
            let targets = random_matrix(3, out, &mut rng);
            let err = max_fd_error(&[net], 1e-6, &|tape| {
                let x = tape.input(xs.clone());
                let y = tape.mlp::<NoRng>(0, x, None);
                smooth_readout(tape, y, targets.clone())
            });
            assert!(err < 1e-5, "dims {dims:?}: {err}");
        }
    }

    #[test]
    fn gradients_through_shared_weights_and_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[6, 7, 3], &mut rng);
        let xs = random_matrix(2, 3, &mut rng);
        let targets = random_matrix(1, 3, &mut rng);
        let mask: Vec<f64> = (0..7).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.9 }).collect();
        let err = max_fd_error(&[net], 1e-6, &|tape| {
            // The same network embeds two rows and then combines them.
            let x = tape.input(xs.clone());
            let leaf = tape.softplus_col(x, 1);
            let pieces = vec![
                Piece { src: leaf, src_row: 0, dst_row: 0, dst_col: 0 },
                Piece { src: leaf, src_row: 1, dst_row: 0, dst_col: 3 },
            ];
            let joined = tape.assemble(1, 6, pieces);
            let h1 = tape.dense(0, 0, joined);
            let h1 = tape.elu(h1);
            let h1 = tape.mask(h1, mask.clone());
            let mid = tape.dense(0, 1, h1);
            let pieces = vec![
                Piece { src: mid, src_row: 0, dst_row: 0, dst_col: 0 },
                Piece { src: leaf, src_row: 0, dst_row: 0, dst_col: 3 },
            ];
            let again = tape.assemble(1, 6, pieces);
            let y = tape.mlp::<NoRng>(0, again, None);
            smooth_readout(tape, y, targets.clone())
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn gradients_through_deep_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::new(&[4, 5, 4], &mut rng);
        let xs = random_matrix(2, 4, &mut rng);
        let targets = random_matrix(2, 4, &mut rng);
        let err = max_fd_error(&[net], 1e-6, &|tape| {
            let mut h = tape.input(xs.clone());
            for _ in 0..10 {
                h = tape.mlp::<NoRng>(0, h, None);
            }
            smooth_readout(tape, h, targets.clone())
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::new(&[3, 4, 2], &mut rng);
        let a = random_matrix(2, 3, &mut rng);
        let b = random_matrix(2, 3, &mut rng);
        let grads_of = |inputs: &[&Matrix]| {
            let mut tape = Tape::new(vec![&net]);
            let losses: Vec<Var> = inputs
                .iter()
                .map(|m| {
                    let x = tape.input((*m).clone());
                    let y = tape.mlp::<NoRng>(0, x, None);
                    tape.sum(y)
                })
                .collect();
            let loss = tape.add(&losses);
            tape.backward(loss).remove(0).flat()
        };
        let both = grads_of(&[&a, &b]);
        let ga = grads_of(&[&a]);
        let gb = grads_of(&[&b]);
        for ((x, y), z) in both.iter().zip(&ga).zip(&gb) {
            assert!((x - (y + z)).abs() < 1e-12);
        }
        // Replay is deterministic.
        assert_eq!(grads_of(&[&a, &b]), both);
    }
}
