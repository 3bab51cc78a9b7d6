//! 64-bit re-evaluation of a recorded graph, used by the gradient checker.
//!
//! The replay holds the discrete structure of the forward pass fixed — ReLU
//! active sets, max winners, neighbor tables, gather indices and dropout masks
//! are taken from the recorded pass — and recomputes everything smooth
//! (linear algebra, sigmoid, softmax, cross-entropy) in f64. Finite
//! differences of this function measure exactly the piecewise branch that the
//! analytic backward differentiates, so kinks cannot poison the comparison;
//! the frozen index construction itself is covered by forward value oracles.
//!
//! Dense products are deliberately written as plain loops rather than through
//! the f32 GEMM kernel, keeping the replay an independent evaluation path.

use super::graph::{Graph, Op, Var};

impl Graph {
    /// Value of scalar node `target`, recomputed in f64 with one element of
    /// one leaf perturbed by `delta` (pass `None` for the base value).
    pub fn replay_f64(&self, target: Var, perturb: Option<(Var, usize, f64)>) -> f64 {
        // Mark ancestors of target so we only evaluate what contributes.
        let mut needed = vec![false; target.0 + 1];
        needed[target.0] = true;
        for i in (0..=target.0).rev() {
            if !needed[i] {
                continue;
            }
            for v in self.op_inputs_of(i) {
                needed[v.0] = true;
            }
        }

        let mut vals: Vec<Option<Vec<f64>>> = vec![None; target.0 + 1];
        for i in 0..=target.0 {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let get = |v: Var, vals: &Vec<Option<Vec<f64>>>| -> Vec<f64> {
                vals[v.0].clone().expect("input evaluated before use")
            };
            let out: Vec<f64> = match &node.op {
                Op::Leaf { .. } => {
                    let mut v: Vec<f64> = node.value.data().iter().map(|&x| x as f64).collect();
                    if let Some((leaf, elem, delta)) = perturb {
                        if leaf.0 == i {
                            v[elem] += delta;
                        }
                    }
                    v
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv, bv) = (get(*x, &vals), get(*w, &vals), get(*b, &vals));
                    let din = self.nodes[x.0].value.shape()[1];
                    let dout = bv.len();
                    let n = xv.len() / din;
                    let mut y = vec![0.0; n * dout];
                    for r in 0..n {
                        for p in 0..din {
                            let a = xv[r * din + p];
                            for c in 0..dout {
                                y[r * dout + c] += a * wv[p * dout + c];
                            }
                        }
                        for c in 0..dout {
                            y[r * dout + c] += bv[c];
                        }
                    }
                    y
                }
                Op::Matmul { a, b } => {
                    let (av, bv) = (get(*a, &vals), get(*b, &vals));
                    let k = self.nodes[a.0].value.shape()[1];
                    let m = self.nodes[b.0].value.shape()[1];
                    let n = av.len() / k;
                    let mut y = vec![0.0; n * m];
                    for r in 0..n {
                        for p in 0..k {
                            let x = av[r * k + p];
                            for c in 0..m {
                                y[r * m + c] += x * bv[p * m + c];
                            }
                        }
                    }
                    y
                }
                Op::MatmulNT { a, b } => {
                    let (av, bv) = (get(*a, &vals), get(*b, &vals));
                    let k = self.nodes[a.0].value.shape()[1];
                    let m = self.nodes[b.0].value.shape()[0];
                    let n = av.len() / k;
                    let mut y = vec![0.0; n * m];
                    for r in 0..n {
                        for c in 0..m {
                            let mut acc = 0.0;
                            for p in 0..k {
                                acc += av[r * k + p] * bv[c * k + p];
                            }
                            y[r * m + c] = acc;
                        }
                    }
                    y
                }
                Op::Relu { x } => {
                    // frozen active set from the recorded pass
                    let xv = get(*x, &vals);
                    node.value
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&y0, x)| if y0 > 0.0 { x } else { 0.0 })
                        .collect()
                }
                Op::Sigmoid { x } => get(*x, &vals)
                    .into_iter()
                    .map(|v| 1.0 / (1.0 + (-v).exp()))
                    .collect(),
                Op::Softmax { x, axis } => {
                    let xv = get(*x, &vals);
                    let shape = self.nodes[x.0].value.shape();
                    let (outer, len, inner) = split(shape, *axis);
                    let mut y = vec![0.0; xv.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut m = f64::NEG_INFINITY;
                            for l in 0..len {
                                m = m.max(xv[base + l * inner]);
                            }
                            let mut sum = 0.0;
                            for l in 0..len {
                                let e = (xv[base + l * inner] - m).exp();
                                y[base + l * inner] = e;
                                sum += e;
                            }
                            for l in 0..len {
                                y[base + l * inner] /= sum;
                            }
                        }
                    }
                    y
                }
                Op::Concat { xs, axis } => {
                    let shape = node.value.shape();
                    let (outer, _, inner) = split(shape, *axis);
                    let total_block = shape[*axis] * inner;
                    let mut y = vec![0.0; node.value.len()];
                    let mut offset = 0;
                    for &v in xs {
                        let part = get(v, &vals);
                        let block = self.nodes[v.0].value.shape()[*axis] * inner;
                        for o in 0..outer {
                            let dst = o * total_block + offset;
                            y[dst..dst + block].copy_from_slice(&part[o * block..(o + 1) * block]);
                        }
                        offset += block;
                    }
                    y
                }
                Op::Mul { a, b } => get(*a, &vals)
                    .iter()
                    .zip(get(*b, &vals))
                    .map(|(x, y)| x * y)
                    .collect(),
                Op::MulRowScalar { x, s } => {
                    let xv = get(*x, &vals);
                    let sv = get(*s, &vals);
                    let c = self.nodes[x.0].value.shape()[1];
                    xv.iter()
                        .enumerate()
                        .map(|(p, v)| v * sv[p / c])
                        .collect()
                }
                Op::Add { a, b } => get(*a, &vals)
                    .iter()
                    .zip(get(*b, &vals))
                    .map(|(x, y)| x + y)
                    .collect(),
                Op::Scale { x, c } => get(*x, &vals).into_iter().map(|v| v * *c as f64).collect(),
                Op::MaxReduce { x, axis, arg } => {
                    // frozen winners
                    let xv = get(*x, &vals);
                    let shape = self.nodes[x.0].value.shape();
                    let (outer, len, inner) = split(shape, *axis);
                    let mut y = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = arg[o * inner + i] as usize;
                            y[o * inner + i] = xv[o * len * inner + l * inner + i];
                        }
                    }
                    y
                }
                Op::GatherRows { x, idx } => {
                    let xv = get(*x, &vals);
                    let n = self.nodes[x.0].value.shape()[0];
                    let width = xv.len() / n;
                    let mut y = Vec::with_capacity(idx.len() * width);
                    for &r in idx.iter() {
                        y.extend_from_slice(&xv[r as usize * width..(r as usize + 1) * width]);
                    }
                    y
                }
                Op::Dropout { x, keep, scale } => get(*x, &vals)
                    .iter()
                    .zip(keep.iter())
                    .map(|(&v, &k)| if k { v * *scale as f64 } else { 0.0 })
                    .collect(),
                Op::SumAxis { x, axis } => {
                    let xv = get(*x, &vals);
                    let shape = self.nodes[x.0].value.shape();
                    let (outer, len, inner) = split(shape, *axis);
                    let mut y = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                y[o * inner + i] += xv[o * len * inner + l * inner + i];
                            }
                        }
                    }
                    y
                }
                Op::SumAll { x } => vec![get(*x, &vals).iter().sum()],
                Op::Reshape { x } => get(*x, &vals),
                Op::RepeatRows { x, n } => {
                    let xv = get(*x, &vals);
                    let mut y = Vec::with_capacity(n * xv.len());
                    for _ in 0..*n {
                        y.extend_from_slice(&xv);
                    }
                    y
                }
                Op::EdgeFeatures { f, idx, k } => {
                    let fv = get(*f, &vals);
                    let c = self.nodes[f.0].value.shape()[1];
                    let n = self.nodes[f.0].value.shape()[0];
                    let mut y = vec![0.0; n * k * 2 * c];
                    for i in 0..n {
                        for j in 0..*k {
                            let nb = idx[i * k + j] as usize;
                            let base = (i * k + j) * 2 * c;
                            for l in 0..c {
                                y[base + l] = fv[i * c + l];
                                y[base + c + l] = fv[nb * c + l] - fv[i * c + l];
                            }
                        }
                    }
                    y
                }
                Op::EdgeLinear { f, w, b, idx, k } => {
                    // evaluated in the naive form: T([f_i | f_j - f_i])
                    let fv = get(*f, &vals);
                    let wv = get(*w, &vals);
                    let bv = get(*b, &vals);
                    let c = self.nodes[f.0].value.shape()[1];
                    let n = self.nodes[f.0].value.shape()[0];
                    let cout = bv.len();
                    let mut y = vec![0.0; n * k * cout];
                    for i in 0..n {
                        for j in 0..*k {
                            let nb = idx[i * k + j] as usize;
                            let dst = (i * k + j) * cout;
                            for o in 0..cout {
                                let mut acc = bv[o];
                                for l in 0..c {
                                    acc += fv[i * c + l] * wv[l * cout + o];
                                    acc += (fv[nb * c + l] - fv[i * c + l])
                                        * wv[(c + l) * cout + o];
                                }
                                y[dst + o] = acc;
                            }
                        }
                    }
                    y
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = get(*logits, &vals);
                    let c = self.nodes[logits.0].value.shape()[1];
                    let n = targets.len();
                    let mut total = 0.0;
                    for (i, &cls) in targets.iter().enumerate() {
                        let row = &lv[i * c..(i + 1) * c];
                        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                        total += lse - row[cls as usize];
                    }
                    vec![total / n as f64]
                }
            };
            vals[i] = Some(out);
        }
        vals[target.0].as_ref().expect("target evaluated")[0]
    }

    fn op_inputs_of(&self, i: usize) -> Vec<Var> {
        self.op_inputs(&self.nodes[i].op)
    }
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};

    #[test]
    fn replay_matches_f32_forward_closely() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap());
        let w = g.param(&Tensor::matrix(3, 2, vec![0.5, -0.2, 0.8, 0.3, -0.6, 0.9]).unwrap());
        let b = g.param(&Tensor::vector(vec![0.1, -0.1]));
        let y = g.linear(x, w, b).unwrap();
        let r = g.relu(y);
        let s = g.softmax(r, 1).unwrap();
        let loss = g.cross_entropy(s, &[0, 1]).unwrap();
        let f32_val = g.value(loss).data()[0] as f64;
        let f64_val = g.replay_f64(loss, None);
        assert!((f32_val - f64_val).abs() < 1e-5, "{f32_val} vs {f64_val}");
    }

    #[test]
    fn replay_perturbation_shifts_leaf() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
        let loss = g.sum_all(x);
        let base = g.replay_f64(loss, None);
        let bumped = g.replay_f64(loss, Some((x, 1, 0.25)));
        assert!((bumped - base - 0.25).abs() < 1e-12);
    }
}
