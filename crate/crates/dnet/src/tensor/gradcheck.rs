//! Central-difference gradient checking against the f64 replay.
//!
//! Call [`Graph::backward`] first, then hand the graph and the leaves you want
//! verified to [`check_gradients`]. Each element is perturbed by ±step, the
//! scalar target re-evaluated in 64-bit (see the replay module for the frozen
//! piecewise-branch semantics), and the analytic gradient compared with
//! relative error |a − n| / max(|a|, |n|, floor).

use rayon::prelude::*;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckSettings {
    /// Finite-difference half-step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            step: 1e-3,
            tol: 1e-3,
            floor: 1e-6,
        }
    }
}

/// Worst observed deviation across all checked elements.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(leaf name, element)` of the worst deviation.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, settings: &GradCheckSettings) -> bool {
        self.max_rel_err <= settings.tol
    }
}

/// Checks analytic gradients of `loss` w.r.t. the named leaves.
///
/// `backward(loss)` must already have run on this graph.
pub fn check_gradients(
    graph: &Graph,
    loss: Var,
    leaves: &[(&str, Var)],
    settings: GradCheckSettings,
) -> Result<GradCheckReport> {
    let mut tasks = Vec::new();
    for (name, var) in leaves {
        let analytic = graph.grad(*var).ok_or_else(|| {
            Error::State(format!("no gradient on leaf '{name}'; run backward first"))
        })?;
        for (elem, &a) in analytic.iter().enumerate() {
            tasks.push((name.to_string(), *var, elem, a as f64));
        }
    }
    let errs: Vec<(f64, usize)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, (_, var, elem, analytic))| {
            let up = graph.replay_f64(loss, Some((*var, *elem, settings.step)));
            let down = graph.replay_f64(loss, Some((*var, *elem, -settings.step)));
            let numeric = (up - down) / (2.0 * settings.step);
            let denom = analytic.abs().max(numeric.abs()).max(settings.floor);
            ((analytic - numeric).abs() / denom, i)
        })
        .collect();
    let mut report = GradCheckReport {
        checked: tasks.len(),
        max_rel_err: 0.0,
        worst: None,
    };
    for (err, i) in errs {
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((tasks[i].0.clone(), tasks[i].2));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn settings() -> GradCheckSettings {
        GradCheckSettings::default()
    }

    /// Reduces an arbitrary tensor to a scalar through fixed random weights so
    /// every output element influences the loss.
    fn weighted_loss(g: &mut Graph, y: Var, seed: u64) -> Var {
        let n = g.value(y).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.input(Tensor::rand_uniform(&[n], -1.0, 1.0, &mut rng));
        let flat = g.reshape(y, &[n]).unwrap();
        let prod = g.mul(flat, w).unwrap();
        g.sum_all(prod)
    }

    #[test]
    fn sigmoid_gradient_at_zero_matches_quarter() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.25).abs() < 1e-6);
        let rep = check_gradients(&g, loss, &[("x", x)], settings()).unwrap();
        assert!(rep.max_rel_err < 1e-4, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn every_op_passes_central_differences() {
        // One composite graph touching every differentiable op.
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 6;
            let c = 4;
            let k = 2;
            let mut g = Graph::with_seed(seed);
            let x = g.param(&Tensor::rand_uniform(&[n, c], -1.0, 1.0, &mut rng));
            let w = g.param(&Tensor::rand_uniform(&[c, c], -0.8, 0.8, &mut rng));
            let b = g.param(&Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng));
            let ew = g.param(&Tensor::rand_uniform(&[2 * c, 3], -0.8, 0.8, &mut rng));
            let eb = g.param(&Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng));

            let lin = g.linear(x, w, b).unwrap();
            let sig = g.sigmoid(lin);
            let soft = g.softmax(sig, 1).unwrap();
            let mm = g.matmul(soft, w).unwrap();
            let mnt = g.matmul_nt(mm, x).unwrap(); // n x n
            let idx: Vec<u32> = (0..n * k).map(|i| ((i * 3 + 1) % n) as u32).collect();
            let ef = g.edge_features(x, &idx, k).unwrap();
            let el = g.edge_linear(x, ew, eb, &idx, k).unwrap();
            let (mx, _) = g.max_reduce(el, 1).unwrap(); // n x 3
            let r = g.relu(mx);
            let srows = g.sum_axis(mnt, 1).unwrap(); // n
            let scaled = g.mul_row_scalar(r, srows).unwrap();
            let gathered = g.gather_rows(scaled, &[0, 2, 2, 5]).unwrap();
            let dropped = g.dropout(gathered, 0.3, true).unwrap();
            let efsum = g.sum_axis(ef, 2).unwrap(); // n x k
            let efflat = g.reshape(efsum, &[n * k]).unwrap();
            let l1 = weighted_loss(&mut g, dropped, 7);
            let l2 = weighted_loss(&mut g, efflat, 8);
            let both = g.concat(&[l1, l2], 0).unwrap();
            let loss = g.sum_all(both);

            g.backward(loss).unwrap();
            let rep = check_gradients(
                &g,
                loss,
                &[("x", x), ("w", w), ("b", b), ("ew", ew), ("eb", eb)],
                settings(),
            )
            .unwrap();
            assert!(
                rep.max_rel_err <= settings().tol,
                "seed {seed}: rel err {} at {:?}",
                rep.max_rel_err,
                rep.worst
            );
        }
    }

    #[test]
    fn cross_entropy_and_repeat_pass_central_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut g = Graph::new();
            let x = g.param(&Tensor::rand_uniform(&[1, 5], -1.0, 1.0, &mut rng));
            let rep = g.repeat_rows(x, 4).unwrap();
            let sc = g.scale(rep, 1.7);
            let sm = g.softmax(sc, 0).unwrap();
            let added = g.add(sm, sc).unwrap();
            let loss = g.cross_entropy(added, &[1, 0, 4, 2]).unwrap();
            g.backward(loss).unwrap();
            let report = check_gradients(&g, loss, &[("x", x)], settings()).unwrap();
            assert!(
                report.max_rel_err <= settings().tol,
                "seed {seed}: {report:?}"
            );
        }
    }
}
