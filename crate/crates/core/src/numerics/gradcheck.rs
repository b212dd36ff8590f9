//! Central finite-difference gradient checking.

use super::{Graph, NumericsError, Scalar, Tensor, ValueId};

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all coordinates, with denominator
    /// `max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    /// Gradient-barrier operations (hard assignments) found on the loss
    /// path. A non-empty list means the analytic gradient treats those
    /// sites as constants; mismatches there are expected, not bugs.
    pub barriers: Vec<&'static str>,
}

/// Compares the recorded backward pass of `build` against central finite
/// differences `(f(x+ε·eᵢ) − f(x−ε·eᵢ)) / 2ε` at every coordinate of `x`.
///
/// `build` receives a fresh graph and the id of the differentiated leaf and
/// must return the scalar loss node; it is re-invoked for every probe, so it
/// must be deterministic.
pub fn finite_diff_check<T: Scalar, E: From<NumericsError>>(
    build: impl Fn(&mut Graph<T>, ValueId) -> Result<ValueId, E>,
    x: &Tensor<T>,
    eps: T,
) -> Result<GradCheckReport, E> {
    finite_diff_check_impl(build, x, eps, None)
}

/// As [`finite_diff_check`], with an optional tamper offset added to the
/// first analytic gradient coordinate. The gradcheck command uses this as a
/// fault-injection hook to prove the harness detects a wrong backward rule.
pub(crate) fn finite_diff_check_impl<T: Scalar, E: From<NumericsError>>(
    build: impl Fn(&mut Graph<T>, ValueId) -> Result<ValueId, E>,
    x: &Tensor<T>,
    eps: T,
    tamper: Option<f64>,
) -> Result<GradCheckReport, E> {
    let mut g = Graph::new();
    let xid = g.leaf(x.clone());
    let loss = build(&mut g, xid)?;
    let grads = g.backward(loss)?;
    let mut analytic: Vec<f64> = grads
        .get(xid)
        .expect("leaf requires grad")
        .data()
        .iter()
        .map(|v| v.into_f64())
        .collect();
    if let Some(delta) = tamper {
        analytic[0] += delta;
    }
    let barriers = g.barrier_ops_on_path(loss);

    let eval = |probe: &Tensor<T>| -> Result<f64, E> {
        let mut g = Graph::new();
        let xid = g.leaf(probe.clone());
        let loss = build(&mut g, xid)?;
        Ok(g.value(loss).item().into_f64())
    };

    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (fp - fm) / (2.0 * eps.into_f64());
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        barriers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_to_roundoff() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = finite_diff_check(
            |g, xid| -> Result<_, NumericsError> {
                let sq = g.mul(xid, xid)?;
                Ok(g.sum_all(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert!(report.barriers.is_empty());
    }

    #[test]
    fn softmax_then_dot_passes() {
        let x = Tensor::new(vec![1, 4], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let w = Tensor::new(vec![1, 4], vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        let report = finite_diff_check(
            |g, xid| -> Result<_, NumericsError> {
                let s = g.softmax(xid, 1)?;
                let wid = g.constant(w.clone());
                let p = g.mul(s, wid)?;
                Ok(g.sum_all(p))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn hard_argmax_site_is_reported() {
        let x = Tensor::new(vec![1, 3], vec![0.2, 0.9, 0.1]).unwrap();
        let report = finite_diff_check(
            |g, xid| -> Result<_, NumericsError> {
                let hot = g.hard_one_hot(xid)?;
                let picked = g.mul(hot, xid)?;
                Ok(g.sum_all(picked))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.barriers, vec!["hard_one_hot"]);
    }

    #[test]
    fn tamper_hook_is_detected() {
        let x = Tensor::new(vec![2], vec![0.4, -0.2]).unwrap();
        let report = finite_diff_check_impl(
            |g, xid| -> Result<_, NumericsError> {
                let sq = g.mul(xid, xid)?;
                Ok(g.sum_all(sq))
            },
            &x,
            1e-5,
            Some(0.5),
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
        assert_eq!(report.worst_index, 0);
    }
}
