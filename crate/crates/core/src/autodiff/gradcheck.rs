use super::{Graph, NodeId};
use crate::tensor::{Tensor, TensorError};

/// Worst disagreement between backward and central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, component)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    /// Backward and finite-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub components: usize,
    /// `(analytic, numeric)` for every component, per parameter.
    pub values: Vec<Vec<(f64, f64)>>,
}

/// Relative error with the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

impl GradCheckReport {
    /// Worst relative error among components whose larger magnitude is at
    /// least `floor`.
    pub fn max_rel_error_above(&self, floor: f64) -> f64 {
        self.values
            .iter()
            .flatten()
            .filter(|(a, n)| a.abs().max(n.abs()) >= floor)
            .map(|&(a, n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }

    /// Worst absolute difference between analytic and numeric values.
    pub fn max_abs_error(&self) -> f64 {
        self.values.iter().flatten().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max)
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Vec<NodeId>, NodeId), TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(format!("p{i}"), p.clone()))
        .collect();
    let loss = f(&mut g, &ids)?;
    Ok((g, ids, loss))
}

/// Compares the backward gradient of `f` against `(f(θ+ε) − f(θ−ε)) / 2ε`
/// for every parameter component. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. `f` must be deterministic.
pub fn gradient_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (g, ids, loss) = evaluate(&f, params)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zero(id)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        components: 0,
        values: Vec::with_capacity(params.len()),
    };
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let mut pairs = Vec::with_capacity(param.len());
        for k in 0..param.len() {
            let original = param.data()[k];
            probe[pi].data_mut()[k] = original + epsilon;
            let (g, _, l) = evaluate(&f, &probe)?;
            let up = g.value(l).item();
            probe[pi].data_mut()[k] = original - epsilon;
            let (g, _, l) = evaluate(&f, &probe)?;
            let down = g.value(l).item();
            probe[pi].data_mut()[k] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let exact = analytic[pi].data()[k];
            let rel = relative_error(exact, numeric);
            report.components += 1;
            pairs.push((exact, numeric));
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((pi, k));
                report.worst_values = (exact, numeric);
            }
        }
        report.values.push(pairs);
    }
    Ok(report)
}
