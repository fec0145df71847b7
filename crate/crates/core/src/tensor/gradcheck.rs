//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, NodeId, Tensor};
use crate::error::{PimrlError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Per input: `|a - n| / max(|a|, |n|)` in the Euclidean norm, 0 when
    /// both gradients vanish.
    pub rel_err: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::leaves_only();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    scalar(&g, out)
}

fn scalar(g: &Graph, id: NodeId) -> Result<f64> {
    match g.value(id).data() {
        [v] => Ok(*v),
        _ => Err(PimrlError::ShapeMismatch {
            op: "gradcheck",
            lhs: g.shape(id).to_vec(),
            rhs: vec![1],
        }),
    }
}

/// Compares the analytic gradient of the scalar `f(inputs)` with respect to
/// every input against central differences with step `eps`.
pub fn gradcheck<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    scalar(&g, out)?;
    g.backward(out)?;
    let mut rel_err = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, id) in ids.iter().enumerate() {
        let analytic = g.grad_tensor(*id);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + eps;
            let up = eval(&work, &f)?;
            work[i].data_mut()[j] = x - eps;
            let down = eval(&work, &f)?;
            work[i].data_mut()[j] = x;
            *n = (up - down) / (2.0 * eps);
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.data().iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = norm(&mut analytic.data().iter().copied()).max(norm(&mut numeric.iter().copied()));
        rel_err.push(if scale == 0.0 { diff } else { diff / scale });
    }
    Ok(GradCheck { rel_err })
}
