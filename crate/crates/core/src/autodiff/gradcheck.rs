use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so gradients that are zero
/// analytically are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Worst disagreement found for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub input: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub tolerance: f64,
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.max_rel_err < self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn evaluate<F>(inputs: &[(String, Tensor)], build: &F) -> Result<(Graph, NodeId)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(name, t)| g.param(name, t)).collect();
    let loss = build(&mut g, &ids)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Autodiff("grad_check: builder must return a scalar node".into()));
    }
    Ok((g, loss))
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with step `h = 1e-6·max(1, |x|)`, input by input.
pub fn grad_check<F>(op: &str, inputs: &[(&str, Tensor)], tolerance: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut owned: Vec<(String, Tensor)> = inputs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let (g, loss) = evaluate(&owned, &build)?;
    let grads = g.backward(loss)?;

    let mut reports = Vec::new();
    for k in 0..owned.len() {
        let name = owned[k].0.clone();
        let analytic = grads[&name].clone();
        let mut worst = InputReport {
            input: name,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..owned[k].1.numel() {
            let x = owned[k].1.data()[i];
            let h = 1e-6 * x.abs().max(1.0);
            owned[k].1.data_mut()[i] = x + h;
            let (gp, lp) = evaluate(&owned, &build)?;
            owned[k].1.data_mut()[i] = x - h;
            let (gm, lm) = evaluate(&owned, &build)?;
            owned[k].1.data_mut()[i] = x;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_err || i == 0 {
                worst = InputReport {
                    input: worst.input,
                    max_rel_err: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        reports.push(worst);
    }
    Ok(GradReport {
        op: op.to_string(),
        tolerance,
        inputs: reports,
    })
}
