//! Central finite-difference gradient checking.
//!
//! The checker evaluates the function only through its forward values, so it
//! stays independent of every backward rule it is used to verify.

use super::{AutodiffError, Graph, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst per-input relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`.
    pub max_rel_err: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares `backward` against central differences with step `h` for every
/// element of every input. `f` must build a single-element loss from the
/// input leaves it is handed.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut num = vec![0.0; inputs[i].len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), num)?);
    }

    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_err,
        analytic,
        numeric,
    })
}

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-6)
}
