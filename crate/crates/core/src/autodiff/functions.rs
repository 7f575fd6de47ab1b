//! Composite differentiable functions built from graph primitives.

use super::{AutodiffError, Graph, Var};

/// Floor applied to probabilities before they enter a logarithm.
pub const PROB_FLOOR: f64 = 1e-10;

/// `KL(p ‖ q) = Σ p ln(p / q)` for two categorical distributions.
///
/// `q` is floored at [`PROB_FLOOR`]; terms with `p = 0` contribute nothing.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64, AutodiffError> {
    if p.len() != q.len() {
        return Err(AutodiffError::Shape {
            op: "kl_categorical",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    let kl = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum::<f64>();
    // Rounding can leave a tiny negative residue for p ≈ q.
    Ok(kl.max(0.0))
}

/// Differentiable row-wise KL between two `[rows × n]` probability tensors,
/// returned as a `[rows × 1]` column.
pub fn kl_categorical_var(g: &mut Graph, p: Var, q: Var) -> Result<Var, AutodiffError> {
    let p_safe = g.clamp(p, PROB_FLOOR, 1.0);
    let q_safe = g.clamp(q, PROB_FLOOR, 1.0);
    let lp = g.log(p_safe);
    let lq = g.log(q_safe);
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    g.sum_axis(terms, 1)
}

/// Graph handles for one gated recurrent unit.
///
/// Input weights are `[d_in × d_h]`, hidden weights `[d_h × d_h]`, biases
/// `[1 × d_h]`; gates follow the reset (`r`), update (`z`), candidate (`n`)
/// convention.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_ir: Var,
    pub w_iz: Var,
    pub w_in: Var,
    pub w_hr: Var,
    pub w_hz: Var,
    pub w_hn: Var,
    pub b_ir: Var,
    pub b_iz: Var,
    pub b_in: Var,
    pub b_hr: Var,
    pub b_hz: Var,
    pub b_hn: Var,
}

/// One GRU step on a batch of rows: `x` is `[B × d_in]`, `h` is `[B × d_h]`.
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &GruParams) -> Result<Var, AutodiffError> {
    let affine = |g: &mut Graph, input: Var, w: Var, b: Var| -> Result<Var, AutodiffError> {
        let m = g.matmul(input, w)?;
        g.add(m, b)
    };
    let xr = affine(g, x, p.w_ir, p.b_ir)?;
    let hr = affine(g, h, p.w_hr, p.b_hr)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);

    let xz = affine(g, x, p.w_iz, p.b_iz)?;
    let hz = affine(g, h, p.w_hz, p.b_hz)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);

    let xn = affine(g, x, p.w_in, p.b_in)?;
    let hn = affine(g, h, p.w_hn, p.b_hn)?;
    let gated = g.mul(r, hn)?;
    let n = g.add(xn, gated)?;
    let n = g.tanh(n);

    let neg_z = g.scale(z, -1.0);
    let one_minus_z = g.add_scalar(neg_z, 1.0);
    let a = g.mul(one_minus_z, n)?;
    let b = g.mul(z, h)?;
    g.add(a, b)
}
