use crate::autodiff::{Graph, Tensor, Var};

use super::NetError;

/// Attention weight matrices recorded during a forward pass, one per
/// segment per block, in evaluation order.
#[derive(Debug, Default, Clone)]
pub struct AttnTrace {
    pub weights: Vec<Tensor>,
}

/// A run of consecutive rows, `(start, len)`.
pub(crate) type Span = (usize, usize);

pub(crate) struct AttnOptions {
    pub scale: f64,
    /// Apply `exp` to the scaled scores before the softmax.
    pub double_exp: bool,
}

fn weights(g: &mut Graph, q: Var, k: Var, opts: &AttnOptions) -> Result<Var, NetError> {
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let mut s = g.scale(s, opts.scale);
    if opts.double_exp {
        s = g.exp(s);
    }
    Ok(g.softmax(s, 1)?)
}

/// Scaled dot-product attention applied independently per segment.
///
/// Query segment `i` attends over key/value segment `i`. A single key makes
/// the weight exactly 1 and its gradient exactly 0, so runs of 1×1 segments
/// are passed straight through as value rows unless a trace is requested.
pub(crate) fn attend(
    g: &mut Graph,
    q: Var,
    q_spans: &[Span],
    k: Var,
    v: Var,
    kv_spans: &[Span],
    opts: &AttnOptions,
    mut trace: Option<&mut AttnTrace>,
) -> Result<Var, NetError> {
    if q_spans.len() != kv_spans.len() {
        return Err(NetError::Batch("query and key segment counts"));
    }
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < q_spans.len() {
        let (qs, ql) = q_spans[i];
        let (ks, kl) = kv_spans[i];
        if trace.is_none() && ql == 1 && kl == 1 {
            let mut j = i + 1;
            while j < q_spans.len()
                && q_spans[j] == (qs + (j - i), 1)
                && kv_spans[j] == (ks + (j - i), 1)
            {
                j += 1;
            }
            pieces.push(g.slice_rows(v, ks, j - i)?);
            i = j;
            continue;
        }
        let qi = g.slice_rows(q, qs, ql)?;
        let ki = g.slice_rows(k, ks, kl)?;
        let vi = g.slice_rows(v, ks, kl)?;
        let a = weights(g, qi, ki, opts)?;
        if let Some(t) = trace.as_deref_mut() {
            t.weights.push(g.value(a).clone());
        }
        pieces.push(g.matmul(a, vi)?);
        i += 1;
    }
    match pieces.len() {
        1 => Ok(pieces[0]),
        _ => Ok(g.concat(&pieces, 0)?),
    }
}

/// The decoder wiring taken literally: keys and values from the decoder
/// state, queries from the message features. Each query row sees one key,
/// so every weight is 1 and each segment returns its value row; the rows are
/// averaged back to a single decoder row.
pub(crate) fn attend_literal(
    g: &mut Graph,
    q: Var,
    q_spans: &[Span],
    k: Var,
    v: Var,
    opts: &AttnOptions,
    mut trace: Option<&mut AttnTrace>,
) -> Result<Var, NetError> {
    let mut pieces = Vec::with_capacity(q_spans.len());
    for (b, &(qs, ql)) in q_spans.iter().enumerate() {
        let qi = g.slice_rows(q, qs, ql)?;
        let kb = g.slice_rows(k, b, 1)?;
        let vb = g.slice_rows(v, b, 1)?;
        let a = weights(g, qi, kb, opts)?;
        if let Some(t) = trace.as_deref_mut() {
            t.weights.push(g.value(a).clone());
        }
        let out = g.matmul(a, vb)?;
        pieces.push(g.mean_axis(out, 0)?);
    }
    match pieces.len() {
        1 => Ok(pieces[0]),
        _ => Ok(g.concat(&pieces, 0)?),
    }
}
