#[cfg(test)]
use crate::autodiff::Tensor;
use crate::autodiff::{AutodiffError, Graph, ParameterStore, Real, Var};

/// Parameters of one GRU direction bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// Registers `{prefix}.{fwd,bwd}.{w_x,w_h,b}`.
pub fn init_bigru<T: Real>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    bound: f64,
) -> Result<(), AutodiffError> {
    for dir in ["fwd", "bwd"] {
        store.insert_uniform(
            format!("{prefix}.{dir}.w_x"),
            vec![input, 3 * hidden],
            bound,
        )?;
        store.insert_uniform(
            format!("{prefix}.{dir}.w_h"),
            vec![hidden, 3 * hidden],
            bound,
        )?;
        store.insert_uniform(format!("{prefix}.{dir}.b"), vec![3 * hidden], bound)?;
    }
    Ok(())
}

pub fn bind_bigru<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    prefix: &str,
) -> Result<[GruVars; 2], AutodiffError> {
    let mut bind = |dir: &str| -> Result<GruVars, AutodiffError> {
        Ok(GruVars {
            w_x: g.param(store, &format!("{prefix}.{dir}.w_x"))?,
            w_h: g.param(store, &format!("{prefix}.{dir}.w_h"))?,
            b: g.param(store, &format!("{prefix}.{dir}.b"))?,
        })
    };
    Ok([bind("fwd")?, bind("bwd")?])
}

/// Runs one direction over the rows of `x`, returning states in visiting order.
///
/// r, z = σ(x W_x[r,z] + h W_h[r,z] + b[r,z]);
/// n = tanh(x W_x[n] + b[n] + r ∘ h W_h[n]);
/// h' = n + z ∘ (h − n), with h₀ = 0.
fn run<T: Real>(
    g: &mut Graph<T>,
    p: GruVars,
    x: Var,
    order: &[usize],
    hidden: usize,
) -> Result<Vec<Var>, AutodiffError> {
    let xw = g.matmul(x, p.w_x)?;
    let xw = g.add_row(xw, p.b)?;
    let mut h: Option<Var> = None;
    let mut states = Vec::with_capacity(order.len());
    for &t in order {
        let xt = g.slice_rows(xw, t, 1)?;
        let x_rz = g.slice_cols(xt, 0, 2 * hidden)?;
        let x_n = g.slice_cols(xt, 2 * hidden, hidden)?;
        let next = match h {
            None => {
                let rz = g.sigmoid(x_rz)?;
                let z = g.slice_cols(rz, hidden, hidden)?;
                let n = g.tanh(x_n)?;
                // h' = n − z ∘ n when h = 0
                let zn = g.mul(z, n)?;
                g.sub(n, zn)?
            }
            Some(hp) => {
                let hu = g.matmul(hp, p.w_h)?;
                let h_rz = g.slice_cols(hu, 0, 2 * hidden)?;
                let h_n = g.slice_cols(hu, 2 * hidden, hidden)?;
                let pre = g.add(x_rz, h_rz)?;
                let rz = g.sigmoid(pre)?;
                let r = g.slice_cols(rz, 0, hidden)?;
                let z = g.slice_cols(rz, hidden, hidden)?;
                let gated = g.mul(r, h_n)?;
                let pre_n = g.add(x_n, gated)?;
                let n = g.tanh(pre_n)?;
                let diff = g.sub(hp, n)?;
                let zd = g.mul(z, diff)?;
                g.add(n, zd)?
            }
        };
        states.push(next);
        h = Some(next);
    }
    Ok(states)
}

/// Bidirectional pass over `x` (n × input). Row t of the result is the
/// forward state at t followed by the backward state at t (n × 2·hidden).
pub fn bigru<T: Real>(
    g: &mut Graph<T>,
    vars: &[GruVars; 2],
    x: Var,
    hidden: usize,
) -> Result<Var, AutodiffError> {
    let n = g.value(x).rows();
    let forward: Vec<usize> = (0..n).collect();
    let backward: Vec<usize> = (0..n).rev().collect();
    let fwd = run(g, vars[0], x, &forward, hidden)?;
    let mut bwd = run(g, vars[1], x, &backward, hidden)?;
    bwd.reverse();
    let f = g.concat_rows(&fwd)?;
    let b = g.concat_rows(&bwd)?;
    g.concat_cols(&[f, b])
}

/// Plain-number reference for one GRU direction (used by tests).
#[cfg(test)]
pub(crate) fn reference_gru(
    w_x: &Tensor<f64>,
    w_h: &Tensor<f64>,
    b: &Tensor<f64>,
    xs: &[Vec<f64>],
    hidden: usize,
) -> Vec<Vec<f64>> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; hidden];
    let mut out = Vec::new();
    for x in xs {
        let mut xw = b.values().to_vec();
        let mut hu = vec![0.0; 3 * hidden];
        for j in 0..3 * hidden {
            for (i, xi) in x.iter().enumerate() {
                xw[j] += xi * w_x.get(i, j);
            }
            for (i, hi) in h.iter().enumerate() {
                hu[j] += hi * w_h.get(i, j);
            }
        }
        let mut next = vec![0.0; hidden];
        for k in 0..hidden {
            let r = sig(xw[k] + hu[k]);
            let z = sig(xw[hidden + k] + hu[hidden + k]);
            let n = (xw[2 * hidden + k] + r * hu[2 * hidden + k]).tanh();
            next[k] = (1.0 - z) * n + z * h[k];
        }
        h = next;
        out.push(h.clone());
    }
    out
}
