//! Central finite-difference checks of analytic gradients.

use super::{AutodiffError, Graph, ParameterStore, Tensor, Var};

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// One-sided differences further apart than this (relative) mark a kink.
pub const KINK_GAP: f64 = 1e-2;

/// Worst disagreement found, with its location.
///
/// An element whose forward and backward differences disagree by more than
/// [`KINK_GAP`], and whose analytic value sits nearer one of them than the
/// central difference, straddles a non-differentiable point such as a ReLU
/// hinge. Such elements are counted in `kinks` and left out of
/// `max_rel_error`; a smooth function with a wrong gradient cannot produce
/// that pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub kinks: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            kinks: 0,
        }
    }

    fn record(
        &mut self,
        name: &str,
        index: usize,
        analytic: f64,
        base: f64,
        up: f64,
        down: f64,
        eps: f64,
    ) {
        let numeric = (up - down) / (2.0 * eps);
        let (fwd, bwd) = ((up - base) / eps, (base - down) / eps);
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if relative_error(fwd, bwd) > KINK_GAP
            && relative_error(analytic, fwd).min(relative_error(analytic, bwd)) < err
        {
            self.kinks += 1;
            return;
        }
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((name.to_string(), index, analytic, numeric));
        }
    }
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64, AutodiffError> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(AutodiffError::InvalidArgument(format!(
            "gradient check needs a scalar output, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Checks d f / d inputs, where `f` builds a scalar from input leaves.
pub fn check_inputs<F>(
    inputs: &[Tensor<f64>],
    eps: f64,
    f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut g, &vars)?;
    let base = scalar(&g, out)?;
    let grads = g.backward(out)?;
    let mut report = GradCheckReport::new();
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v, &g);
        for i in 0..work[k].len() {
            let orig = work[k].values()[i];
            work[k].values_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[k].values_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[k].values_mut()[i] = orig;
            report.record(
                &format!("input {k}"),
                i,
                analytic.values()[i],
                base,
                up,
                down,
                eps,
            );
        }
    }
    Ok(report)
}

/// Checks d f / d θ for every trainable parameter of `store`.
pub fn check_params<F, E>(store: &ParameterStore<f64>, eps: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let base = scalar(&g, out)?;
    let grads = g.backward(out)?;
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    with_grads.accumulate(&g, &grads)?;
    let mut report = GradCheckReport::new();
    let mut work = store.clone();
    for name in store.trainable_names() {
        let n = store.get(&name).expect("listed").len();
        let analytic = with_grads
            .grad(&name)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work.get(&name).expect("listed").values()[i];
            let put = |work: &mut ParameterStore<f64>, x: f64| -> Result<(), AutodiffError> {
                let mut t = work.get(&name).expect("listed").clone();
                t.values_mut()[i] = x;
                work.set(&name, t)
            };
            let eval_at = |work: &mut ParameterStore<f64>, x: f64| -> Result<f64, E> {
                put(work, x)?;
                let mut g = Graph::new();
                let out = f(&mut g, work)?;
                Ok(scalar(&g, out)?)
            };
            let up = eval_at(&mut work, orig + eps)?;
            let down = eval_at(&mut work, orig - eps)?;
            put(&mut work, orig)?;
            report.record(&name, i, a, base, up, down, eps);
        }
    }
    Ok(report)
}
