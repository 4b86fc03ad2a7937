//! Central finite-difference gradient checking.

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;

/// [`gradcheck_with_step`] at [`DEFAULT_STEP`].
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    gradcheck_with_step(f, inputs, DEFAULT_STEP)
}

/// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// input coordinate.
///
/// Non-scalar outputs are contracted with fixed power-of-two weights so the
/// whole Jacobian is exercised. Any error from `f` is reported as `+inf`.
pub fn gradcheck_with_step<F>(f: F, inputs: &[Tensor], step: f64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(&f, inputs, step).unwrap_or(f64::INFINITY)
}

fn check<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.detached().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    let loss = contract(&mut g, out)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = inputs.iter().map(Tensor::detached).collect::<Vec<_>>();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x = t.data()[j];
            // Exactly representable offsets on either side of x.
            let up = (x + step) - x;
            let down = x - (x - step);
            probe[ti].data_mut()[j] = x + up;
            let f_plus = evaluate(f, &probe)?;
            probe[ti].data_mut()[j] = x - down;
            let f_minus = evaluate(f, &probe)?;
            probe[ti].data_mut()[j] = x;
            let numeric = (f_plus - f_minus) / (up + down);
            let a = analytic[ti][j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.detached())).collect();
    let out = f(&mut g, &vars)?;
    let loss = contract(&mut g, out)?;
    Ok(g.value(loss).item())
}

fn contract(g: &mut Graph, out: Var) -> Result<Var> {
    let n = g.value(out).len();
    if n == 1 {
        return g.reshape(out, &[1]);
    }
    let weights: Vec<f64> = (0..n).map(projection_weight).collect();
    let w = g.constant(Tensor::new(g.shape(out).to_vec(), weights)?);
    let weighted = g.mul(out, w)?;
    g.sum_all(weighted)
}

/// Powers of two in [1/8, 8], so scaling by them is exact.
fn projection_weight(i: usize) -> f64 {
    let exp = ((i * 5 + 3) % 7) as i32 - 3;
    2f64.powi(exp)
}

/// Gradient check over every scalar of every tensor in `store`.
///
/// `f` builds a loss from parameters fetched with [`Graph::param`]; the
/// same error measure as [`gradcheck_with_step`] is used.
pub fn gradcheck_params<F>(store: &ParamStore, f: F, step: f64) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_params(store, &f, step).unwrap_or(f64::INFINITY)
}

/// Per-parameter maximum relative error, in store order.
pub fn gradcheck_params_by_name<F>(store: &ParamStore, f: F, step: f64) -> Vec<(String, f64)>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    match analytic_params(store, &f) {
        Ok(analytic) => store
            .ids()
            .map(|id| {
                let err = param_error(store, &f, &analytic, id, step).unwrap_or(f64::INFINITY);
                (store.name(id).to_string(), err)
            })
            .collect(),
        Err(_) => store.iter().map(|(n, _)| (n.to_string(), f64::INFINITY)).collect(),
    }
}

fn analytic_params<F>(store: &ParamStore, f: &F) -> Result<ParamStore>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let loss = contract(&mut g, out)?;
    g.backward(loss)?;
    let mut grads = store.clone();
    grads.zero_grad();
    g.accumulate_into(&mut grads);
    Ok(grads)
}

fn check_params<F>(store: &ParamStore, f: &F, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_params(store, f)?;
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        worst = worst.max(param_error(store, f, &analytic, id, step)?);
    }
    Ok(worst)
}

fn param_error<F>(store: &ParamStore, f: &F, analytic: &ParamStore, id: ParamId, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let n = store.get(id).len();
    let grad = analytic.get(id).grad();
    for j in 0..n {
        let x = store.get(id).data()[j];
        let up = (x + step) - x;
        let down = x - (x - step);
        probe.get_mut(id).data_mut()[j] = x + up;
        let f_plus = evaluate_params(f, &probe)?;
        probe.get_mut(id).data_mut()[j] = x - down;
        let f_minus = evaluate_params(f, &probe)?;
        probe.get_mut(id).data_mut()[j] = x;
        let numeric = (f_plus - f_minus) / (up + down);
        let a = grad.map_or(0.0, |g| g[j]);
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn evaluate_params<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let loss = contract(&mut g, out)?;
    Ok(g.value(loss).item())
}
