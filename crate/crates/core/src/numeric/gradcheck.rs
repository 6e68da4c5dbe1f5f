use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences, returning the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// parameter entry. Parameters the graph never touches have analytic
/// gradient zero.
pub fn grad_check<B>(params: &mut ParamStore<f64>, eps: f64, build: B) -> Result<f64>
where
    B: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        g.backward(loss)?;
        g.into_param_grads()
    };
    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        Ok(g.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).value.len();
        for i in 0..n {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.get(id).map(|g| g[i]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{inject_tanh_backward_fault, Tensor};

    #[test]
    fn quadratic_form_is_exact_to_roundoff() {
        let mut p = ParamStore::new();
        let x = p.add("x", Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap());
        let a = Tensor::new(vec![3, 3], vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let err = grad_check(&mut p, 1e-5, |g, p| {
            let xv = g.param(p, x)?;
            let av = g.constant(a.clone())?;
            let ax = g.matmul(xv, av)?;
            let q = g.mul(ax, xv)?;
            g.sum(q)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_tanh_backward_is_detected() {
        let mut p = ParamStore::new();
        p.add("x", Tensor::new(vec![1, 4], vec![0.7, -0.4, 1.1, 0.2]).unwrap());
        fn build<'a>(g: &mut Graph<'a, f64>, p: &'a ParamStore<f64>) -> Result<Var> {
            let xv = g.param(p, p.find("x").unwrap())?;
            let t = g.tanh(xv)?;
            g.sum(t)
        }
        assert!(grad_check(&mut p, 1e-5, build).unwrap() < 1e-8);
        inject_tanh_backward_fault(true);
        let err = grad_check(&mut p, 1e-5, build).unwrap();
        inject_tanh_backward_fault(false);
        assert!(err > 1e-2, "{err}");
    }
}
