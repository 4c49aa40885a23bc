use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Tape, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max over entries of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

fn evaluate<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = tape.freeze(params)?;
    let v = f(&tape, &bound)?.item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "gradcheck" });
    }
    Ok(v)
}

/// Compares tape gradients of `f` against central differences on every
/// parameter entry.
pub fn finite_diff_check<F>(params: &ParamSet, eps: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = {
        let tape = Tape::new();
        let bound = tape.bind(params)?;
        let loss = f(&tape, &bound)?;
        if !loss.item()?.is_finite() {
            return Err(Error::NonFinite { op: "gradcheck" });
        }
        let grads = tape.backward(loss)?;
        let mut with_grads = params.clone();
        with_grads.zero_grad();
        bound.accumulate(&grads, &mut with_grads);
        with_grads
    };

    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map_or(0, |t| t.numel());
        let grad = analytic
            .get(&name)
            .and_then(|t| t.grad())
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = evaluate(&probe, &f)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = evaluate(&probe, &f)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamKind, Tensor};

    fn quad_params() -> ParamSet {
        let mut s = ParamSet::new();
        s.insert("x", Tensor::vector(vec![0.3, -1.2, 2.0]), ParamKind::Weight)
            .unwrap();
        s
    }

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = xᵀ A x with A symmetric positive definite.
        let a = Tensor::new(&[3, 3], vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]).unwrap();
        let r = finite_diff_check(&quad_params(), DEFAULT_EPS, |tape, p| {
            let x = p.get("x")?.reshape(&[1, 3])?;
            let am = tape.constant(a.clone())?;
            x.matmul(&am)?.mul(&x)?.sum()
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries, 3);
    }

    #[test]
    fn rejects_degenerate_step() {
        let e = finite_diff_check(&quad_params(), 0.0, |_, p| p.get("x")?.sum());
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let e = finite_diff_check(&quad_params(), DEFAULT_EPS, |_, p| {
            p.get("x")?.scale(1e300)?.square()?.sum()
        });
        assert!(matches!(e, Err(Error::NonFinite { .. })));
    }
}
