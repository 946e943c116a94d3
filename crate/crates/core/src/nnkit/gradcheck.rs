//! Central-difference gradient verification.

use super::{NnError, ParamSet, SeededRng, Tensor};

/// A scalar loss over a parameter set.
pub trait Objective {
    /// Loss only; must not touch gradients.
    fn loss(&self, params: &ParamSet) -> Result<f64, NnError>;

    /// Loss, with analytic gradients accumulated into `params`' buffers.
    fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64, NnError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub loss: f64,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks every scalar of every parameter.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &O,
    params: &mut ParamSet,
    h: f64,
) -> Result<GradCheckReport, NnError> {
    check_inner(objective, params, h, None)
}

/// Checks up to `per_param` randomly chosen scalars of each parameter.
pub fn grad_check_sampled<O: Objective + ?Sized>(
    objective: &O,
    params: &mut ParamSet,
    h: f64,
    per_param: usize,
    rng: &mut SeededRng,
) -> Result<GradCheckReport, NnError> {
    check_inner(objective, params, h, Some((per_param, rng)))
}

fn check_inner<O: Objective + ?Sized>(
    objective: &O,
    params: &mut ParamSet,
    h: f64,
    mut sample: Option<(usize, &mut SeededRng)>,
) -> Result<GradCheckReport, NnError> {
    params.zero_grads();
    let loss = finite(objective.loss_and_grad(params)?, "analytic pass")?;
    let ids: Vec<_> = params.ids().collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        loss,
    };
    for id in ids {
        let len = params.value(id).len();
        let mut indices: Vec<usize> = (0..len).collect();
        if let Some((per_param, rng)) = sample.as_mut() {
            if len > *per_param {
                rng.shuffle(&mut indices);
                indices.truncate(*per_param);
                indices.sort_unstable();
            }
        }
        for k in indices {
            let original = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = original + h;
            let plus = objective.loss(params);
            params.value_mut(id).data_mut()[k] = original - h;
            let minus = objective.loss(params);
            params.value_mut(id).data_mut()[k] = original;
            let context = || format!("{}[{k}]", params.name(id));
            let plus = finite(plus?, &context())?;
            let minus = finite(minus?, &context())?;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(params.grad(id).data()[k], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    params.zero_grads();
    Ok(report)
}

fn finite(value: f64, context: &str) -> Result<f64, NnError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NnError::NonFiniteLoss {
            context: context.to_string(),
        })
    }
}

/// Checks a tensor function `f` against its vector-Jacobian product `vjp`.
///
/// The scalar probed is `Σ f(x) ⊙ r` for a fixed non-trivial `r`, so every
/// output element contributes.
pub fn check_function(
    x: &Tensor,
    f: impl Fn(&Tensor) -> Tensor,
    vjp: impl Fn(&Tensor, &Tensor) -> Tensor,
) -> f64 {
    let h = 1e-5;
    let y = f(x);
    let r = Tensor::from_vec(
        y.shape(),
        (0..y.len()).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect(),
    )
    .expect("same length");
    let probe = |t: &Tensor| -> f64 { f(t).data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
    let analytic = vjp(x, &r);
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = x.data()[k];
        xp.data_mut()[k] = orig + h;
        let plus = probe(&xp);
        xp.data_mut()[k] = orig - h;
        let minus = probe(&xp);
        xp.data_mut()[k] = orig;
        worst = worst.max(relative_error(analytic.data()[k], (plus - minus) / (2.0 * h)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SquaredNorm;

    impl Objective for SquaredNorm {
        fn loss(&self, params: &ParamSet) -> Result<f64, NnError> {
            Ok(params.iter().map(|(_, v, _)| v.sq_norm()).sum())
        }

        fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64, NnError> {
            let loss = self.loss(params)?;
            for id in params.ids().collect::<Vec<_>>() {
                let mut g = params.value(id).clone();
                g.scale(2.0);
                params.grads_mut().accumulate(id, &g)?;
            }
            Ok(loss)
        }
    }

    struct Nan;

    impl Objective for Nan {
        fn loss(&self, _: &ParamSet) -> Result<f64, NnError> {
            Ok(f64::NAN)
        }

        fn loss_and_grad(&self, _: &mut ParamSet) -> Result<f64, NnError> {
            Ok(f64::NAN)
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(9);
        ps.xavier("a", 3, 4, &mut rng);
        ps.xavier("b", 2, 2, &mut rng);
        let report = grad_check(&SquaredNorm, &mut ps, 1e-5).unwrap();
        assert_eq!(report.checked, 16);
        assert!(report.max_rel_err < 1e-10, "{}", report.max_rel_err);
    }

    #[test]
    fn nan_loss_is_reported() {
        let mut ps = ParamSet::new();
        ps.zeros("a", &[1, 1]);
        assert!(matches!(
            grad_check(&Nan, &mut ps, 1e-5),
            Err(NnError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-8, 0.0), 1e-8);
        assert!((relative_error(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }
}
