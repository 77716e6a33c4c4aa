use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// `|a − b| / max(|a|, |b|, 1e-8)`; zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    /// Entries whose `±eps` probe crossed a ReLU kink and were re-probed
    /// with a smaller step.
    pub kinks: usize,
}

/// Smallest step tried when a probe crosses a kink.
const MIN_KINK_STEP_FACTOR: f64 = 1e-3;

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every scalar entry of `point`.
///
/// A central difference across a ReLU kink measures the average of two
/// one-sided slopes rather than the derivative. When either probe changes
/// the ReLU sign pattern of the base point, the step is divided by 10
/// (down to `eps·1e-3`) until both probes stay on the base pattern; such
/// entries are counted in [`GradCheckReport::kinks`].
///
/// `f` must be deterministic at `point`.
pub fn grad_check<F>(point: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    // Parameters are bound as leaves so that ReLUs are recorded for the
    // sign pattern; values are the same as with constants.
    let eval = |params: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let root = f(&mut tape, &bound)?;
        let value = tape
            .value(root)
            .item()
            .ok_or_else(|| Error::Contract("grad_check needs a scalar function".into()))?;
        Ok((value, tape.relu_pattern()))
    };

    let mut tape = Tape::new();
    let bound = point.bind(&mut tape, true);
    let root = f(&mut tape, &bound)?;
    let base = tape.relu_pattern();
    let analytic = tape.backward(root)?.into_params();
    drop(tape);

    let mut probe = point.clone();
    let names: Vec<String> = point.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
        kinks: 0,
    };
    for name in &names {
        let grad = &analytic[name];
        for j in 0..grad.len() {
            let orig = probe.get(name).expect("name from store").data()[j];
            let mut step = eps;
            let mut kinked = false;
            let numeric = loop {
                probe.get_mut(name).expect("name from store").data_mut()[j] = orig + step;
                let (plus, pp) = eval(&probe)?;
                probe.get_mut(name).expect("name from store").data_mut()[j] = orig - step;
                let (minus, pm) = eval(&probe)?;
                let smooth = pp == base && pm == base;
                if smooth || step / 10.0 < eps * MIN_KINK_STEP_FACTOR {
                    break (plus - minus) / (2.0 * step);
                }
                kinked = true;
                step /= 10.0;
            };
            probe.get_mut(name).expect("name from store").data_mut()[j] = orig;
            report.kinks += usize::from(kinked);
            let err = relative_error(grad.data()[j], numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_tight() {
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::vector(&[0.3, -1.2, 2.5])).unwrap();
        p.insert("a", Tensor::vector(&[1.5, 0.5, -2.0])).unwrap();
        // f = sum(a * θ²) + sum(θ)
        let report = grad_check(&p, 1e-4, |tape, b| {
            let th = b.get("theta")?;
            let a = b.get("a")?;
            let sq = tape.mul(th, th)?;
            let w = tape.mul(a, sq)?;
            let s1 = tape.sum(w);
            let s2 = tape.sum(th);
            tape.add(s1, s2)
        })
        .unwrap();
        assert_eq!(report.entries, 6);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn constant_function_reports_zero() {
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::vector(&[1.0, 2.0])).unwrap();
        let report = grad_check(&p, 1e-4, |tape, _| Ok(tape.constant(Tensor::scalar(4.2)))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn kink_inside_the_step_is_reprobed() {
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::vector(&[-3e-5])).unwrap();
        // f = 2·relu(θ) + θ: derivative 1 at θ < 0, kink 3e-5 away.
        let report = grad_check(&p, 1e-4, |tape, b| {
            let th = b.get("theta")?;
            let r = tape.relu(th);
            let r2 = tape.scale(r, 2.0);
            let y = tape.add(r2, th)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert_eq!(report.kinks, 1);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
