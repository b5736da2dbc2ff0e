//! Central finite-difference check of recorded gradients.

use super::{Bound, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor in the relative error, so entries whose true gradient
/// is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the recorded gradient of `f` against `(f(p + eps) - f(p - eps)) / 2 eps`
/// for every entry of every parameter in `store`. `f` must be deterministic:
/// it is re-run twice per entry on a fresh tape.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let bound = tape.bind(store);
        let loss = f(&tape, &bound)?;
        tape.backward(loss)?.named(&bound)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = tape.bind(s);
        Ok(f(&tape, &bound)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let mut work = store.clone();
    for (name, g) in &analytic {
        for i in 0..g.len() {
            let orig = work.value(name)?.data()[i];
            work.value_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = g.data()[i];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), i));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn exact_for_a_quadratic() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![1.5, -2.0])).unwrap();
        let r = check_gradients(&s, 1e-5, |t, b| {
            let x = b.get("x")?;
            let zero = t.constant(Tensor::vector(vec![0.0, 0.0]));
            x.l2_loss(&zero)
        })
        .unwrap();
        assert_eq!(r.entries_checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
