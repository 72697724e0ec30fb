/// Central finite-difference perturbation, chosen for f64 evaluation.
pub const FD_PERTURBATION: f64 = 1e-3;

/// Outcome of comparing an analytic gradient against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    /// Index at which a non-finite function value was observed, if any.
    pub non_finite_at: Option<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite_at.is_none() && self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central finite differences of `f` around
/// `input`, in double precision.
///
/// `indices` restricts the check to a subset of coordinates (full gradients
/// of large parameter blocks are too expensive to difference exhaustively);
/// `None` checks every coordinate.
pub fn grad_check<F>(
    f: F,
    input: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    grad_check_with_step(f, input, analytic, indices, tolerance, FD_PERTURBATION)
}

/// [`grad_check`] with an explicit perturbation. Piecewise-linear functions
/// (anything through ReLU) need a step small enough that the perturbation
/// stays on one side of the kinks; smooth well-scaled functions do better
/// with the default.
pub fn grad_check_with_step<F>(
    f: F,
    input: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    tolerance: f64,
    step: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(input.len(), analytic.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let idx: &[usize] = match indices {
        Some(ix) => ix,
        None => {
            all = (0..input.len()).collect();
            &all
        }
    };

    let mut buf = input.to_vec();
    let mut max_rel = 0.0;
    let mut worst = 0;
    let mut non_finite_at = None;
    for &i in idx {
        let orig = buf[i];
        buf[i] = orig + step;
        let plus = f(&buf);
        buf[i] = orig - step;
        let minus = f(&buf);
        buf[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            non_finite_at = Some(i);
            break;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs());
        let rel = if denom < 1e-6 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / denom
        };
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_index: worst,
        checked: idx.len(),
        tolerance,
        non_finite_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let f = |p: &[f64]| p.iter().map(|&x| 3.0 * x).sum::<f64>();
        let input = vec![0.5, -1.2, 2.0];
        let analytic = vec![3.0; 3];
        let rep = grad_check(f, &input, &analytic, None, 1e-10);
        assert!(rep.passed(), "rel err {}", rep.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |p: &[f64]| p.iter().map(|&x| x * x).sum::<f64>();
        let input = vec![1.0, 2.0];
        // weight gradient deliberately scaled x2
        let corrupted = vec![4.0, 8.0];
        let rep = grad_check(f, &input, &corrupted, None, 1e-4);
        assert!(!rep.passed());
    }

    #[test]
    fn non_finite_output_is_reported() {
        let f = |p: &[f64]| if p[0] > 1.0 { f64::NAN } else { p[0] };
        let rep = grad_check(f, &[1.0], &[1.0], None, 1e-4);
        assert_eq!(rep.non_finite_at, Some(0));
        assert!(!rep.passed());
    }
}
