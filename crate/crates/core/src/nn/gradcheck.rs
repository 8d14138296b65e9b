/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|)` over
    /// the checked coordinates.
    pub max_rel_error: f64,
    /// Largest absolute difference.
    pub max_abs_error: f64,
    /// Coordinate with the largest absolute difference.
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error of a vector of gradients, normalized by the largest
/// magnitude in either vector.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `point` with step `h`, in `f64`, compared
/// against `analytic`. `indices` restricts the check to a subset of
/// coordinates.
pub fn grad_check<T: Copy + Into<f64>>(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[T],
    analytic: &[T],
    h: f64,
    indices: Option<&[usize]>,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len());
    let mut x: Vec<f64> = point.iter().map(|&v| v.into()).collect();
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut a = Vec::with_capacity(idx.len());
    let mut n = Vec::with_capacity(idx.len());
    for &i in idx {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        n.push((plus - minus) / (2.0 * h));
        a.push(analytic[i].into());
    }
    let (worst, max_abs) = a
        .iter()
        .zip(&n)
        .map(|(a, n)| (a - n).abs())
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    GradCheckReport {
        max_rel_error: relative_error(&a, &n),
        max_abs_error: max_abs,
        worst_index: idx.get(worst).copied().unwrap_or(0),
        checked: idx.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratic() {
        let p = [1.0f64, -2.0, 0.5];
        let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = grad_check(|x| x.iter().map(|v| v * v).sum(), &p, &g, 1e-3, None);
        assert!(r.max_rel_error < 1e-10);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = [1.0f64, 2.0];
        let r = grad_check(|x| x[0] * x[1], &p, &[2.0, 2.0], 1e-3, Some(&[1]));
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_error - 0.5).abs() < 1e-9);
    }
}
