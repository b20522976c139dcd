use super::{DiffError, ParamSet};

/// Central-difference gradient of `f` at `params`, one coordinate at a time
/// over the flattened layout. The result has the same names and shapes as
/// `params`.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamSet, epsilon: f64) -> Result<ParamSet, DiffError>
where
    F: FnMut(&ParamSet) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DiffError::BadEpsilon(epsilon));
    }
    let base = params.flatten();
    let mut probe = params.clone();
    let mut grad = vec![0.0; base.len()];
    let mut point = base.clone();
    for k in 0..base.len() {
        point[k] = base[k] + epsilon;
        probe.assign_flat(&point)?;
        let plus = f(&probe);
        point[k] = base[k] - epsilon;
        probe.assign_flat(&point)?;
        let minus = f(&probe);
        point[k] = base[k];
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(DiffError::NonFiniteObjective { coordinate: k, value });
            }
        }
        grad[k] = (plus - minus) / (2.0 * epsilon);
    }
    params.unflatten(&grad)
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`; zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on vectors of different length");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
