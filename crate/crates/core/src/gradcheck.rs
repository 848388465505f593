//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParameterStore};

/// One scalar coordinate of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub param: ParamId,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<(Coordinate, f64, f64)>,
    pub checked: usize,
}

/// Draws `n` coordinates uniformly over every scalar in the store.
pub fn sample_coordinates<R: Rng>(store: &ParameterStore, n: usize, rng: &mut R) -> Vec<Coordinate> {
    let all: Vec<ParamId> = store.ids().collect();
    sample_coordinates_from(store, &all, n, rng)
}

/// Draws `n` coordinates uniformly over the scalars of `params`.
pub fn sample_coordinates_from<R: Rng>(store: &ParameterStore, params: &[ParamId], n: usize, rng: &mut R) -> Vec<Coordinate> {
    let sizes: Vec<(ParamId, usize)> = params.iter().map(|&id| (id, store.value(id).len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    if total == 0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            for &(param, len) in &sizes {
                if k < len {
                    return Coordinate { param, offset: k };
                }
                k -= len;
            }
            unreachable!()
        })
        .collect()
}

/// Compares the gradients returned by `loss_fn` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` at each sampled coordinate and returns the worst
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(
    loss_fn: F,
    store: &ParameterStore,
    epsilon: f64,
    sample: &[Coordinate],
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(f64, Gradients)>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Contract(format!("finite-difference epsilon must be positive, got {epsilon}")));
    }
    let (first, analytic) = loss_fn(store)?;
    let (second, _) = loss_fn(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &coord in sample {
        let original = probe.value(coord.param).data()[coord.offset];
        probe.value_mut(coord.param).data_mut()[coord.offset] = original + epsilon;
        let plus = loss_fn(&probe)?.0;
        probe.value_mut(coord.param).data_mut()[coord.offset] = original - epsilon;
        let minus = loss_fn(&probe)?.0;
        probe.value_mut(coord.param).data_mut()[coord.offset] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let exact = analytic
            .get(coord.param)
            .map_or(0.0, |g| g.data()[coord.offset]);
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = rel.max(report.max_relative_error);
            report.worst = Some((coord, exact, numeric));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn half_norm_sq(store: &ParameterStore) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(store);
        let t = tape.param_by_name("theta")?;
        let sq = tape.mul(t, t)?;
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    }

    fn quadratic_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register("theta", Tensor::vector(vec![0.3, -1.2, 2.5, 0.01])).unwrap();
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let s = quadratic_store();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords = sample_coordinates(&s, 20, &mut rng);
        let r = finite_difference_check(half_norm_sq, &s, 1e-4, &coords).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 20);
    }

    #[test]
    fn zero_epsilon_rejected() {
        let s = quadratic_store();
        let coords = [Coordinate { param: s.id("theta").unwrap(), offset: 0 }];
        assert!(matches!(
            finite_difference_check(half_norm_sq, &s, 0.0, &coords),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nondeterministic_loss_detected() {
        let s = quadratic_store();
        let counter = Cell::new(0.0);
        let noisy = |st: &ParameterStore| {
            counter.set(counter.get() + 1.0);
            let (l, g) = half_norm_sq(st)?;
            Ok((l + counter.get(), g))
        };
        let coords = [Coordinate { param: s.id("theta").unwrap(), offset: 0 }];
        assert!(matches!(
            finite_difference_check(noisy, &s, 1e-4, &coords),
            Err(Error::NonDeterministic { .. })
        ));
    }

    #[test]
    fn tied_parameter_sums_both_paths() {
        // loss = sum((E x) ⊙ (E x)) + sum(E) uses E on three paths.
        let mut s = ParameterStore::new();
        s.register("e", Tensor::matrix(2, 2, vec![0.4, -0.3, 0.8, 0.1]).unwrap()).unwrap();
        let f = |st: &ParameterStore| -> Result<(f64, Gradients)> {
            let mut tape = Tape::new(st);
            let e = tape.param_by_name("e")?;
            let x = tape.constant(Tensor::matrix(2, 1, vec![1.0, -2.0]).unwrap());
            let y = tape.matmul(e, x)?;
            let y2 = tape.mul(y, y)?;
            let a = tape.sum(y2);
            let b = tape.sum(e);
            let ab = tape.add(a, b)?;
            Ok((tape.value(ab).item(), tape.backward(ab)?))
        };
        let id = s.id("e").unwrap();
        let coords: Vec<_> = (0..4).map(|offset| Coordinate { param: id, offset }).collect();
        let r = finite_difference_check(f, &s, 1e-4, &coords).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }
}
