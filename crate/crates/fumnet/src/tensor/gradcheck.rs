//! Central-finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of every backward rule it validates. Checks run in `f64`; a step of
//! `1e-3` against a relative tolerance of `1e-4` is the calibrated default
//! for this crate's layers.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, Tape, Tensor, TensorError, Var};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub coords_checked: usize,
    /// `(input index, flat coordinate)` pairs whose perturbed forward pass
    /// produced a non-finite value.
    pub nonfinite: Vec<(usize, usize)>,
    /// Worst coordinate: `(input index, flat coordinate, analytic, numeric)`.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.nonfinite.is_empty() && self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} coords (tol {:.1e})",
            self.max_rel_err, self.coords_checked, self.tol
        )?;
        if let Some((input, coord, a, n)) = &self.worst {
            write!(f, ", worst at input {input}[{coord}]: analytic {a:.6e} vs numeric {n:.6e}")?;
        }
        if !self.nonfinite.is_empty() {
            write!(f, ", {} non-finite coordinate(s)", self.nonfinite.len())?;
        }
        Ok(())
    }
}

/// Checks every coordinate of every input. `f` must produce a scalar.
pub fn gradcheck<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> Result<GradcheckReport, TensorError>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>, TensorError>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    run_check(&f, inputs, step, tol, &coords)
}

/// Like [`gradcheck`] but caps the coordinates checked per input,
/// choosing them with a seeded sampler. Large layers are spot-checked
/// this way to keep the suite inside its time budget.
pub fn gradcheck_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    max_coords_per_input: usize,
    seed: u64,
) -> Result<GradcheckReport, TensorError>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            if n <= max_coords_per_input {
                (0..n).collect()
            } else {
                let mut picked = sample(&mut rng, n, max_coords_per_input).into_vec();
                picked.sort_unstable();
                picked
            }
        })
        .collect();
    run_check(&f, inputs, step, tol, &coords)
}

fn run_check<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    coords: &[Vec<usize>],
) -> Result<GradcheckReport, TensorError>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>, TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::InvalidStep(step));
    }

    // Analytic gradients via one taped pass.
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.input(t, true)).collect();
        let loss = f(&tape, &vars)?;
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss.shape() });
        }
        backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |perturbed: &[Tensor<f64>]| -> Result<Option<f64>, TensorError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = perturbed.iter().map(|t| tape.input(t, false)).collect();
        let loss = f(&tape, &vars)?;
        let value = loss.value().data()[0];
        if tape.nonfinite_detected() || !value.is_finite() {
            return Ok(None);
        }
        Ok(Some(value))
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        tol,
        coords_checked: 0,
        nonfinite: Vec::new(),
        worst: None,
    };
    for (idx, input_coords) in coords.iter().enumerate() {
        for &coord in input_coords {
            let original = work[idx].data()[coord];
            work[idx].data_mut()[coord] = original + step;
            let plus = eval(&work)?;
            work[idx].data_mut()[coord] = original - step;
            let minus = eval(&work)?;
            work[idx].data_mut()[coord] = original;

            report.coords_checked += 1;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                report.nonfinite.push((idx, coord));
                continue;
            };
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx].data()[coord];
            // Relative above unit magnitude, absolute below: tiny true
            // gradients would otherwise drown in truncation noise.
            let rel = (a - numeric).abs() / f64::max(1.0, a.abs() + numeric.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((idx, coord, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_analytic() {
        // f = sum(x²); df/dx = 2x.
        let x = Tensor::from_vec(vec![1.0, -1.0]);
        let report = gradcheck(
            |_tape, vars| Ok(vars[0].mul(vars[0])?.sum_all()),
            &[x.clone()],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.pass(), "{report}");

        let tape = Tape::new();
        let v = tape.input(&x, true);
        backward(v.mul(v).unwrap().sum_all()).unwrap();
        let g = v.grad().unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-12);
        assert!((g.data()[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn relu_away_from_kink() {
        let report = gradcheck(
            |_tape, vars| Ok(vars[0].relu().sum_all()),
            &[Tensor::from_vec(vec![1.0])],
            1e-3,
            1e-8,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
        let tape = Tape::new();
        let v = tape.input(&Tensor::from_vec(vec![1.0]), true);
        backward(v.relu().sum_all()).unwrap();
        assert_eq!(v.grad().unwrap().data(), &[1.0]);
    }

    #[test]
    fn tanh_prime_at_zero_is_one() {
        let tape = Tape::new();
        let v = tape.input(&Tensor::from_vec(vec![0.0f64]), true);
        backward(v.tanh().sum_all()).unwrap();
        assert!((v.grad().unwrap().data()[0] - 1.0).abs() < 1e-12);
        let report = gradcheck(
            |_tape, vars| Ok(vars[0].tanh().sum_all()),
            &[Tensor::from_vec(vec![0.0])],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn matmul_gradient_of_sum_against_identity() {
        // d/dA sum(A·I) = ones.
        let a = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let tape = Tape::new();
        let va = tape.input(&a, true);
        let vi = tape.input(&eye, false);
        backward(va.matmul(vi).unwrap().sum_all()).unwrap();
        assert_eq!(va.grad().unwrap().data(), &[1.0; 4]);

        let report = gradcheck(
            |tape, vars| {
                let eye = tape.input(
                    &Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                    false,
                );
                Ok(vars[0].matmul(eye)?.sum_all())
            },
            &[a],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let err = gradcheck(
            |_tape, vars| Ok(vars[0].sum_all()),
            &[Tensor::from_vec(vec![1.0])],
            0.0,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::InvalidStep(_)));
    }

    #[test]
    fn sampled_check_caps_coordinates() {
        let x = Tensor::from_vec((0..100).map(|i| 0.1 + i as f64 * 0.01).collect());
        let report = gradcheck_sampled(
            |_tape, vars| Ok(vars[0].mul(vars[0])?.sum_all()),
            &[x],
            1e-3,
            1e-6,
            16,
            7,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 16);
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // Mixed graph touching mul, add, tanh, sigmoid, matmul, concat.
        let a = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.9, -1.4, 0.2]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![0.5, -0.2, 0.8, 1.2, -0.4, 0.6]).unwrap();
        let report = gradcheck(
            |_tape, vars| {
                let prod = vars[0].matmul(vars[1])?; // [2,2]
                let gram = vars[0].matmul_t(vars[0])?; // [2,2]
                let gated = prod.tanh().mul(prod.sigmoid())?;
                let both = crate::tensor::concat_feature(gated, gram)?;
                Ok(both.sum_all())
            },
            &[a, b],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
