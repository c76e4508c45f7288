//! Reverse-mode vs. central finite-difference gradient verification.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so exact zeros compare absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// How many times the step is divided by ten when a relu changes sign inside
/// the finite-difference stencil.
const MAX_STEP_REFINEMENTS: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    /// Elements whose stencil crossed a relu kink at the nominal step and
    /// were re-measured with a smaller one.
    pub refined: usize,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.tol = self.tol.max(other.tol);
        self.refined += other.refined;
        self.failures.extend(other.failures);
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e)))
        .collect();
    grad_check_at(f, inputs, &coords, step, tol)
}

/// Up to `per_input` distinct elements of each input, drawn from `seed`.
pub fn sample_coords(inputs: &[Tensor], per_input: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let mut picked = index::sample(&mut rng, n, per_input.min(n)).into_vec();
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|e| (i, e)));
    }
    coords
}

/// Checks the listed `(input, element)` coordinates.
///
/// `f` must return a one-element tensor. The analytic gradient comes from a
/// single backward pass; each numeric derivative is the fourth-order central
/// difference `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
pub fn grad_check_at<F>(
    f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    if !graph.value(loss).is_scalar() {
        return Err(Error::shape(
            "grad_check",
            "loss element count",
            1,
            graph.value(loss).numel(),
        ));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            graph
                .grad(v)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    let base_pattern = graph.activation_pattern();
    drop(graph);

    let eval = |perturbed: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).data()[0], g.activation_pattern()))
    };

    let mut report = GradCheckReport {
        tol,
        ..Default::default()
    };
    let mut work = inputs.to_vec();
    for &(i, e) in coords {
        let original = inputs[i].data()[e];
        let mut h = step;
        let mut refined = false;
        let numeric = loop {
            let mut at = |offset: f64| -> Result<(f64, bool)> {
                work[i].data_mut()[e] = original + offset;
                let (v, pattern) = eval(&work)?;
                Ok((v, pattern == base_pattern))
            };
            let (p2, s1) = at(2.0 * h)?;
            let (p1, s2) = at(h)?;
            let (m1, s3) = at(-h)?;
            let (m2, s4) = at(-2.0 * h)?;
            work[i].data_mut()[e] = original;
            let smooth = s1 && s2 && s3 && s4;
            if smooth || h <= step * 0.1f64.powi(MAX_STEP_REFINEMENTS as i32) {
                break (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            }
            h *= 0.1;
            refined = true;
        };
        if refined {
            report.refined += 1;
        }
        let a = analytic[i][e];
        let err = rel_err(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if err >= tol {
            report.failures.push(GradMismatch {
                input: i,
                element: e,
                analytic: a,
                numeric,
                rel_err: err,
            });
        }
    }
    Ok(report)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// `sum(y * w)` for a fixed random `w`, so every output element carries a
/// distinct weight into the scalar being differentiated.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&mut rng, g.value(y).shape(), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Finite-difference checks of every differentiable graph operation on
/// random inputs drawn from `seed`.
pub fn op_suite(seed: u64, step: f64, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: String,
                   inputs: Vec<Tensor>,
                   f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>|
     -> Result<()> {
        let report = grad_check(
            |g, v| {
                let y = f(g, v)?;
                if g.value(y).is_scalar() {
                    Ok(y)
                } else {
                    project(g, y, seed)
                }
            },
            &inputs,
            step,
            tol,
        )?;
        out.push((name, report));
        Ok(())
    };

    for (cin, cout, h, w, k, stride, pad) in [(2, 3, 5, 6, 3, 1, 1), (3, 2, 7, 5, 3, 2, 0), (1, 2, 4, 4, 1, 2, 2)] {
        let inputs = vec![
            uniform(&mut rng, &[cin, h, w], -1.0, 1.0),
            uniform(&mut rng, &[cout, cin, k, k], -1.0, 1.0),
            uniform(&mut rng, &[cout], -1.0, 1.0),
        ];
        run(
            format!("conv2d k{k} s{stride} p{pad}"),
            inputs,
            &|g, v| g.conv2d(v[0], v[1], v[2], stride, pad),
        )?;
    }
    let shape = [2, 3, 4];
    let a = uniform(&mut rng, &shape, -1.0, 1.0);
    let b = uniform(&mut rng, &shape, -1.0, 1.0);
    let away = uniform(&mut rng, &shape, 0.5, 1.5).zip_map(&b, |m, s| m * s.signum())?;
    run("relu".into(), vec![a.clone()], &|g, v| g.relu(v[0]))?;
    run("add".into(), vec![a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]))?;
    run("sub".into(), vec![a.clone(), b.clone()], &|g, v| g.sub(v[0], v[1]))?;
    run("mul".into(), vec![a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1]))?;
    run(
        "mul scalar broadcast".into(),
        vec![a.clone(), uniform(&mut rng, &[1], -1.0, 1.0)],
        &|g, v| g.mul(v[0], v[1]),
    )?;
    run(
        "sub scalar broadcast".into(),
        vec![uniform(&mut rng, &[1], -1.0, 1.0), b.clone()],
        &|g, v| g.sub(v[0], v[1]),
    )?;
    run("reciprocal".into(), vec![away], &|g, v| g.reciprocal(v[0]))?;
    run("affine".into(), vec![a.clone()], &|g, v| g.affine(v[0], -1.7, 0.3))?;
    run(
        "concat_channels".into(),
        vec![a.clone(), uniform(&mut rng, &[1, 3, 4], -1.0, 1.0)],
        &|g, v| g.concat_channels(&[v[0], v[1]]),
    )?;
    run(
        "repeat_channels".into(),
        vec![uniform(&mut rng, &[1, 3, 4], -1.0, 1.0)],
        &|g, v| g.repeat_channels(v[0], 3),
    )?;
    run("reduce_mse".into(), vec![a.clone(), b.clone()], &|g, v| g.reduce_mse(v[0], v[1]))?;
    run("sum".into(), vec![a], &|g, v| g.sum(v[0]))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::autograd::CustomOp;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.9]).unwrap();
        let report = grad_check(|g, v| g.sum(v[0]), &[x], 1e-3, 1e-10).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_err < 1e-10);
        assert_eq!(report.checked, 4);
    }

    /// Squares its input but reports `x` instead of `2x` as the gradient.
    struct BrokenSquare;

    impl CustomOp for BrokenSquare {
        fn name(&self) -> &str {
            "broken_square"
        }

        fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
            vec![inputs[0].data().iter().zip(g).map(|(x, gi)| x * gi).collect()]
        }
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let x = Tensor::new(vec![3], vec![0.5, -0.7, 0.2]).unwrap();
        let report = grad_check(
            |g, v| {
                let value = g.value(v[0]).map(|a| a * a);
                let y = g.custom(&[v[0]], value, Arc::new(BrokenSquare))?;
                g.sum(y)
            },
            &[x],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 3);
    }

    #[test]
    fn kink_inside_stencil_refines_step() {
        // relu(x) at x = 5e-4 has its kink inside a 1e-3 stencil.
        let x = Tensor::new(vec![1], vec![5e-4]).unwrap();
        let report = grad_check(
            |g, v| {
                let r = g.relu(v[0])?;
                g.sum(r)
            },
            &[x],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.refined, 1);
    }

    #[test]
    fn sampled_coords_are_distinct_and_bounded() {
        let a = Tensor::zeros(&[10]);
        let b = Tensor::zeros(&[3]);
        let coords = sample_coords(&[a, b], 5, 7);
        assert_eq!(coords.iter().filter(|c| c.0 == 0).count(), 5);
        assert_eq!(coords.iter().filter(|c| c.0 == 1).count(), 3);
        assert_eq!(coords, sample_coords(&[Tensor::zeros(&[10]), Tensor::zeros(&[3])], 5, 7));
    }
}
