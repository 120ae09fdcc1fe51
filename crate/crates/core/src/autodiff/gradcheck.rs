//! Central finite-difference verification of autodiff gradients.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// One parameter coordinate: (parameter index, flat element index).
pub type Coord = (usize, usize);

fn evaluate<T, F>(f: &mut F, params: &[Tensor<T>], with_grad: bool) -> Result<(Graph<T>, Vec<Var>, Var)>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            if with_grad {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Usage(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    let v = g.value(out)[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value {v} is not finite")));
    }
    Ok((g, vars, out))
}

/// Compares autodiff gradients of `f` with central differences on every
/// coordinate of `params`; returns the maximum relative error.
///
/// `f` builds a scalar on the supplied graph from the parameter leaves.
pub fn grad_check<T, F>(params: &[Tensor<T>], eps: f64, f: F) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let coords: Vec<Coord> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |e| (p, e)))
        .collect();
    grad_check_coords(params, eps, &coords, f)
}

/// [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_coords<T, F>(params: &[Tensor<T>], eps: f64, coords: &[Coord], mut f: F) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    let (mut g, vars, out) = evaluate(&mut f, params, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match g.grad(v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();
    drop(g);

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for &(p, e) in coords {
        let orig = work[p].data()[e];
        work[p].data_mut()[e] = T::of(orig.as_f64() + eps);
        let (gp, _, op) = evaluate(&mut f, &work, false)?;
        let plus = gp.value(op)[0].as_f64();
        work[p].data_mut()[e] = T::of(orig.as_f64() - eps);
        let (gm, _, om) = evaluate(&mut f, &work, false)?;
        let minus = gm.value(om)[0].as_f64();
        work[p].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[p][e], numeric));
    }
    Ok(worst)
}

/// Outcome of [`grad_check_sampled`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCheck {
    pub max_relative_error: f64,
    /// Coordinates that were compared.
    pub checked: Vec<Coord>,
    /// Draws rejected because the central difference is below
    /// [`MIN_RESOLVABLE`] and so dominated by round-off.
    pub unresolvable: usize,
    /// Draws rejected because the function is not smooth inside the
    /// `±eps` stencil (e.g. a relu hinge is crossed).
    pub non_smooth: usize,
}

/// Smallest central difference treated as signal rather than round-off.
pub const MIN_RESOLVABLE: f64 = 1e-6;

/// Central difference at one coordinate, without building gradients.
fn central_difference<T, F>(f: &mut F, work: &mut [Tensor<T>], (p, e): Coord, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let orig = work[p].data()[e];
    work[p].data_mut()[e] = T::of(orig.as_f64() + eps);
    let (gp, _, op) = evaluate(f, work, false)?;
    let plus = gp.value(op)[0].as_f64();
    work[p].data_mut()[e] = T::of(orig.as_f64() - eps);
    let (gm, _, om) = evaluate(f, work, false)?;
    let minus = gm.value(om)[0].as_f64();
    work[p].data_mut()[e] = orig;
    Ok((plus - minus) / (2.0 * eps))
}

/// Compares autodiff with central differences on `n` coordinates drawn
/// uniformly (seeded) from all parameters.
///
/// A draw is compared only when finite differences can resolve it: the
/// difference at `eps` must be at least [`MIN_RESOLVABLE`] and agree with
/// the difference at `eps / 2` to 1e-3 relative. Both tests look at the
/// function values only, so a wrong analytic gradient cannot be filtered
/// out. At most `50 · n` draws are made.
pub fn grad_check_sampled<T, F>(params: &[Tensor<T>], eps: f64, n: usize, seed: u64, mut f: F) -> Result<SampledCheck>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    use rand::{Rng, SeedableRng};
    if !(eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 || n == 0 {
        return Err(Error::Usage("nothing to check".into()));
    }
    let (mut g, vars, out) = evaluate(&mut f, params, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match g.grad(v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();
    drop(g);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut result = SampledCheck {
        max_relative_error: 0.0,
        checked: Vec::with_capacity(n),
        unresolvable: 0,
        non_smooth: 0,
    };
    for _ in 0..50 * n {
        if result.checked.len() == n {
            break;
        }
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let coord = (p, flat);
        if result.checked.contains(&coord) {
            continue;
        }
        let full = central_difference(&mut f, &mut work, coord, eps)?;
        if full.abs() < MIN_RESOLVABLE {
            result.unresolvable += 1;
            continue;
        }
        let half = central_difference(&mut f, &mut work, coord, eps / 2.0)?;
        if (full - half).abs() > 1e-3 * full.abs() {
            result.non_smooth += 1;
            continue;
        }
        result.max_relative_error = result.max_relative_error.max(relative_error(analytic[p][flat], full));
        result.checked.push(coord);
    }
    Ok(result)
}
