//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::{DiffError, DiffResult};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter coordinate where the worst error occurred.
    pub worst: String,
}

/// Scale floor for the relative-error denominator. Central differences at
/// ε = 1e-5 carry ~1e-11 absolute truncation noise, so genuinely tiny
/// gradients are compared against this floor instead of each other.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Relative error with a floor that absorbs finite-difference noise when both
/// gradients are essentially zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Verify analytic gradients of a scalar loss against central differences.
///
/// `eval(params, want_grad)` returns the loss value and, when asked, the full
/// gradient map. The loss must be deterministic (dropout off); this is
/// enforced by evaluating twice. At least one coordinate of every parameter
/// tensor is sampled, and sampling continues round-robin until `min_samples`
/// coordinates have been checked.
pub fn finite_difference_check<F>(
    params: &ParamStore<f64>,
    eval: F,
    eps: f64,
    min_samples: usize,
    seed: u64,
) -> DiffResult<FdReport>
where
    F: Fn(&ParamStore<f64>, bool) -> DiffResult<(f64, Option<BTreeMap<String, Vec<f64>>>)>,
{
    let (v1, grads) = eval(params, true)?;
    let (v2, _) = eval(params, false)?;
    if v1 != v2 {
        return Err(DiffError::NonDeterministic);
    }
    let grads = grads.ok_or_else(|| DiffError::NonFinite("missing analytic gradients".into()))?;

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // coordinate schedule: sweep tensors round-robin with random offsets
    let mut samples: Vec<(String, usize)> = Vec::new();
    let mut round = 0usize;
    while samples.len() < min_samples.max(names.len()) {
        let mut added = false;
        for name in &names {
            let len = params.get(name)?.len();
            if round < len {
                let coord = rng.random_range(0..len);
                samples.push((name.clone(), coord));
                added = true;
            }
            if samples.len() >= min_samples.max(names.len()) && round > 0 {
                break;
            }
        }
        if !added {
            break;
        }
        round += 1;
    }

    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for (name, coord) in &samples {
        let orig = work.get(name)?.data[*coord];
        work.get_mut(name)?.data[*coord] = orig + eps;
        let (fp, _) = eval(&work, false)?;
        work.get_mut(name)?.data[*coord] = orig - eps;
        let (fm, _) = eval(&work, false)?;
        work.get_mut(name)?.data[*coord] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = grads.get(name).map(|g| g[*coord]).unwrap_or(0.0);
        let rel = relative_error(analytic, numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{name}[{coord}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
    Ok(FdReport {
        max_rel_err: max_rel,
        checked: samples.len(),
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::Init;
    use crate::diff::Tape;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::<f64>::new();
        ps.register("x", 1, 8, Init::UniformFanIn { fan_in: 1 }, &mut rng);
        let eval = |p: &ParamStore<f64>, grad: bool| {
            let tape = Tape::new(0);
            let b = p.bind(&tape)?;
            let x = b.var("x")?;
            let shifted = tape.add_scalar(x, -3.0);
            let sq = tape.mul(shifted, shifted)?;
            let loss = tape.sum_all(sq);
            let v = tape.value_scalar(loss);
            if grad {
                tape.backward(loss)?;
                Ok((v, Some(p.grads(&tape, &b))))
            } else {
                Ok((v, None))
            }
        };
        let report = finite_difference_check(&ps, eval, 1e-5, 64, 1).unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");
    }

    #[test]
    fn dropout_enabled_loss_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::<f64>::new();
        ps.register("x", 1, 16, Init::Const(0.5), &mut rng);
        use std::cell::Cell;
        let call: Cell<u64> = Cell::new(0);
        let eval = move |p: &ParamStore<f64>, grad: bool| {
            // emulate dropout randomness with a per-call seed
            call.set(call.get() + 1);
            let tape = Tape::new(call.get());
            let b = p.bind(&tape)?;
            let x = b.var("x")?;
            let y = tape.dropout(x, 0.5, true)?;
            let loss = tape.mean_all(y)?;
            let v = tape.value_scalar(loss);
            if grad {
                tape.backward(loss)?;
                Ok((v, Some(p.grads(&tape, &b))))
            } else {
                Ok((v, None))
            }
        };
        assert!(matches!(
            finite_difference_check(&ps, eval, 1e-5, 8, 1),
            Err(DiffError::NonDeterministic)
        ));
    }

    /// Randomly composed graphs of a handful of primitives stay under the
    /// 1e-6 relative-error bar.
    #[test]
    fn random_composites_match_fd() {
        for trial in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let mut ps = ParamStore::<f64>::new();
            ps.register("w", 3, 4, Init::UniformFanIn { fan_in: 4 }, &mut rng);
            let ops: Vec<u8> = (0..6).map(|_| rng.random_range(0..6)).collect();
            let eval = |p: &ParamStore<f64>, grad: bool| {
                let tape = Tape::new(0);
                let b = p.bind(&tape)?;
                let mut h = b.var("w")?;
                for &op in &ops {
                    h = match op {
                        0 => tape.silu(h),
                        1 => tape.sigmoid(h),
                        2 => {
                            let e = tape.exp(tape.scale(h, 0.3));
                            tape.log(e)
                        }
                        3 => tape.softmax_rows(h)?,
                        4 => {
                            let s = tape.add_scalar(h, 1.5);
                            tape.mul(h, s)?
                        }
                        _ => tape.huber(h, 0.8),
                    };
                }
                let loss = tape.mean_all(h)?;
                let v = tape.value_scalar(loss);
                if grad {
                    tape.backward(loss)?;
                    Ok((v, Some(p.grads(&tape, &b))))
                } else {
                    Ok((v, None))
                }
            };
            let report = finite_difference_check(&ps, eval, 1e-5, 12, trial).unwrap();
            assert!(report.max_rel_err < 1e-6, "trial {trial}: {report:?}");
        }
    }
}
