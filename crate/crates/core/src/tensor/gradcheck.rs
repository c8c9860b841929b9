use super::{Real, Tape, Tensor, TensorError, Var};

/// One compared coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    /// Every compared coordinate, in parameter order.
    pub entries: Vec<GradEntry>,
    pub checked: usize,
    /// Coordinates where a ±eps step crosses a branch point (ReLU sign,
    /// max-pool argmax, log clamp) and no two-sided derivative exists.
    pub skipped: usize,
}

/// Central-difference check of `f`'s gradient with respect to `params`.
///
/// `f` receives a fresh tape and one leaf per parameter and must return a
/// scalar. Relative error per coordinate is
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: T) -> Result<GradCheckReport, TensorError>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_, T>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let base_sig = tape.signature();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = leaves
        .iter()
        .zip(params)
        .map(|(l, p)| grads.get_or_zeros(*l, p.shape()))
        .collect();

    let eval = |perturbed: &[Tensor<T>]| -> Result<(T, u64), TensorError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok((out.value().item(), tape.signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        entries: Vec::new(),
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.data().len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let (fp, sp) = eval(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let (fm, sm) = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm).as_f64() / (2.0 * eps.as_f64());
            let a = analytic[pi].data()[k].as_f64();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            report.entries.push(GradEntry {
                param: pi,
                index: k,
                analytic: a,
                numeric,
                rel_error: rel,
            });
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, k));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
