use super::tensor::Tensor;
use super::NumericsError;

/// A named, ordered view over a model's parameter tensors. Gradient buffers,
/// optimizer state, and checkpoints all follow this order.
pub trait ParamTensors {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    /// Total number of scalar entries across all parameter tensors.
    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like the parameters, for gradient accumulation.
    fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }
}

impl ParamTensors for Vec<Tensor> {
    fn params(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("p{i}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub epsilon: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} entries, max rel err {:.3e} (tol {:.1e})",
            self.checked, self.max_rel_error, self.tol
        )?;
        if let Some((name, idx, a, n)) = &self.worst {
            write!(f, ", worst at {name}[{idx}]: analytic {a:.6e} vs numeric {n:.6e}")?;
        }
        Ok(())
    }
}

/// Central-difference check of `analytic` against `f`, perturbing every
/// parameter entry by +/- epsilon. `f` must be a deterministic function of the
/// parameters and is evaluated from scratch on each call, so this stays
/// independent of whatever code produced `analytic`.
///
/// The relative error for one entry is |a - n| / max(|a| + |n|, 1e-6); the
/// floor keeps noise in near-zero gradients from dominating the report.
pub fn finite_diff_check<P, F>(
    params: &mut P,
    analytic: &[Tensor],
    mut f: F,
    epsilon: f64,
    tol: f64,
) -> Result<GradCheckReport, NumericsError>
where
    P: ParamTensors,
    F: FnMut(&P) -> Result<f64, NumericsError>,
{
    if !(epsilon > 0.0) {
        return Err(NumericsError::InvalidArgument {
            what: format!("finite_diff_check epsilon must be positive, got {epsilon}"),
        });
    }
    let shapes: Vec<(usize, usize)> = params.params().iter().map(|t| t.shape()).collect();
    if analytic.len() != shapes.len()
        || analytic.iter().zip(shapes.iter()).any(|(t, s)| t.shape() != *s)
    {
        return Err(NumericsError::InvalidArgument {
            what: "analytic gradients do not line up with the parameter tensors".to_string(),
        });
    }
    let names = params.param_names();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        epsilon,
        tol,
    };

    let n_tensors = shapes.len();
    for ti in 0..n_tensors {
        for idx in 0..analytic[ti].len() {
            let saved = params.params()[ti].data()[idx];

            params.params_mut()[ti].data_mut()[idx] = saved + epsilon;
            let up = f(params)?;
            params.params_mut()[ti].data_mut()[idx] = saved - epsilon;
            let down = f(params)?;
            params.params_mut()[ti].data_mut()[idx] = saved;

            if !up.is_finite() || !down.is_finite() {
                return Err(NumericsError::NonFinite {
                    context: format!("finite_diff_check objective at {}[{idx}]", names[ti]),
                });
            }

            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[ti].data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs()).max(1e-6);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((names[ti].clone(), idx, a, numeric));
            }
        }
    }
    Ok(report)
}
