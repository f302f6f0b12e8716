use super::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(TensorError::Evaluation(format!(
            "objective has shape {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(TensorError::Evaluation("objective is not finite".into()));
    }
    Ok((tape, vars, out))
}

/// Compares tape gradients of a scalar objective against central
/// differences for every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = evaluate(&f, params)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf grads populated").to_vec())
        .collect();

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        tol: config.tol,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            param: pi,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (j, &a) in grads.iter().enumerate() {
            let original = probe[pi].data()[j];
            probe[pi].data_mut()[j] = original + config.eps;
            let plus = evaluate(&f, &probe)?;
            let plus = plus.0.value(plus.2).item();
            probe[pi].data_mut()[j] = original - config.eps;
            let minus = evaluate(&f, &probe)?;
            let minus = minus.0.value(minus.2).item();
            probe[pi].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * config.eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            if rel > check.max_rel_error {
                check = ParamCheck {
                    param: pi,
                    max_rel_error: rel,
                    worst_entry: j,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
