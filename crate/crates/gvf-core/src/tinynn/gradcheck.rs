//! Central finite-difference verification of analytic gradients.

use nalgebra::DMatrix;

use super::DenseNet;

/// Pre-activation magnitudes below this sit on a ReLU kink, where a finite
/// difference straddles the nondifferentiable point and the comparison is
/// not meaningful.
pub const KINK_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    /// Smallest pre-activation magnitude seen at the evaluation point.
    pub min_abs_preactivation: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// Whether the evaluation point sits too close to a ReLU kink for the
    /// finite-difference comparison to be trusted.
    pub fn near_kink(&self) -> bool {
        self.min_abs_preactivation < KINK_THRESHOLD
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central finite differences of `loss_at`
/// around `params`.
pub fn grad_check_flat(
    params: &[f64],
    analytic: &[f64],
    mut loss_at: impl FnMut(&[f64]) -> f64,
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut point = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_param = None;
    for i in 0..point.len() {
        let original = point[i];
        point[i] = original + step;
        let plus = loss_at(&point);
        point[i] = original - step;
        let minus = loss_at(&point);
        point[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[i], numeric);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_param = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_param,
        checked: point.len(),
        tolerance,
        min_abs_preactivation: f64::INFINITY,
    }
}

/// Checks every parameter of `net` against finite differences of the loss.
///
/// `loss` maps the network output for `input` to a scalar loss and the loss
/// gradient with respect to that output.
pub fn grad_check_net<L>(
    net: &DenseNet,
    input: &DMatrix<f64>,
    loss: L,
    tolerance: f64,
) -> GradCheckReport
where
    L: Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>),
{
    let (output, tape) = net.forward(input).expect("input matches net");
    let min_abs_preactivation = tape.min_abs_preactivation();
    let (_, output_grad) = loss(&output);
    let (grads, _) = net.backward(&tape, &output_grad);
    let analytic = DenseNet::flat_grads(&grads);
    let params = net.flat_params();

    let mut probe = net.clone();
    let mut report = grad_check_flat(
        &params,
        &analytic,
        |p| {
            probe.set_flat_params(p);
            let out = probe.output(input).expect("input matches net");
            loss(&out).0
        },
        1e-5,
        tolerance,
    );
    report.min_abs_preactivation = min_abs_preactivation;
    report
}
