#![allow(dead_code)]

use diffail::numerics::Tensor;

/// Relative error for gradient checks.
pub const TOL_GRAD: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖, ‖n‖)` per tensor, maximised over tensors. Tensors
/// whose gradients are both below `1e-10` in norm count as exact.
pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            assert_eq!(a.shape(), n.shape());
            let diff: Vec<f64> = a.data().iter().zip(n.data()).map(|(x, y)| x - y).collect();
            let scale = norm(a.data()).max(norm(n.data()));
            if scale < 1e-10 {
                0.0
            } else {
                norm(&diff) / scale
            }
        })
        .fold(0.0, f64::max)
}

pub mod gradcheck;
pub mod diffusion_checks;
pub mod format_checks;
