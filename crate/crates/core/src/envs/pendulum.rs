use std::f64::consts::PI;

use super::{clip_action, Transition};

pub(crate) const DT: f64 = 0.05;
pub(crate) const HORIZON: usize = 200;
const G: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const MAX_SPEED: f64 = 8.0;
const TORQUE_SCALE: f64 = 2.0;

/// Maps an angle into `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Underactuated pendulum on observation `(cos θ, sin θ, θ̇)` with `θ = 0`
/// upright. The reward is charged on the pre-step state and torque.
pub fn pendulum_step(s: &[f64], a: &[f64]) -> Transition {
    assert_eq!(s.len(), 3, "pendulum state is (cos θ, sin θ, θ̇)");
    assert_eq!(a.len(), 1, "pendulum action is 1-D");
    let a = clip_action(a);
    let u = TORQUE_SCALE * a[0];
    let theta = s[1].atan2(s[0]);
    let theta_dot = s[2];
    let accel = 3.0 * G / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let new_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = theta + new_dot * DT;
    let wrapped = wrap_angle(theta);
    let true_r = -(wrapped * wrapped + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    Transition {
        s: s.to_vec(),
        a,
        s_next: vec![new_theta.cos(), new_theta.sin(), new_dot],
        true_r,
        done: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_is_a_fixed_point() {
        let t = pendulum_step(&[1.0, 0.0, 0.0], &[0.0]);
        assert_eq!(t.s_next, vec![1.0, 0.0, 0.0]);
        assert_eq!(t.true_r, 0.0);
    }

    #[test]
    fn hanging_bottom_is_at_rest() {
        let s = [PI.cos(), PI.sin(), 0.0];
        let t = pendulum_step(&s, &[0.0]);
        for (a, b) in t.s_next.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.true_r + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn observation_stays_on_circle() {
        let mut s = vec![0.3f64.cos(), 0.3f64.sin(), 0.0];
        for k in 0..500 {
            let a = [((k as f64) * 0.37).sin() * 3.0];
            s = pendulum_step(&s, &a).s_next;
            assert!((s[0] * s[0] + s[1] * s[1] - 1.0).abs() < 1e-9);
            assert!(s[2].abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn wrap_range() {
        for x in [-10.0, -PI, 0.0, 3.0, PI, 7.5] {
            let w = wrap_angle(x);
            assert!((-PI..PI).contains(&w));
            assert!((x.cos() - w.cos()).abs() < 1e-12 && (x.sin() - w.sin()).abs() < 1e-12);
        }
    }
}
