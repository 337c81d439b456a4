use super::{clip_action, Transition};

pub(crate) const DT: f64 = 0.05;
pub(crate) const HORIZON: usize = 200;

/// Double integrator: `p′ = p + dt·v`, `v′ = v + dt·a`, on state `(p, v) ∈ R⁴`.
pub fn pointmass_step(s: &[f64], a: &[f64]) -> Transition {
    assert_eq!(s.len(), 4, "pointmass state is (px, py, vx, vy)");
    assert_eq!(a.len(), 2, "pointmass action is 2-D");
    let a = clip_action(a);
    let p = [s[0] + DT * s[2], s[1] + DT * s[3]];
    let v = [s[2] + DT * a[0], s[3] + DT * a[1]];
    let true_r = -((p[0] * p[0] + p[1] * p[1])
        + 0.1 * (v[0] * v[0] + v[1] * v[1])
        + 0.01 * (a[0] * a[0] + a[1] * a[1]));
    Transition {
        s: s.to_vec(),
        s_next: vec![p[0], p[1], v[0], v[1]],
        a,
        true_r,
        done: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_a_fixed_point() {
        let t = pointmass_step(&[0.0; 4], &[0.0, 0.0]);
        assert_eq!(t.s_next, vec![0.0; 4]);
        assert_eq!(t.true_r, 0.0);
    }

    #[test]
    fn resting_offset() {
        let t = pointmass_step(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(t.s_next, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.true_r, -1.0);
    }

    #[test]
    fn actions_are_clipped() {
        let a = pointmass_step(&[0.3, -0.2, 0.1, 0.5], &[5.0, 0.0]);
        let b = pointmass_step(&[0.3, -0.2, 0.1, 0.5], &[1.0, 0.0]);
        assert_eq!(a, b);
        assert_eq!(a.a, vec![1.0, 0.0]);
    }
}
