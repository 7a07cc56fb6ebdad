//! Analytic flow fields: the decaying Taylor–Green vortex and
//! superposed Lamb–Oseen vortices with point-vortex dynamics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Taylor–Green velocity and exact pressure at `point` and time `t`.
pub fn taylor_green(point: [f64; 2], t: f64, u: f64, nu: f64) -> ([f64; 2], f64) {
    let [x, y] = point;
    let dv = (-2.0 * nu * PI * PI * t).exp();
    let dp = (-4.0 * nu * PI * PI * t).exp();
    let v = [
        u * (PI * x).sin() * (PI * y).cos() * dv,
        -u * (PI * x).cos() * (PI * y).sin() * dv,
    ];
    let p = 0.25 * u * u * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) * dp;
    (v, p)
}

/// Lamb–Oseen vortex: circulation `gamma`, Gaussian core radius `core`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub center: [f64; 2],
    pub gamma: f64,
    pub core: f64,
}

impl Vortex {
    /// Velocity induced at `point`; zero at the center.
    pub fn velocity(&self, point: [f64; 2]) -> [f64; 2] {
        let dx = point[0] - self.center[0];
        let dy = point[1] - self.center[1];
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return [0.0, 0.0];
        }
        // u_θ / r = Γ/(2π r²) (1 − e^{−r²/r_c²}), finite as r → 0
        let s = -(-r2 / (self.core * self.core)).exp_m1() * self.gamma / (2.0 * PI * r2);
        [-s * dy, s * dx]
    }
}

/// Superposed velocity and the synthetic pseudo-pressure `−½‖v‖²`.
pub fn vortex_field(point: [f64; 2], vortices: &[Vortex]) -> ([f64; 2], f64) {
    let mut v = [0.0, 0.0];
    for w in vortices {
        let u = w.velocity(point);
        v[0] += u[0];
        v[1] += u[1];
    }
    (v, -0.5 * (v[0] * v[0] + v[1] * v[1]))
}

/// Velocity of every center induced by all other vortices.
fn center_velocities(centers: &[[f64; 2]], vortices: &[Vortex]) -> Vec<[f64; 2]> {
    (0..vortices.len())
        .map(|i| {
            let mut v = [0.0, 0.0];
            for (j, w) in vortices.iter().enumerate() {
                if j != i {
                    let u = Vortex {
                        center: centers[j],
                        ..*w
                    }
                    .velocity(centers[i]);
                    v[0] += u[0];
                    v[1] += u[1];
                }
            }
            v
        })
        .collect()
}

/// One RK4 step of point-vortex dynamics; circulations and cores are kept.
pub fn vortex_system_step(vortices: &[Vortex], dt: f64) -> Vec<Vortex> {
    let x0: Vec<[f64; 2]> = vortices.iter().map(|v| v.center).collect();
    let shifted = |k: &[[f64; 2]], h: f64| -> Vec<[f64; 2]> {
        x0.iter()
            .zip(k)
            .map(|(x, k)| [x[0] + h * k[0], x[1] + h * k[1]])
            .collect()
    };
    let k1 = center_velocities(&x0, vortices);
    let k2 = center_velocities(&shifted(&k1, dt / 2.0), vortices);
    let k3 = center_velocities(&shifted(&k2, dt / 2.0), vortices);
    let k4 = center_velocities(&shifted(&k3, dt), vortices);
    vortices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = v.center;
            for d in 0..2 {
                c[d] += dt / 6.0 * (k1[i][d] + 2.0 * k2[i][d] + 2.0 * k3[i][d] + k4[i][d]);
            }
            Vortex { center: c, ..*v }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn taylor_green_point_values() {
        let (v, p) = taylor_green([0.5, 0.5], 0.0, 1.0, 0.01);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!((p + 0.5).abs() < 1e-15);
        let (v, p) = taylor_green([0.25, 0.25], 0.0, 1.0, 0.01);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] + 0.5).abs() < 1e-15);
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn taylor_green_decay_rate() {
        let (nu, t, h) = (0.03, 0.7, 1e-5);
        for x in [[0.1, 0.3], [0.6, 0.45], [0.9, 0.05]] {
            let (v, _) = taylor_green(x, t, 1.3, nu);
            let (vp, _) = taylor_green(x, t + h, 1.3, nu);
            let (vm, _) = taylor_green(x, t - h, 1.3, nu);
            for c in 0..2 {
                let dvdt = (vp[c] - vm[c]) / (2.0 * h);
                assert!((dvdt + 2.0 * nu * PI * PI * v[c]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn taylor_green_is_divergence_free(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let h = 1e-4;
            let f = |p| taylor_green(p, 0.2, 1.0, 0.01).0;
            let div = (f([x + h, y])[0] - f([x - h, y])[0]) / (2.0 * h)
                + (f([x, y + h])[1] - f([x, y - h])[1]) / (2.0 * h);
            // central differences are exact up to O(h²) ≈ π³h² terms
            prop_assert!(div.abs() < 10.0 * h * h);
        }
    }

    #[test]
    fn vortex_center_and_far_field() {
        let w = Vortex {
            center: [0.3, -0.2],
            gamma: 0.8,
            core: 0.05,
        };
        assert_eq!(vortex_field(w.center, &[w]).0, [0.0, 0.0]);
        // just off the center the profile is solid-body rotation
        let v = w.velocity([0.3 + 1e-9, -0.2]);
        let solid = 0.8 / (2.0 * PI * 0.05 * 0.05) * 1e-9;
        assert!((v[1] - solid).abs() < 1e-6 * solid);
        let r = 1e3 * w.core;
        let (v, p) = vortex_field([0.3 + r, -0.2], &[w]);
        let speed = v[0].hypot(v[1]);
        assert!((speed - 0.8 / (2.0 * PI * r)).abs() < 1e-12);
        assert!((p + 0.5 * speed * speed).abs() < 1e-18);
    }

    #[test]
    fn symmetric_counter_rotating_pair_flows_along_axis() {
        let pair = [
            Vortex {
                center: [-0.4, 0.1],
                gamma: 1.0,
                core: 0.1,
            },
            Vortex {
                center: [0.4, 0.1],
                gamma: -1.0,
                core: 0.1,
            },
        ];
        for y in [-2.0, -0.3, 0.1, 0.5, 3.0] {
            let (v, _) = vortex_field([0.0, y], &pair);
            assert!(v[0].abs() < 1e-15, "v = {v:?} at y = {y}");
            assert!(v[1].abs() > 0.0);
        }
    }

    #[test]
    fn single_vortex_is_stationary() {
        let w = [Vortex {
            center: [1.0, 2.0],
            gamma: 3.0,
            core: 0.2,
        }];
        assert_eq!(vortex_system_step(&w, 0.1), w.to_vec());
    }

    #[test]
    fn co_rotating_pair_circles_its_center_of_circulation() {
        let mut w = vec![
            Vortex {
                center: [-0.5, 0.0],
                gamma: 1.0,
                core: 0.01,
            },
            Vortex {
                center: [0.5, 0.0],
                gamma: 1.0,
                core: 0.01,
            },
        ];
        let com = |w: &[Vortex]| {
            let g: f64 = w.iter().map(|v| v.gamma).sum();
            [0, 1].map(|d| w.iter().map(|v| v.gamma * v.center[d]).sum::<f64>() / g)
        };
        let c0 = com(&w);
        for _ in 0..100 {
            w = vortex_system_step(&w, 0.05);
            let c = com(&w);
            assert!((c[0] - c0[0]).abs() < 1e-9 && (c[1] - c0[1]).abs() < 1e-9);
            let sep = (w[0].center[0] - w[1].center[0]).hypot(w[0].center[1] - w[1].center[1]);
            assert!((sep - 1.0).abs() < 1e-6);
        }
        // the pair has rotated: angular speed Γ/(π d²)
        let angle = (w[1].center[1] - w[0].center[1]).atan2(w[1].center[0] - w[0].center[0]);
        assert!((angle - 100.0 * 0.05 / PI).abs() < 1e-6);
    }

    #[test]
    fn dipole_translates_at_classical_speed() {
        let (gamma, d) = (1.0, 0.2);
        let mut w = vec![
            Vortex {
                center: [-d / 2.0, 0.0],
                gamma,
                core: 0.002,
            },
            Vortex {
                center: [d / 2.0, 0.0],
                gamma: -gamma,
                core: 0.002,
            },
        ];
        let dt = 1e-3 * 2.0 * PI * d * d / gamma;
        for _ in 0..100 {
            w = vortex_system_step(&w, dt);
        }
        let speed = gamma / (2.0 * PI * d);
        let moved = w[0].center[1];
        // the clockwise right vortex lifts the left one, and vice versa
        assert!(((moved / (100.0 * dt)) - speed).abs() / speed < 5e-3);
        assert!(moved > 0.0 && (w[0].center[1] - w[1].center[1]).abs() < 1e-12);
    }
}
