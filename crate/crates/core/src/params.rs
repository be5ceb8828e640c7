//! Vehicle parameters, operating bounds and the linear lateral-yaw model.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// kg
    pub m: f64,
    /// front cornering stiffness, N/rad
    pub cf: f64,
    /// rear cornering stiffness, N/rad
    pub cr: f64,
    /// CG to front axle, m
    pub a: f64,
    /// CG to rear axle, m
    pub b: f64,
    /// yaw inertia, kg·m²
    pub iz: f64,
    /// rolling resistance, N
    pub c0: f64,
    /// N·s/m
    pub c1: f64,
    /// N·s²/m²
    pub c2: f64,
    /// m/s²
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            m: 1650.0,
            cf: 133000.0,
            cr: 98800.0,
            a: 1.11,
            b: 1.59,
            iz: 2315.3,
            c0: 51.0,
            c1: 1.26,
            c2: 0.4342,
            g: 9.81,
        }
    }
}

impl VehicleParams {
    /// Drag `F_r(v) = c0 + c1·v + c2·v²`, N.
    pub fn drag(&self, v: f64) -> f64 {
        self.c0 + self.c1 * v + self.c2 * v * v
    }

    pub fn drag_slope(&self, v: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * v
    }

    /// `A1(v_f)` of the lateral-yaw model over `(y, ν, Δψ, r)`.
    #[rustfmt::skip]
    pub fn a1(&self, vf: f64) -> Matrix4<f64> {
        let (m, cf, cr, a, b, iz) = (self.m, self.cf, self.cr, self.a, self.b, self.iz);
        Matrix4::new(
            0.0, 1.0, vf, 0.0,
            0.0, -(cf + cr) / (m * vf), 0.0, (b * cr - a * cf) / (m * vf) - vf,
            0.0, 0.0, 0.0, 1.0,
            0.0, (b * cr - a * cf) / (iz * vf), 0.0, -(a * a * cf + b * b * cr) / (iz * vf),
        )
    }

    pub fn b1(&self) -> Vector4<f64> {
        Vector4::new(0.0, self.cf / self.m, 0.0, self.a * self.cf / self.iz)
    }

    pub fn e1(&self) -> Vector4<f64> {
        Vector4::new(0.0, 0.0, -1.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("m", self.m),
            ("cf", self.cf),
            ("cr", self.cr),
            ("a", self.a),
            ("b", self.b),
            ("iz", self.iz),
            ("g", self.g),
        ];
        for (k, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("vehicle.{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("vehicle.{k} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// State, input and disturbance bounds of both subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    /// m
    pub y_m: f64,
    /// m/s
    pub nu_m: f64,
    /// rad
    pub dpsi_m: f64,
    /// rad/s
    pub r_m: f64,
    /// steering bound, rad
    pub delta_f: f64,
    /// road yaw-rate disturbance bound, rad/s
    pub d_max: f64,
    /// m/s
    pub v_lo: f64,
    /// m/s
    pub v_hi: f64,
    /// follower braking, fraction of g
    pub a_f: f64,
    /// follower acceleration, fraction of g
    pub a_f_acc: f64,
    /// lead braking, fraction of g
    pub a_l: f64,
    /// lead acceleration, fraction of g
    pub a_l_acc: f64,
    /// s
    pub tau_d: f64,
    /// m
    pub d0: f64,
    /// desired speed, m/s
    pub v_d: f64,
    /// lateral acceleration comfort bound, m/s²
    pub nu_dot_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            y_m: 0.9,
            nu_m: 1.0,
            dpsi_m: 0.05,
            r_m: 0.3,
            delta_f: 0.06,
            d_max: 0.1,
            v_lo: 15.0,
            v_hi: 30.0,
            a_f: 0.25,
            a_f_acc: 0.25,
            a_l: 0.25,
            a_l_acc: 0.25,
            tau_d: 1.8,
            d0: 0.1,
            v_d: 22.0,
            nu_dot_max: 0.25,
        }
    }
}

impl Bounds {
    pub fn lateral(&self) -> [f64; 4] {
        [self.y_m, self.nu_m, self.dpsi_m, self.r_m]
    }

    /// `ν_m·r_m`, the coupling bound the ACC side assumes.
    pub fn nu_r_max(&self) -> f64 {
        self.nu_m * self.r_m
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("y_m", self.y_m),
            ("nu_m", self.nu_m),
            ("dpsi_m", self.dpsi_m),
            ("r_m", self.r_m),
            ("d_max", self.d_max),
            ("v_lo", self.v_lo),
            ("a_f", self.a_f),
            ("a_f_acc", self.a_f_acc),
            ("a_l", self.a_l),
            ("a_l_acc", self.a_l_acc),
            ("tau_d", self.tau_d),
            ("v_d", self.v_d),
            ("nu_dot_max", self.nu_dot_max),
        ];
        for (k, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("bounds.{k} must be positive, got {v}"));
            }
        }
        if !(self.delta_f.is_finite() && self.delta_f >= 0.0) {
            return Err(format!("bounds.delta_f must be nonnegative, got {}", self.delta_f));
        }
        if !(self.d0.is_finite() && self.d0 >= 0.0) {
            return Err(format!("bounds.d0 must be nonnegative, got {}", self.d0));
        }
        if !(self.v_hi > self.v_lo) {
            return Err(format!("bounds.v_hi ({}) must exceed v_lo ({})", self.v_hi, self.v_lo));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drag_at_22() {
        let p = VehicleParams::default();
        assert!((p.drag(22.0) - (51.0 + 27.72 + 210.1528)).abs() < 1e-9);
    }

    #[test]
    fn b1_entries() {
        let p = VehicleParams::default();
        let b = p.b1();
        assert!((b[1] - 133000.0 / 1650.0).abs() < 1e-12);
        assert!((b[3] - 1.11 * 133000.0 / 2315.3).abs() < 1e-12);
    }
}
