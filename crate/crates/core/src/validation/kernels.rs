//! Closed-form values of the scalar kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ingest::{haversine, standardize, EARTH_RADIUS_MM};
use crate::model::spatial_correlation;
use crate::stochastics::expit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    /// Absolute; 0 means exact equality.
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &str, value: f64, expected: f64, tolerance: f64) -> KernelCheck {
    let passed = if tolerance == 0.0 {
        value == expected
    } else {
        (value - expected).abs() <= tolerance
    };
    KernelCheck {
        name: name.into(),
        value,
        expected,
        tolerance,
        passed,
    }
}

pub fn kernel_checks() -> Vec<KernelCheck> {
    let mut out = vec![
        check("rho(d=0)", spatial_correlation(0.0, 1.5), 1.0, 1e-12),
        check("rho(d=phi=1.5)", spatial_correlation(1.5, 1.5), (-1.0f64).exp(), 1e-12),
        check("rho(d=phi=0.3)", spatial_correlation(0.3, 0.3), (-1.0f64).exp(), 1e-12),
        check("haversine quarter meridian", haversine((0.0, 0.0), (90.0, 0.0)), PI * EARTH_RADIUS_MM / 2.0, 1e-4),
        check("haversine quarter equator", haversine((0.0, 0.0), (0.0, 90.0)), PI * EARTH_RADIUS_MM / 2.0, 1e-4),
        check("expit(0)", expit(0.0), 0.5, 0.0),
    ];
    match standardize(&[1.0, 2.0, 3.0]) {
        Ok(z) => {
            for (i, (v, e)) in z.iter().zip([-1.0, 0.0, 1.0]).enumerate() {
                out.push(check(&format!("standardize([1,2,3])[{i}]"), *v, e, 1e-12));
            }
        }
        Err(_) => out.push(check("standardize([1,2,3])", f64::NAN, 0.0, 1e-12)),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kernel_matches_its_closed_form() {
        for c in kernel_checks() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn exact_checks_reject_any_difference() {
        assert!(!check("x", 0.5 + f64::EPSILON, 0.5, 0.0).passed);
        assert!(check("x", 1.0 + 1e-13, 1.0, 1e-12).passed);
    }
}
