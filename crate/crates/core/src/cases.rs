//! Benchmark right-hand sides and the manufactured solution.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A labeled right-hand side f(x, y).
#[derive(Clone, Copy)]
pub struct RhsCase {
    pub label: &'static str,
    eval: fn(f64, f64) -> f64,
}

impl RhsCase {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }
}

fn f_one(x: f64, y: f64) -> f64 {
    2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
}

fn f_two(x: f64, y: f64) -> f64 {
    f_one(x, y) + 2.5 * PI * PI * (2.0 * PI * x).sin() * (PI * y).sin()
}

fn f_three(x: f64, y: f64) -> f64 {
    f_one(x, y)
        + 6.5 * PI * PI * (3.0 * PI * x).sin() * (2.0 * PI * y).sin()
        + 10.25 * PI * PI * (5.0 * PI * x).sin() * (4.0 * PI * y).sin()
}

fn f_four(x: f64, y: f64) -> f64 {
    let dx = x - 0.5;
    let dy = y - 0.5;
    (-(dx * dx + dy * dy) / 0.01).exp()
}

/// Manufactured exact solution; its negative Laplacian is case III.
pub fn exact_solution(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
        + 0.5 * (3.0 * PI * x).sin() * (2.0 * PI * y).sin()
        + 0.25 * (5.0 * PI * x).sin() * (4.0 * PI * y).sin()
}

/// Looks up a case by label: I, II, III, IV, or "manufactured".
pub fn rhs_case(label: &str) -> Result<RhsCase> {
    match label {
        "I" => Ok(RhsCase { label: "I", eval: f_one }),
        "II" => Ok(RhsCase { label: "II", eval: f_two }),
        "III" => Ok(RhsCase { label: "III", eval: f_three }),
        "IV" => Ok(RhsCase { label: "IV", eval: f_four }),
        // -Laplacian of the exact solution coincides with case III
        "manufactured" => Ok(RhsCase {
            label: "manufactured",
            eval: f_three,
        }),
        other => Err(Error::UnknownLabel(other.to_string())),
    }
}

/// The four benchmark cases in order.
pub fn benchmark_cases() -> [RhsCase; 4] {
    [
        rhs_case("I").unwrap(),
        rhs_case("II").unwrap(),
        rhs_case("III").unwrap(),
        rhs_case("IV").unwrap(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn printed_values_at_center() {
        let two_pi_sq = 2.0 * PI * PI;
        assert_relative_eq!(rhs_case("I").unwrap().eval(0.5, 0.5), two_pi_sq);
        // sin(pi) = 0 kills the second term of case II at the center
        assert_relative_eq!(
            rhs_case("II").unwrap().eval(0.5, 0.5),
            two_pi_sq,
            max_relative = 1e-13
        );
        assert_relative_eq!(rhs_case("IV").unwrap().eval(0.5, 0.5), 1.0);
    }

    #[test]
    fn manufactured_rhs_is_case_three() {
        let m = rhs_case("manufactured").unwrap();
        let c3 = rhs_case("III").unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.7, 0.3), (0.55, 0.91)] {
            assert_eq!(m.eval(x, y), c3.eval(x, y));
        }
    }

    #[test]
    fn manufactured_laplacian_identity() {
        // -Laplacian(u_ex) = f_III, checked by central differences
        let f = rhs_case("III").unwrap();
        let d = 1e-5;
        for &(x, y) in &[(0.31, 0.47), (0.62, 0.18)] {
            let lap = (exact_solution(x + d, y) + exact_solution(x - d, y)
                + exact_solution(x, y + d)
                + exact_solution(x, y - d)
                - 4.0 * exact_solution(x, y))
                / (d * d);
            assert_relative_eq!(-lap, f.eval(x, y), max_relative = 1e-4);
        }
    }

    #[test]
    fn unknown_label_rejected() {
        assert!(rhs_case("V").is_err());
    }
}
