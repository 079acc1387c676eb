//! Gaussian quadrature rules on the reference triangle.
//!
//! The reference triangle is `{(x, y) : x >= 0, y >= 0, x + y <= 1}` with
//! area 1/2. Weights returned by [`quad_rule`] sum to the reference area, so
//! an integral over a physical triangle is `sum_m w_m |det J| f(x_m)`.

use crate::error::{Error, Result};

/// A symmetric quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Polynomial degree integrated exactly.
    pub degree: usize,
    /// Points in reference coordinates.
    pub points: Vec<[f64; 2]>,
    /// Weights; they sum to 1/2.
    pub weights: Vec<f64>,
}

/// Returns a rule exact for polynomials of total degree `degree`.
///
/// Supported degrees: 2 (3 points), 4 (6 points), 6 (12 points) and
/// 8 (25 points, a collapsed 5x5 Gauss-Legendre tensor rule that is exact
/// through degree 9).
pub fn quad_rule(degree: usize) -> Result<QuadRule> {
    let (points, weights) = match degree {
        2 => rule_deg2(),
        4 => rule_deg4(),
        6 => rule_deg6(),
        8 => rule_deg8(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported quadrature degree {degree} (use 2, 4, 6 or 8)"
            )))
        }
    };
    let mut rule = QuadRule { degree, points, weights };
    // Published constants carry O(1e-15) rounding; rescale so the weight sum
    // is the reference area to machine precision.
    let sum: f64 = rule.weights.iter().sum();
    let scale = 0.5 / sum;
    for w in &mut rule.weights {
        *w *= scale;
    }
    Ok(rule)
}

/// Appends the three points with barycentric coordinates that are the cyclic
/// rotations of `(1 - 2a, a, a)`, each with weight `w`.
fn push_orbit3(pts: &mut Vec<[f64; 2]>, wts: &mut Vec<f64>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    // Reference coordinates are (x, y) = (l1, l2) with l0 = 1 - x - y.
    for bary in [[b, a, a], [a, b, a], [a, a, b]] {
        pts.push([bary[1], bary[2]]);
        wts.push(w);
    }
}

/// Appends the six permutations of the barycentric triple `(a, b, c)` with
/// `c = 1 - a - b`, each with weight `w`.
fn push_orbit6(pts: &mut Vec<[f64; 2]>, wts: &mut Vec<f64>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for bary in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push([bary[1], bary[2]]);
        wts.push(w);
    }
}

fn rule_deg2() -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    push_orbit3(&mut pts, &mut wts, 1.0 / 6.0, 1.0 / 6.0);
    (pts, wts)
}

fn rule_deg4() -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    // Tabulated weights are normalized to a unit area; halve for the
    // reference triangle.
    push_orbit3(&mut pts, &mut wts, 0.445948490915965, 0.223381589678011 / 2.0);
    push_orbit3(&mut pts, &mut wts, 0.091576213509771, 0.109951743655322 / 2.0);
    (pts, wts)
}

fn rule_deg6() -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    push_orbit3(&mut pts, &mut wts, 0.063089014491502, 0.050844906370207 / 2.0);
    push_orbit3(&mut pts, &mut wts, 0.249286745170910, 0.116786275726379 / 2.0);
    push_orbit6(
        &mut pts,
        &mut wts,
        0.053145049844816,
        0.310352451033785,
        0.082851075618374 / 2.0,
    );
    (pts, wts)
}

/// Collapsed tensor rule: `x = s`, `y = t (1 - s)` with 5-point
/// Gauss-Legendre rules in `s` and `t` and weight `w_s w_t (1 - s)`. The
/// Jacobian factor `(1 - s)` raises the `s` degree by one, so the rule is
/// exact for all monomials `x^i y^j` with `i + j <= 9`.
fn rule_deg8() -> (Vec<[f64; 2]>, Vec<f64>) {
    // 5-point Gauss-Legendre nodes and weights on [-1, 1].
    const GL_X: [f64; 5] = [
        -0.9061798459386640,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.9061798459386640,
    ];
    const GL_W: [f64; 5] = [
        0.2369268850561891,
        0.4786286704993665,
        0.5688888888888889,
        0.4786286704993665,
        0.2369268850561891,
    ];
    let node = |k: usize| 0.5 * (GL_X[k] + 1.0);
    let weight = |k: usize| 0.5 * GL_W[k];
    let mut pts = Vec::with_capacity(25);
    let mut wts = Vec::with_capacity(25);
    for i in 0..5 {
        let s = node(i);
        for j in 0..5 {
            let t = node(j);
            pts.push([s, t * (1.0 - s)]);
            wts.push(weight(i) * weight(j) * (1.0 - s));
        }
    }
    (pts, wts)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of `x^i y^j` over the reference triangle.
    fn monomial_integral(i: u32, j: u32) -> f64 {
        // i! j! / (i + j + 2)!
        let fact = |n: u32| -> f64 { (1..=n).map(f64::from).product::<f64>().max(1.0) };
        fact(i) * fact(j) / fact(i + j + 2)
    }

    fn integrate(rule: &QuadRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }

    #[test]
    fn weights_sum_to_reference_area() {
        for deg in [2, 4, 6, 8] {
            let rule = quad_rule(deg).unwrap();
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 0.5).abs() < 1e-15, "degree {deg}: weight sum {sum}");
        }
    }

    #[test]
    fn points_inside_reference_triangle() {
        for deg in [2, 4, 6, 8] {
            let rule = quad_rule(deg).unwrap();
            for p in &rule.points {
                assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn monomials_integrate_exactly_up_to_stated_degree() {
        for deg in [2usize, 4, 6, 8] {
            let rule = quad_rule(deg).unwrap();
            for i in 0..=deg as u32 {
                for j in 0..=(deg as u32 - i) {
                    let num = integrate(&rule, |x, y| x.powi(i as i32) * y.powi(j as i32));
                    let exact = monomial_integral(i, j);
                    assert!(
                        (num - exact).abs() <= 1e-14 * exact.max(1.0),
                        "degree {deg} rule, x^{i} y^{j}: got {num}, want {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn collapsed_tensor_rule_is_exact_at_its_stated_degree() {
        // The collapse maps x^i y^j to an s-polynomial of degree i + j + 1,
        // so the five-point tensor rule is exact exactly through total
        // degree 8.
        let rule = quad_rule(8).unwrap();
        for i in 0..=8u32 {
            let j = 8 - i;
            let num = integrate(&rule, |x, y| x.powi(i as i32) * y.powi(j as i32));
            let exact = monomial_integral(i, j);
            assert!(
                (num - exact).abs() <= 1e-15,
                "x^{i} y^{j}: got {num}, want {exact}"
            );
        }
    }

    #[test]
    fn specific_reference_values() {
        let rule = quad_rule(2).unwrap();
        let xy = integrate(&rule, |x, y| x * y);
        assert!((xy - 1.0 / 24.0).abs() < 1e-15);

        let rule = quad_rule(4).unwrap();
        let x4 = integrate(&rule, |x, _| x.powi(4));
        assert!((x4 - 1.0 / 30.0).abs() < 1e-14);
    }

    #[test]
    fn unsupported_degree_is_rejected() {
        assert!(quad_rule(3).is_err());
        assert!(quad_rule(10).is_err());
    }
}
