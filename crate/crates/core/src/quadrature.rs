//! Gauss-Hermite nodes and weights for `int exp(-x^2) f(x) dx`.

/// `pi^(-1/4)`
const PI_M4: f64 = 0.751_125_544_464_942_5;

/// Nodes (descending) and weights of the `n`-point rule, found by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PI_M4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let prev = z;
            z = prev - p1 / pp;
            if (z - prev).abs() <= 3e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn moments_are_exact() {
        let (x, w) = gauss_hermite(16);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        let sp = PI.sqrt();
        assert!((m(0) - sp).abs() < 1e-12);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - sp / 2.0).abs() < 1e-12);
        assert!((m(4) - 3.0 * sp / 4.0).abs() < 1e-11);
        assert!((m(10) - 945.0 * sp / 32.0).abs() < 1e-8);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn small_rules() {
        let (x, w) = gauss_hermite(1);
        assert!(x[0].abs() < 1e-12 && (w[0] - PI.sqrt()).abs() < 1e-12);
        let (x, _) = gauss_hermite(2);
        assert!((x[0] - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
