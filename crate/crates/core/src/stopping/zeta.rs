use crate::error::{Error, Result};

const TERMS: usize = 20;

// B_{2k} / (2k)! for k = 1..=6
const BERNOULLI_OVER_FACT: [f64; 6] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
];

/// Riemann zeta function for real `s > 1`.
///
/// Euler-Maclaurin summation: 19 leading terms, the integral tail from 20 and
/// six correction terms.
pub fn riemann_zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::Usage(format!("zeta requires s > 1, got {s}")));
    }
    let big_n = TERMS as f64;
    let head: f64 = (1..TERMS).rev().map(|n| (n as f64).powf(-s)).sum();
    let mut total = head + big_n.powf(1.0 - s) / (s - 1.0) + 0.5 * big_n.powf(-s);
    // rising factorial s (s+1) ... (s+2k-2) times N^{-s-2k+1}
    let mut rising = s;
    let mut power = big_n.powf(-s - 1.0);
    for (k, c) in BERNOULLI_OVER_FACT.iter().enumerate() {
        if k > 0 {
            let m = 2.0 * k as f64;
            rising *= (s + m - 1.0) * (s + m);
            power /= big_n * big_n;
        }
        total += c * rising * power;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let pi = std::f64::consts::PI;
        assert!((riemann_zeta(2.0).unwrap() - pi * pi / 6.0).abs() < 1e-14);
        assert!((riemann_zeta(1.5).unwrap() - 2.612_375_348_685_488).abs() < 1e-13);
        // zeta(4) = pi^4 / 90
        assert!((riemann_zeta(4.0).unwrap() - pi.powi(4) / 90.0).abs() < 1e-14);
    }

    #[test]
    fn pole_behaviour_and_domain() {
        // zeta(1 + e) ~ 1/e + Euler-Mascheroni
        let s = 1.0 + 1e-6;
        let gamma = 0.577_215_664_901_532_9;
        assert!((riemann_zeta(s).unwrap() - (1.0 / (s - 1.0) + gamma)).abs() < 1e-6);
        assert!(riemann_zeta(1.0).is_err());
        assert!(riemann_zeta(0.5).is_err());
        assert!(riemann_zeta(f64::NAN).is_err());
    }

    #[test]
    fn decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let z = riemann_zeta(1.0 + i as f64 / 100.0).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }
}
