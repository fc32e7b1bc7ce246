//! Welch's unequal-variance t-test with one-tailed p-values.

use serde::Serialize;

/// Above this many degrees of freedom the t distribution is replaced by the
/// standard normal; the tail error there stays below 1e-4.
pub const NORMAL_APPROX_DF: f64 = 2_000.0;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Complementary error function, fractional error below 1.2e-7.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if df > NORMAL_APPROX_DF {
        return normal_sf(t);
    }
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Which mean the alternative hypothesis says is larger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// H1: mean(a) > mean(b).
    Greater,
    /// H1: mean(a) < mean(b).
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelchTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// One-tailed Welch test. Both samples need at least two values.
pub fn welch_t_one_tailed(a: &[f64], b: &[f64], tail: Tail) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let diff = ma - mb;
    let (t, df) = if se2 == 0.0 {
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        (t, (a.len() + b.len() - 2) as f64)
    } else {
        let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
        (diff / se2.sqrt(), df)
    };
    let p = match tail {
        Tail::Greater => student_t_sf(t, df),
        Tail::Less => student_t_sf(-t, df),
    };
    Some(WelchTest {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_integers_and_half() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        assert!((incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-13);
        assert!((incomplete_beta(3.0, 1.0, 0.6) - 0.216).abs() < 1e-13);
        assert!(
            (incomplete_beta(2.5, 4.0, 0.4) + incomplete_beta(4.0, 2.5, 0.6) - 1.0).abs() < 1e-13
        );
    }

    #[test]
    fn t_tails() {
        // df = 1 is Cauchy: P(T > 1) = 1/4.
        assert!((student_t_sf(1.0, 1.0) - 0.25).abs() < 1e-12);
        // df = 2: P(T > t) = (1 - t / sqrt(2 + t^2)) / 2.
        let t: f64 = 1.7;
        assert!((student_t_sf(t, 2.0) - 0.5 * (1.0 - t / (2.0 + t * t).sqrt())).abs() < 1e-12);
        assert_eq!(student_t_sf(0.0, 9.0), 0.5);
        assert!((student_t_sf(-2.0, 5.0) + student_t_sf(2.0, 5.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_switch_is_smooth() {
        for t in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let exact = 0.5 * incomplete_beta(1000.5, 0.5, 2001.0 / (2001.0 + t * t));
            assert!((student_t_sf(t, 2001.0) - exact).abs() < 1e-4);
        }
        assert!((normal_sf(1.959_964) - 0.025).abs() < 1e-7);
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let w = welch_t_one_tailed(&a, &a, Tail::Greater).unwrap();
        assert_eq!(w.t, 0.0);
        assert_eq!(w.p, 0.5);
        let c = [2.0, 2.0];
        assert_eq!(welch_t_one_tailed(&c, &c, Tail::Less).unwrap().p, 0.5);
    }

    #[test]
    fn directions() {
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let a: Vec<f64> = b.iter().map(|x| x + 100.0).collect();
        assert!(welch_t_one_tailed(&a, &b, Tail::Greater).unwrap().p < 1e-6);
        assert!(welch_t_one_tailed(&a, &b, Tail::Less).unwrap().p > 0.5);
        assert!(welch_t_one_tailed(&a, &[1.0], Tail::Less).is_none());
    }
}
