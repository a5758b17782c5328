//! Group statistics: one-way ANOVA with an F-distribution tail, and the
//! 3-means density clustering used to band trials.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
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
    for m in 1..=500 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    regularized_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric: String,
    pub groups: Vec<GroupSummary>,
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    pub stars: String,
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One-way ANOVA across named groups.
///
/// All-identical data gives `F = 0, p = 1`; zero within-group spread with
/// distinct means gives `F = inf, p = 0`.
pub fn anova(metric: &str, groups: &[(String, Vec<f64>)]) -> Result<GroupComparison, MetricsError> {
    if groups.len() < 2 || groups.iter().any(|(_, g)| g.len() < 2) {
        return Err(MetricsError::GroupTooSmall);
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|(_, g)| g.len()).sum();
    let grand = groups.iter().flat_map(|(_, g)| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for (_, g) in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let (dfb, dfw) = (k - 1, n - k);
    let scale = grand.abs().max(1.0);
    let (f, p) = if ssb <= 1e-24 * scale * scale && ssw <= 1e-24 * scale * scale {
        (0.0, 1.0)
    } else if ssw <= 1e-24 * scale * scale {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ssb / dfb as f64) / (ssw / dfw as f64);
        (f, f_survival(f, dfb as f64, dfw as f64))
    };
    Ok(GroupComparison {
        metric: metric.to_string(),
        groups: groups
            .iter()
            .map(|(name, g)| GroupSummary { name: name.clone(), n: g.len(), mean: mean(g), std: sample_std(g) })
            .collect(),
        f_statistic: f,
        df_between: dfb,
        df_within: dfw,
        p_value: p,
        stars: significance_stars(p).to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster index per trial, 0 = lowest mean density.
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    pub sizes: Vec<usize>,
    /// Set when some cluster ended up empty.
    pub degenerate: bool,
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// 3-means over per-trial density features `(avg 2.5 m, max 2.5 m, avg 5 m)`,
/// seeded deterministically from the trials ordered by mean density.
pub fn cluster_by_density(features: &[[f64; 3]]) -> Result<ClusterResult, MetricsError> {
    const K: usize = 3;
    let n = features.len();
    if n < K {
        return Err(MetricsError::TooFewTrials { need: K, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| features[a][0].total_cmp(&features[b][0]).then(a.cmp(&b)));
    let mut centroids: Vec<[f64; 3]> = [0, (n - 1) / 2, n - 1].iter().map(|&i| features[order[i]]).collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let mut best = 0;
            for c in 1..K {
                if dist_sq(f, &centroids[c]) < dist_sq(f, &centroids[best]) {
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 3]> = features.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(f, _)| f).collect();
            if members.is_empty() {
                continue;
            }
            for (d, value) in centroid.iter_mut().enumerate() {
                *value = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // Relabel so clusters are ordered by centroid mean density.
    let mut labels: Vec<usize> = (0..K).collect();
    labels.sort_by(|&a, &b| centroids[a][0].total_cmp(&centroids[b][0]).then(a.cmp(&b)));
    let mut rank = [0; K];
    for (r, &c) in labels.iter().enumerate() {
        rank[c] = r;
    }
    let assignments: Vec<usize> = assign.iter().map(|&a| rank[a]).collect();
    let centroids: Vec<[f64; 3]> = labels.iter().map(|&c| centroids[c]).collect();
    let sizes: Vec<usize> = (0..K).map(|c| assignments.iter().filter(|&&a| a == c).count()).collect();
    Ok(ClusterResult { degenerate: sizes.contains(&0), assignments, centroids, sizes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(data: &[&[f64]]) -> Vec<(String, Vec<f64>)> {
        data.iter().enumerate().map(|(i, g)| (format!("g{i}"), g.to_vec())).collect()
    }

    #[test]
    fn textbook_fixture() {
        let r = anova("x", &groups(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]])).unwrap();
        assert!((r.f_statistic - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        // For d1 = 2 the tail is (d2 / (d2 + 2F))^(d2/2) = 0.5^3.
        assert!((r.p_value - 0.125).abs() < 1e-12);
        assert_eq!(r.stars, "");
    }

    #[test]
    fn identical_groups() {
        let r = anova("x", &groups(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert_eq!((r.f_statistic, r.p_value), (0.0, 1.0));
        let r = anova("x", &groups(&[&[1.0, 1.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(anova("x", &groups(&[&[1.0], &[2.0, 3.0]])).is_err());
    }

    #[test]
    fn gamma_and_beta_closed_forms() {
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        // I_x(1, b) = 1 - (1 - x)^b and I_x(a, 1) = x^a.
        assert!((regularized_beta(1.0, 3.0, 0.3) - (1.0 - 0.7f64.powi(3))).abs() < 1e-14);
        assert!((regularized_beta(2.5, 1.0, 0.6) - 0.6f64.powf(2.5)).abs() < 1e-14);
    }

    #[test]
    fn stars_levels() {
        assert_eq!(significance_stars(0.005), "***");
        assert_eq!(significance_stars(0.03), "**");
        assert_eq!(significance_stars(0.07), "*");
        assert_eq!(significance_stars(0.5), "");
    }

    #[test]
    fn three_singletons() {
        let r = cluster_by_density(&[[0.26, 0.5, 0.2], [0.08, 0.2, 0.05], [0.18, 0.3, 0.1]]).unwrap();
        assert_eq!(r.assignments, vec![2, 0, 1]);
        assert!(!r.degenerate);
        assert!(cluster_by_density(&[[0.1; 3]; 2]).is_err());
    }

    #[test]
    fn identical_trials_are_degenerate() {
        let r = cluster_by_density(&[[0.1; 3]; 5]).unwrap();
        assert!(r.degenerate);
    }
}
