//! Small statistics helpers for benchmark reporting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker, Statistics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a - b`.
    pub mean_diff: f64,
    pub t: f64,
    pub p_two_sided: f64,
    /// One-sided p-value for `mean(a - b) < 0`.
    pub p_less: f64,
}

/// Paired t-test on `a - b`. Identical samples give `p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTest {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().mean();
    if n < 2 {
        return PairedTest {
            n,
            mean_diff: mean,
            t: f64::NAN,
            p_two_sided: 1.0,
            p_less: 1.0,
        };
    }
    let sd = d.iter().std_dev();
    if sd == 0.0 {
        let (p_two, p_less) = if mean == 0.0 {
            (1.0, 1.0)
        } else if mean < 0.0 {
            (0.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        return PairedTest {
            n,
            mean_diff: mean,
            t: mean.signum() * f64::INFINITY,
            p_two_sided: p_two,
            p_less,
        };
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTest {
        n,
        mean_diff: mean,
        t,
        p_two_sided: 2.0 * dist.cdf(-t.abs()),
        p_less: dist.cdf(t),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (x.iter().mean(), y.iter().mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with averaged ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "samples differ in length");
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    pearson(&rx, &ry)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().mean(), ly.iter().mean());
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    /// Half-width of the 95% t interval of the mean.
    pub ci95: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let mean = xs.iter().mean();
    if xs.len() < 2 {
        return Summary { mean, std: 0.0, ci95: 0.0 };
    }
    let std = xs.iter().std_dev();
    let dist = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64).expect("positive degrees of freedom");
    Summary {
        mean,
        std,
        ci95: dist.inverse_cdf(0.975) * std / (xs.len() as f64).sqrt(),
    }
}
