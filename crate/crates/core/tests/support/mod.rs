//! Independent oracles shared by the integration tests: adaptive quadrature
//! for Poisson-Gamma mixtures, a product-form negative binomial mass and
//! small random panel generators.

#![allow(dead_code)]

use accrual::{CenterRecord, EnrollmentPanel};
use rand::Rng;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) on `[a, b]` with bisection of the worst interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut parts = vec![(a, b, kronrod15(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= rel_tol * total.abs() {
            break;
        }
        let worst = (0..parts.len()).max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1)).unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, kronrod15(&f, lo, mid)));
        parts.push((mid, hi, kronrod15(&f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

pub fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|j| (j as f64).ln()).sum()
}

/// `ln Gamma(x)` by Lanczos (g = 7, n = 9), independent of the library's routine.
pub fn ln_gamma_lanczos(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_lanczos(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln int prod_j Poisson(n_j; lambda) Gamma(lambda; alpha, rate alpha/m) dlambda`,
/// all days sharing one rate. Integrated on `y = ln lambda` around the mode.
pub fn log_mixture_mass(counts: &[u32], alpha: f64, m: f64) -> f64 {
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let days = counts.len() as f64;
    let beta = alpha / m;
    let shape = n + alpha;
    let rate = days + beta;
    let log_h = |y: f64| shape * y - rate * y.exp();
    let y_star = (shape / rate).ln();
    let h_star = log_h(y_star);
    let lo = y_star - 60.0 / shape - 5.0;
    let hi = y_star + (60.0 / shape + 10.0).ln() + 2.0;
    let integral = integrate(|y| (log_h(y) - h_star).exp(), lo, hi, 1e-14);
    let constant = alpha * beta.ln()
        - ln_gamma_lanczos(alpha)
        - counts.iter().map(|&c| ln_factorial(c as u64)).sum::<f64>();
    integral.ln() + h_star + constant
}

/// Negative binomial log mass `C(k + r - 1, k) p^r (1 - p)^k` built from
/// the product of ratios, without log-Gamma.
pub fn nb_log_pmf(k: u64, r: f64, p: f64) -> f64 {
    let mut s = r * p.ln() + k as f64 * (1.0 - p).ln();
    for j in 0..k {
        s += ((r + j as f64) / (j + 1) as f64).ln();
    }
    s
}

pub fn panel_from(rows: &[(usize, Vec<u32>)], t_int: usize) -> EnrollmentPanel {
    let centers = rows
        .iter()
        .enumerate()
        .map(|(i, (u, counts))| CenterRecord { id: format!("c{i:02}"), u: *u, counts: counts.clone() })
        .collect();
    EnrollmentPanel::new(centers, t_int).unwrap()
}

/// Panel with `centers` centers, initiation times in `1..=max_u` and
/// overdispersed counts around `mean`.
pub fn random_panel<R: Rng>(
    rng: &mut R,
    centers: usize,
    t_int: usize,
    max_u: usize,
    mean: f64,
) -> EnrollmentPanel {
    use rand_distr::{Distribution, Gamma, Poisson};
    let rows: Vec<(usize, Vec<u32>)> = (0..centers)
        .map(|_| {
            let u = rng.random_range(1..=max_u.min(t_int));
            let rate = Gamma::new(2.0, mean / 2.0).unwrap().sample(rng);
            let counts = (0..t_int - u + 1)
                .map(|_| Poisson::new(rate.max(1e-9)).unwrap().sample(rng) as u32)
                .collect();
            (u, counts)
        })
        .collect();
    panel_from(&rows, t_int)
}

/// Monte Carlo of the forecast law: posterior plateau rates for centers past
/// the plateau, independent prior day rates then one prior plateau rate for the rest.
pub fn forecast_monte_carlo(
    fit: &accrual::TpgFit,
    panel: &EnrollmentPanel,
    t: usize,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Gamma, Poisson};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mf = &fit.mean_fn;
    let (alpha, t_p) = (fit.alpha, mf.t_p());
    let h = (t - panel.t_int()) as f64;
    let mut totals = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut lambda = 0.0;
        for c in panel.centers() {
            let span = c.counts.len();
            if span >= t_p {
                let n: f64 = c.counts[t_p - 1..].iter().map(|&n| n as f64).sum();
                let rate = alpha / mf.plateau_mean() + (span - t_p + 1) as f64;
                lambda += h * Gamma::new(alpha + n, 1.0 / rate).unwrap().sample(&mut rng);
            } else {
                let last = t - c.u + 1;
                for s in span + 1..=last.min(t_p - 1) {
                    lambda += Gamma::new(alpha, mf.mean_eval(s) / alpha).unwrap().sample(&mut rng);
                }
                if last >= t_p {
                    let days = (last - t_p + 1) as f64;
                    lambda += days * Gamma::new(alpha, mf.plateau_mean() / alpha).unwrap().sample(&mut rng);
                }
            }
        }
        totals.push(Poisson::new(lambda).unwrap().sample(&mut rng));
    }
    moments(&totals)
}

/// Sample mean and variance.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
