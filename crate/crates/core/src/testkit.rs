//! Independent oracles for tests: adaptive quadrature, brute-force path
//! enumeration and finite differences. Nothing here calls into the crate so
//! the same file can be included from integration tests.
#![allow(dead_code)]

use libm::erfc;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integral of `f` over `[a, b]`, starting from
/// 64 panels so narrow peaks are not skipped.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let n0 = 64;
    let w = (b - a) / n0 as f64;
    let mut stack: Vec<(f64, f64, usize)> = (0..n0)
        .map(|i| (a + w * i as f64, a + w * (i + 1) as f64, 0))
        .collect();
    let mut total = 0.0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        if err <= tol.max(1e-15 * v.abs()) || depth > 60 {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    total
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Truncated-normal density normalized by quadrature of the parent kernel.
pub fn quad_tn_density(mu: f64, sigma: f64, lower: f64, upper: f64) -> impl Fn(f64) -> f64 {
    let kernel = move |x: f64| phi((x - mu) / sigma) / sigma;
    let z = integrate(&kernel, lower, upper, 1e-16);
    move |x| {
        if x < lower || x > upper {
            0.0
        } else {
            kernel(x) / z
        }
    }
}

/// Mean and variance by quadrature. The kernel is rescaled by its peak over
/// the window so far-tail windows stay representable.
pub fn quad_moments(mu: f64, sigma: f64, lower: f64, upper: f64) -> (f64, f64) {
    let peak = mu.clamp(lower, upper);
    let zp = (peak - mu) / sigma;
    let kernel = move |x: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * (z * z - zp * zp)).exp()
    };
    let z = integrate(&kernel, lower, upper, 1e-15);
    let mean = integrate(&|x| x * kernel(x), lower, upper, 1e-15) / z;
    let var = integrate(&|x| (x - mean) * (x - mean) * kernel(x), lower, upper, 1e-15) / z;
    (mean, var)
}

/// Direct (non-log) truncated-normal density for moderate parameters.
pub fn direct_tn_pdf(mu: f64, sigma: f64, lower: f64, upper: f64, x: f64) -> f64 {
    if x < lower || x > upper {
        return 0.0;
    }
    let cdf = |t: f64| 0.5 * erfc(-t / std::f64::consts::SQRT_2);
    let z = cdf((upper - mu) / sigma) - cdf((lower - mu) / sigma);
    phi((x - mu) / sigma) / (sigma * z)
}

/// Raw HMM description for the enumeration oracles; `a` is row-major.
#[derive(Debug, Clone)]
pub struct RawHmm {
    pub k: usize,
    pub pi: Vec<f64>,
    pub a: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl RawHmm {
    fn emission(&self, s: usize, x: f64) -> f64 {
        direct_tn_pdf(self.mu[s], self.sigma[s], -30.0, 0.0, x)
    }

    /// Calls `visit(path, joint)` for every hidden path.
    pub fn for_each_path(&self, obs: &[f64], mut visit: impl FnMut(&[usize], f64)) {
        let n = obs.len();
        let mut path = vec![0usize; n];
        let total = self.k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for p in path.iter_mut() {
                *p = c % self.k;
                c /= self.k;
            }
            let mut joint = self.pi[path[0]] * self.emission(path[0], obs[0]);
            for t in 1..n {
                joint *= self.a[path[t - 1] * self.k + path[t]] * self.emission(path[t], obs[t]);
            }
            visit(&path, joint);
        }
    }

    pub fn likelihood(&self, obs: &[f64]) -> f64 {
        let mut total = 0.0;
        self.for_each_path(obs, |_, j| total += j);
        total
    }

    /// `p(z_{N+1} = k | X)` by enumeration.
    pub fn next_state(&self, obs: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.k];
        let mut total = 0.0;
        self.for_each_path(obs, |path, j| {
            total += j;
            let last = *path.last().unwrap();
            for (k, wk) in w.iter_mut().enumerate() {
                *wk += j * self.a[last * self.k + k];
            }
        });
        w.iter().map(|v| v / total).collect()
    }

    /// Smoothed marginals `p(z_n = k | X)` by enumeration.
    pub fn marginals(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.k]; obs.len()];
        let mut total = 0.0;
        self.for_each_path(obs, |path, j| {
            total += j;
            for (n, &s) in path.iter().enumerate() {
                g[n][s] += j;
            }
        });
        for row in &mut g {
            row.iter_mut().for_each(|v| *v /= total);
        }
        g
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor for near-zero components.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
