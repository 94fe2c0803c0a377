//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector-valued
//! integrands. The converged partition can be frozen into a plain
//! node/weight rule and reused for any integrand that is smooth on the
//! same subintervals.

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639,
    0.949_107_912_342_758_525,
    0.864_864_423_359_769_073,
    0.741_531_185_599_394_440,
    0.586_087_235_467_691_130,
    0.405_845_151_377_397_167,
    0.207_784_955_007_898_468,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_553,
    0.104_790_010_322_250_184,
    0.140_653_259_715_525_919,
    0.169_004_726_639_267_903,
    0.190_350_578_064_785_410,
    0.204_432_940_075_298_892,
    0.209_482_141_084_727_828,
];

// Gauss weights for the odd-indexed Kronrod abscissae (1, 3, 5) and the centre.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693,
    0.279_705_391_489_276_668,
    0.381_830_050_505_118_945,
    0.417_959_183_673_469_388,
];

/// Tolerances and limits for [`adaptive_rule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub rel_tol: f64,
    /// Per-component absolute floor, used when the integral is (near) zero.
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_intervals: 2000,
        }
    }
}

/// A composite quadrature rule: `∫ f ≈ Σ weights[i]·f(nodes[i])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

struct Segment {
    a: f64,
    b: f64,
    est: Vec<f64>,
    err: Vec<f64>,
}

fn gk15<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut buf = vec![0.0; dim];
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(c, &mut buf);
    for k in 0..dim {
        kron[k] = WGK[7] * buf[k];
        gauss[k] = WG[3] * buf[k];
    }
    for (j, &x) in XGK[..7].iter().enumerate() {
        for sign in [-1.0, 1.0] {
            f(c + sign * h * x, &mut buf);
            for k in 0..dim {
                kron[k] += WGK[j] * buf[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * buf[k];
                }
            }
        }
    }
    let mut est = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    for k in 0..dim {
        est[k] = kron[k] * h;
        err[k] = ((kron[k] - gauss[k]) * h).abs();
    }
    Segment { a, b, est, err }
}

fn scaled_error(seg: &Segment, tol: &[f64]) -> f64 {
    seg.err.iter().zip(tol).map(|(e, t)| e / t).fold(0.0, f64::max)
}

/// Integrates a `dim`-component integrand over `[a, b]`, splitting first at
/// the given interior breakpoints, and returns the frozen composite rule of
/// the converged partition together with the component estimates.
///
/// Convergence requires every component's summed error estimate to be below
/// `max(abs_tol, rel_tol·|integral|)`.
pub fn adaptive_rule<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> Result<(Rule, Vec<f64>)>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Numeric(format!(
            "quadrature interval [{a}, {b}] is not a finite ordered interval"
        )));
    }
    if b == a {
        return Ok((Rule::default(), vec![0.0; dim]));
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let mut segs: Vec<Segment> = edges.windows(2).map(|w| gk15(&mut f, w[0], w[1], dim)).collect();

    loop {
        let mut total = vec![0.0; dim];
        let mut total_err = vec![0.0; dim];
        for s in &segs {
            for k in 0..dim {
                total[k] += s.est[k];
                total_err[k] += s.err[k];
            }
        }
        let tol: Vec<f64> = total
            .iter()
            .map(|v| (opts.rel_tol * v.abs()).max(opts.abs_tol))
            .collect();
        if total_err.iter().zip(&tol).all(|(e, t)| e <= t) {
            segs.sort_by(|x, y| x.a.total_cmp(&y.a));
            let mut rule = Rule {
                nodes: Vec::with_capacity(segs.len() * 15),
                weights: Vec::with_capacity(segs.len() * 15),
            };
            for s in &segs {
                push_nodes(&mut rule, s.a, s.b);
            }
            return Ok((rule, total));
        }
        if segs.len() >= opts.max_intervals {
            let worst = segs
                .iter()
                .max_by(|x, y| scaled_error(x, &tol).total_cmp(&scaled_error(y, &tol)))
                .map(|s| (s.a, s.b))
                .unwrap_or((a, b));
            return Err(Error::Numeric(format!(
                "adaptive quadrature on [{a}, {b}] did not reach rel_tol {} within {} subintervals; \
                 estimate {:?}, error {:?}, worst subinterval [{}, {}]",
                opts.rel_tol, opts.max_intervals, total, total_err, worst.0, worst.1
            )));
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .map(|(i, s)| (i, scaled_error(s, &tol)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty partition");
        let s = segs.swap_remove(idx);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(Error::Numeric(format!(
                "adaptive quadrature subinterval [{}, {}] cannot be bisected further",
                s.a, s.b
            )));
        }
        segs.push(gk15(&mut f, s.a, mid, dim));
        segs.push(gk15(&mut f, mid, s.b, dim));
    }
}

fn push_nodes(rule: &mut Rule, a: f64, b: f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    for j in 0..7 {
        rule.nodes.push(c - h * XGK[j]);
        rule.weights.push(h * WGK[j]);
    }
    rule.nodes.push(c);
    rule.weights.push(h * WGK[7]);
    for j in (0..7).rev() {
        rule.nodes.push(c + h * XGK[j]);
        rule.weights.push(h * WGK[j]);
    }
}

/// Scalar convenience wrapper around [`adaptive_rule`].
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> Result<f64> {
    let (_, est) = adaptive_rule(|x, out| out[0] = f(x), 1, a, b, breakpoints, opts)?;
    Ok(est[0])
}
