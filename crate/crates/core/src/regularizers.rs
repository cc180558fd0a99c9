//! One-dimensional convex potentials and the quantities FTRL needs from them.
//!
//! Every regularizer in this crate is separable: `psi(q) = sum_a w_a * phi(q_a)`
//! for one of the potentials below. The FTRL solver only ever needs `phi'`,
//! its inverse and `phi''`; the exploration-by-optimization objective needs
//! the stability function
//!
//! ```text
//! S_q(z) = max_y { (q - y) z - D(y, q) }
//! ```
//!
//! which is evaluated through its maximizer `phi'(y*) = phi'(q) - z`, giving
//! `S_q(z) = D(q, y*)` and `dS/dz = q - y*`.
//!
//! Each kind is evaluated on its natural open domain: `(0, inf)` for the
//! log-barrier, `(-inf, 1)` for the two complement terms and `(0, 1)` for the
//! composite kinds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `xi(x) = exp(-x) + x - 1`, nonnegative everywhere.
pub fn xi(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // sum_{n>=2} (-x)^n / n!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for n in 3..12 {
            term *= -x / n as f64;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// `zeta(x) = x - log(1 + x)` for `x > -1`, nonnegative.
pub fn zeta(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // sum_{n>=2} (-1)^n x^n / n
        let mut pow = x * x;
        let mut sum = 0.0;
        for n in 2..14 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * pow / n as f64;
            pow *= x;
        }
        sum
    } else {
        x - x.ln_1p()
    }
}

/// `h(u) = (1 + u) log(1 + u) - u`, the entropy Bregman kernel at ratio `1 + u`.
fn entropy_kernel(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        // sum_{n>=2} (-1)^n u^n / (n (n - 1))
        let mut pow = u * u;
        let mut sum = 0.0;
        for n in 2..14 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * pow / (n * (n - 1)) as f64;
            pow *= u;
        }
        sum
    } else {
        (1.0 + u) * u.ln_1p() - u
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Largest representable value strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;
const LOGIT_LO: f64 = -690.0;
const LOGIT_HI: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `-log z`
    LogBarrier,
    /// `(1 - z) log(1 - z)`
    CompNegShannon,
    /// `-log(1 - z)`
    CompLogBarrier,
    /// `z - 1 - log z + gamma (z + (1 - z) log(1 - z))`, the semi-bandit regularizer.
    HybridLbinfv,
    /// `(-log z + z - 1) + gamma ((1 - z) log(1 - z) + z)`, the partial-monitoring regularizer.
    HybridLocal,
    /// `-log z - log(1 - z)`, used by the globally observable learner.
    BarrierPair,
}

impl PotentialKind {
    fn name(self) -> &'static str {
        match self {
            PotentialKind::LogBarrier => "log-barrier",
            PotentialKind::CompNegShannon => "complement negative Shannon entropy",
            PotentialKind::CompLogBarrier => "complement log-barrier",
            PotentialKind::HybridLbinfv => "LBINFV hybrid",
            PotentialKind::HybridLocal => "local hybrid",
            PotentialKind::BarrierPair => "barrier pair",
        }
    }
}

/// A one-dimensional potential with entropy weight `gamma` (used only by the
/// hybrid kinds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub gamma: f64,
}

impl Potential {
    pub fn new(kind: PotentialKind, gamma: f64) -> Self {
        assert!(gamma.is_finite() && gamma > 0.0, "gamma must be positive");
        Self { kind, gamma }
    }

    pub fn log_barrier() -> Self {
        Self::new(PotentialKind::LogBarrier, 1.0)
    }

    pub fn comp_neg_shannon() -> Self {
        Self::new(PotentialKind::CompNegShannon, 1.0)
    }

    pub fn comp_log_barrier() -> Self {
        Self::new(PotentialKind::CompLogBarrier, 1.0)
    }

    pub fn hybrid_lbinfv(gamma: f64) -> Self {
        Self::new(PotentialKind::HybridLbinfv, gamma)
    }

    pub fn hybrid_local(gamma: f64) -> Self {
        Self::new(PotentialKind::HybridLocal, gamma)
    }

    pub fn barrier_pair() -> Self {
        Self::new(PotentialKind::BarrierPair, 1.0)
    }

    fn is_hybrid(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal
        )
    }

    /// Open interval on which the potential is finite and differentiable.
    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            PotentialKind::LogBarrier => (0.0, f64::INFINITY),
            PotentialKind::CompNegShannon | PotentialKind::CompLogBarrier => {
                (f64::NEG_INFINITY, 1.0)
            }
            _ => (0.0, 1.0),
        }
    }

    /// Open interval of values taken by the gradient.
    pub fn grad_range(&self) -> (f64, f64) {
        match self.kind {
            PotentialKind::LogBarrier => (f64::NEG_INFINITY, 0.0),
            PotentialKind::CompLogBarrier => (0.0, f64::INFINITY),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn check(&self, z: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if z.is_finite() && z > lo && z < hi {
            Ok(())
        } else {
            Err(Error::Domain {
                kind: self.kind.name(),
                value: z,
                lo,
                hi,
            })
        }
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        let g = self.gamma;
        Ok(match self.kind {
            PotentialKind::LogBarrier => -z.ln(),
            PotentialKind::CompNegShannon => (1.0 - z) * (-z).ln_1p(),
            PotentialKind::CompLogBarrier => -(-z).ln_1p(),
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal => {
                (z - 1.0 - z.ln()) + g * (z + (1.0 - z) * (-z).ln_1p())
            }
            PotentialKind::BarrierPair => -z.ln() - (-z).ln_1p(),
        })
    }

    pub fn grad(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(self.grad_unchecked(z))
    }

    fn grad_unchecked(&self, z: f64) -> f64 {
        match self.kind {
            PotentialKind::LogBarrier => -1.0 / z,
            PotentialKind::CompNegShannon => -(-z).ln_1p() - 1.0,
            PotentialKind::CompLogBarrier => 1.0 / (1.0 - z),
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal => {
                1.0 - 1.0 / z - self.gamma * (-z).ln_1p()
            }
            PotentialKind::BarrierPair => -1.0 / z + 1.0 / (1.0 - z),
        }
    }

    /// Second derivative.
    pub fn hess(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(self.hess_unchecked(z))
    }

    pub(crate) fn hess_unchecked(&self, z: f64) -> f64 {
        match self.kind {
            PotentialKind::LogBarrier => 1.0 / (z * z),
            PotentialKind::CompNegShannon => 1.0 / (1.0 - z),
            PotentialKind::CompLogBarrier => 1.0 / ((1.0 - z) * (1.0 - z)),
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal => {
                1.0 / (z * z) + self.gamma / (1.0 - z)
            }
            PotentialKind::BarrierPair => 1.0 / (z * z) + 1.0 / ((1.0 - z) * (1.0 - z)),
        }
    }

    /// Inverse of the gradient. For the composite kinds a value so large that
    /// the preimage rounds to one saturates at the largest double below one.
    pub fn grad_inverse(&self, g: f64) -> Result<f64> {
        let (lo, hi) = self.grad_range();
        if !g.is_finite() || g <= lo || g >= hi {
            return Err(Error::GradientRange(g));
        }
        let z = match self.kind {
            PotentialKind::LogBarrier => -1.0 / g,
            PotentialKind::CompNegShannon => -(-g - 1.0).exp_m1(),
            PotentialKind::CompLogBarrier => 1.0 - 1.0 / g,
            PotentialKind::BarrierPair => 2.0 / ((g * g + 4.0).sqrt() - g + 2.0),
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal => {
                self.hybrid_grad_inverse(g)?
            }
        };
        let (dlo, dhi) = self.domain();
        if z > dlo && z < dhi {
            Ok(z)
        } else if z >= 1.0 && dhi == 1.0 {
            Ok(ONE_MINUS_ULP)
        } else {
            Err(Error::GradientRange(g))
        }
    }

    /// Gradient inverse that saturates inside `(0, 1)` instead of failing.
    /// Only meaningful for kinds whose domain is `(0, 1)`.
    pub(crate) fn grad_inverse_saturating(&self, g: f64) -> f64 {
        match self.grad_inverse(g) {
            Ok(z) => z,
            Err(_) if g.is_nan() => f64::NAN,
            Err(_) => {
                if g > 0.0 {
                    ONE_MINUS_ULP
                } else {
                    f64::MIN_POSITIVE
                }
            }
        }
    }

    fn hybrid_grad_inverse(&self, g: f64) -> Result<f64> {
        self.hybrid_logit_inverse(g).map(sigmoid)
    }

    /// Safeguarded Newton iteration in logit coordinates `t = log(z / (1 - z))`,
    /// where the bracket covers every representable preimage. Returns `t`, so
    /// callers can recover `1 - z = sigmoid(-t)` without cancellation.
    fn hybrid_logit_inverse(&self, g: f64) -> Result<f64> {
        let gamma = self.gamma;
        let residual = |t: f64| -> (f64, f64) {
            let z = sigmoid(t);
            let w = sigmoid(-t);
            let f = 1.0 - 1.0 / z - gamma * w.ln() - g;
            let df = w / z + gamma * z;
            (f, df)
        };

        let (mut lo, mut hi) = (LOGIT_LO, LOGIT_HI);
        if residual(lo).0 > 0.0 {
            return Err(Error::GradientRange(g));
        }
        if residual(hi).0 < 0.0 {
            return Ok(hi);
        }
        // Start from the dominant branch: the log-barrier for negative
        // gradients, the entropy term for positive ones.
        let mut t = if g < 0.0 {
            let z0 = 1.0 / (1.0 - g);
            z0.ln() - (-z0).ln_1p()
        } else {
            (g / gamma).max(1e-3).exp_m1().ln()
        }
        .clamp(lo, hi);

        for _ in 0..200 {
            let (f, df) = residual(t);
            if f == 0.0 {
                return Ok(t);
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - f / df;
            let next = if newton >= lo && newton <= hi && df.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - t).abs();
            t = next;
            if step <= 1e-13 * (1.0 + t.abs()) || hi - lo <= 1e-13 * (1.0 + t.abs()) {
                return Ok(t);
            }
        }
        Err(Error::Numerical(format!(
            "gradient inverse did not converge for g = {g}"
        )))
    }

    /// Bregman divergence `D(x, y) = phi(x) - phi(y) - phi'(y)(x - y)`,
    /// evaluated through cancellation-free closed forms.
    pub fn bregman(&self, x: f64, y: f64) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let lb = || zeta(x / y - 1.0);
        let cns = || (1.0 - y) * entropy_kernel((y - x) / (1.0 - y));
        let clb = || zeta((y - x) / (1.0 - y));
        Ok(match self.kind {
            PotentialKind::LogBarrier => lb(),
            PotentialKind::CompNegShannon => cns(),
            PotentialKind::CompLogBarrier => clb(),
            PotentialKind::HybridLbinfv | PotentialKind::HybridLocal => {
                lb() + self.gamma * cns()
            }
            PotentialKind::BarrierPair => lb() + clb(),
        })
    }

    /// Stability function `S_q(z) = max_y (q - y) z - D(y, q)`.
    pub fn stability(&self, q: f64, z: f64) -> Result<f64> {
        self.stability_with_slope(q, z).map(|(s, _)| s)
    }

    /// Stability value together with its derivative `dS/dz = q - y*`.
    pub fn stability_with_slope(&self, q: f64, z: f64) -> Result<(f64, f64)> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain {
                kind: self.kind.name(),
                value: q,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !z.is_finite() {
            return Err(Error::UnboundedStability(z));
        }
        if z == 0.0 {
            return Ok((0.0, 0.0));
        }
        let shifted = self.grad_unchecked(q) - z;
        let (lo, hi) = self.grad_range();
        if shifted <= lo || shifted >= hi {
            return Err(Error::UnboundedStability(shifted));
        }
        if self.is_hybrid() {
            let t = self
                .hybrid_logit_inverse(shifted)
                .map_err(|_| Error::UnboundedStability(shifted))?;
            let (y, wy) = (sigmoid(t), sigmoid(-t));
            // Past the logit cap the complement underflows; its logarithm
            // still follows exactly from the gradient equation.
            let ln_wy = if t >= LOGIT_HI {
                (1.0 - 1.0 / y - shifted) / self.gamma
            } else {
                wy.ln()
            };
            return Ok(self.hybrid_stability_at(q, y, wy, ln_wy));
        }
        let y = self.grad_inverse(shifted)?;
        Ok((self.bregman(q, y)?, q - y))
    }

    /// `D(q, y)` and `q - y` for the hybrid kinds, with `wy = 1 - y` (and its
    /// logarithm) supplied separately so that maximizers within an ulp of one
    /// keep their complement.
    fn hybrid_stability_at(&self, q: f64, y: f64, wy: f64, ln_wy: f64) -> (f64, f64) {
        let wq = 1.0 - q;
        let lb = zeta(q / y - 1.0);
        let ln_ratio = wq.ln() - ln_wy;
        let cns = if ln_ratio > std::f64::consts::LN_2 {
            wq * ln_ratio - wq + wy
        } else {
            wy * entropy_kernel(ln_ratio.exp_m1())
        };
        let slope = if y > 0.5 { wy - wq } else { q - y };
        (lb + self.gamma * cns, slope)
    }
}
