//! Interaction kernels and finite-graph sampling.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_label, Error, Result};

fn default_gamma() -> f64 {
    -0.5
}

/// Symmetric interaction kernel on `[0,1]^2`.
///
/// Block kernels use half-open blocks: `[0, 1/2)` / `[1/2, 1]` for the
/// two-block kernel and `[0, alpha)` / `[alpha, 1]` for the star kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphonKernel {
    /// `G(u, v) = 1`: every player interacts with everyone.
    Constant,
    /// `a` on the lower diagonal block, `b` on the upper one, 0 across.
    TwoBlock { a: f64, b: f64 },
    /// `c` between the major fraction `[0, alpha)` and the rest, 0 within groups.
    Star { c: f64, alpha: f64 },
    /// `min(u, v) * (1 - max(u, v))`.
    MinMax,
    /// `(u v)^(-gamma)` with `gamma <= 0`.
    PowerLaw {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

impl GraphonKernel {
    pub const fn power_law() -> Self {
        GraphonKernel::PowerLaw { gamma: -0.5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GraphonKernel::Constant => "constant",
            GraphonKernel::TwoBlock { .. } => "two_block",
            GraphonKernel::Star { .. } => "star",
            GraphonKernel::MinMax => "min_max",
            GraphonKernel::PowerLaw { .. } => "power_law",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match *self {
            GraphonKernel::Constant | GraphonKernel::MinMax => Ok(()),
            GraphonKernel::TwoBlock { a, b } => {
                if nonneg(a) && nonneg(b) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "two-block weights must be non-negative, got a = {a}, b = {b}"
                    )))
                }
            }
            GraphonKernel::Star { c, alpha } => {
                if !nonneg(c) {
                    Err(Error::Config(format!("star weight must be non-negative, got {c}")))
                } else if !(alpha > 0.0 && alpha < 1.0) {
                    Err(Error::Config(format!(
                        "star major fraction must lie in (0, 1), got {alpha}"
                    )))
                } else {
                    Ok(())
                }
            }
            GraphonKernel::PowerLaw { gamma } => {
                if gamma.is_finite() && gamma <= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "power-law exponent must be <= 0 (kernel unbounded otherwise), got {gamma}"
                    )))
                }
            }
        }
    }

    /// Kernel value without label checks; callers guarantee `u, v` in `[0, 1]`.
    #[inline]
    pub fn weight(&self, u: f64, v: f64) -> f64 {
        match *self {
            GraphonKernel::Constant => 1.0,
            GraphonKernel::TwoBlock { a, b } => match (u < 0.5, v < 0.5) {
                (true, true) => a,
                (false, false) => b,
                _ => 0.0,
            },
            GraphonKernel::Star { c, alpha } => {
                if (u < alpha) != (v < alpha) {
                    c
                } else {
                    0.0
                }
            }
            GraphonKernel::MinMax => u.min(v) * (1.0 - u.max(v)),
            GraphonKernel::PowerLaw { gamma } => {
                if gamma == 0.0 {
                    1.0
                } else if u == 0.0 || v == 0.0 {
                    0.0
                } else {
                    (u * v).powf(-gamma)
                }
            }
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        check_label(u)?;
        check_label(v)?;
        Ok(self.weight(u, v))
    }

    /// `[G(u, v_j)]_j`, the weights of the in-batch interaction average.
    pub fn mean_field_weights(&self, u: f64, labels: &[f64]) -> Result<Vec<f64>> {
        check_label(u)?;
        labels.iter().map(|&v| self.eval(u, v)).collect()
    }

    /// Degree `int_0^1 G(u, v) dv` in closed form.
    pub fn degree(&self, u: f64) -> Result<f64> {
        check_label(u)?;
        Ok(match *self {
            GraphonKernel::Constant => 1.0,
            GraphonKernel::TwoBlock { a, b } => {
                if u < 0.5 {
                    0.5 * a
                } else {
                    0.5 * b
                }
            }
            GraphonKernel::Star { c, alpha } => {
                if u < alpha {
                    c * (1.0 - alpha)
                } else {
                    c * alpha
                }
            }
            // int_0^u v(1-u) dv + int_u^1 u(1-v) dv
            GraphonKernel::MinMax => 0.5 * u * (1.0 - u),
            GraphonKernel::PowerLaw { gamma } => {
                if gamma == 0.0 {
                    1.0
                } else {
                    u.powf(-gamma) / (1.0 - gamma)
                }
            }
        })
    }

    /// Points in `(0, 1)` where `v -> G(u, v)` is not smooth.
    pub fn breakpoints(&self, u: f64) -> Vec<f64> {
        match *self {
            GraphonKernel::Constant | GraphonKernel::PowerLaw { .. } => vec![],
            GraphonKernel::TwoBlock { .. } => vec![0.5],
            GraphonKernel::Star { alpha, .. } => vec![alpha],
            GraphonKernel::MinMax => {
                if u > 0.0 && u < 1.0 {
                    vec![u]
                } else {
                    vec![]
                }
            }
        }
    }

    /// Default label groups used for group-averaged metrics.
    pub fn natural_groups(&self) -> Vec<LabelGroup> {
        match *self {
            GraphonKernel::Star { alpha, .. } => vec![
                LabelGroup::new("major", vec![(0.0, alpha)]),
                LabelGroup::new("minor", vec![(alpha, 1.0)]),
            ],
            GraphonKernel::MinMax => vec![
                LabelGroup::new("center", vec![(0.25, 0.75)]),
                LabelGroup::new("outer", vec![(0.0, 0.25), (0.75, 1.0)]),
            ],
            GraphonKernel::Constant => vec![LabelGroup::new("all", vec![(0.0, 1.0)])],
            GraphonKernel::TwoBlock { .. } | GraphonKernel::PowerLaw { .. } => vec![
                LabelGroup::new("lower", vec![(0.0, 0.5)]),
                LabelGroup::new("upper", vec![(0.5, 1.0)]),
            ],
        }
    }
}

/// Union of label intervals `[lo, hi)`; an interval ending at 1 includes 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelGroup {
    pub name: String,
    pub ranges: Vec<(f64, f64)>,
}

impl LabelGroup {
    pub fn new(name: impl Into<String>, ranges: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            ranges,
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        self.ranges
            .iter()
            .any(|&(lo, hi)| u >= lo && (u < hi || (hi >= 1.0 && u <= 1.0)))
    }
}

/// Symmetric 0/1 adjacency matrix of an `n`-player graph sampled from `g`.
///
/// Player `i` (1-based) sits at the midpoint `(i - 1/2) / n` of its cell in
/// the step approximation of the kernel; `lambda_ij = lambda_ji` is drawn once
/// per unordered pair, including the diagonal.
pub fn sample_adjacency<R: Rng + ?Sized>(
    g: &GraphonKernel,
    n: usize,
    rng: &mut R,
) -> Result<Array2<u8>> {
    if n == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    g.validate()?;
    let label = |i: usize| (i as f64 + 0.5) / n as f64;
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let p = g.weight(label(i), label(j));
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "edge probability {p} outside [0, 1]; kernel is not [0,1]-valued"
                )));
            }
            let edge = u8::from(rng.gen_bool(p));
            adj[[i, j]] = edge;
            adj[[j, i]] = edge;
        }
    }
    Ok(adj)
}
