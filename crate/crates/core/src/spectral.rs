//! Spectral filter functions `g_λ` and the scalar spectral quantities used by
//! the adaptive parameter rule.
//!
//! A filter replaces `1/σ` on each eigenvalue of the empirical covariance by
//! a regularized surrogate, so `g_λ(Σ̂) v` approximates `Σ̂⁻¹ v`. Three filters
//! are provided: Tikhonov (ridge), spectral cut-off (truncated
//! pseudo-inverse) and gradient descent (Landweber iteration with unit step,
//! early-stopped after `p` steps).

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::linalg::{check_len, SpectralDecomposition};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FilterKind {
    Tikhonov,
    Cutoff,
    GradientDescent,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] =
        [FilterKind::Tikhonov, FilterKind::GradientDescent, FilterKind::Cutoff];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Tikhonov => "tikhonov",
            FilterKind::Cutoff => "cutoff",
            FilterKind::GradientDescent => "gradient-descent",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tikhonov" | "ridge" => Ok(FilterKind::Tikhonov),
            "cutoff" | "cut-off" => Ok(FilterKind::Cutoff),
            "gradient-descent" | "gd" => Ok(FilterKind::GradientDescent),
            other => Err(Error::domain(alloc::format!("unknown filter '{other}'"))),
        }
    }
}

/// A filter together with its qualification constants.
///
/// `b` bounds `|g_λ(σ)| ≤ b/λ` and `|σ g_λ(σ)| ≤ b`; `gamma_table` lists
/// `(ν, γ_ν)` pairs for the residual bound `|1 − σ g_λ(σ)| σ^ν ≤ γ_ν λ^ν`,
/// valid for `0 < ν ≤ nu_g`. `nu_g` is `f64::INFINITY` for filters that do not
/// saturate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub b: f64,
    pub nu_g: f64,
    pub gamma_table: Vec<(f64, f64)>,
}

impl FilterSpec {
    pub fn new(kind: FilterKind) -> Self {
        match kind {
            FilterKind::Tikhonov => FilterSpec {
                kind,
                b: 1.0,
                nu_g: 1.0,
                gamma_table: alloc::vec![(0.5, 1.0), (1.0, 1.0)],
            },
            FilterKind::Cutoff => FilterSpec {
                kind,
                b: 1.0,
                nu_g: f64::INFINITY,
                gamma_table: alloc::vec![(0.5, 1.0), (1.0, 1.0), (2.0, 1.0), (4.0, 1.0)],
            },
            // sup_σ (1-σ)^p σ^ν ≤ (ν/e)^ν p^-ν, which tends to 4.69 λ^4 at ν = 4.
            FilterKind::GradientDescent => FilterSpec {
                kind,
                b: 1.0,
                nu_g: f64::INFINITY,
                gamma_table: alloc::vec![(0.5, 1.0), (1.0, 1.0), (2.0, 1.0), (4.0, 5.0)],
            },
        }
    }

    pub fn tikhonov() -> Self {
        Self::new(FilterKind::Tikhonov)
    }

    pub fn cutoff() -> Self {
        Self::new(FilterKind::Cutoff)
    }

    pub fn gradient_descent() -> Self {
        Self::new(FilterKind::GradientDescent)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !(self.nu_g > 0.0) {
            return Err(Error::domain("filter constants b and nu_g must be positive"));
        }
        if self.gamma_table.iter().any(|&(nu, g)| !(nu > 0.0) || !(g > 0.0)) {
            return Err(Error::domain("gamma table entries must be positive"));
        }
        Ok(())
    }

    /// `γ_ν` from the table, if listed.
    pub fn gamma(&self, nu: f64) -> Option<f64> {
        self.gamma_table.iter().find(|(n, _)| *n == nu).map(|&(_, g)| g)
    }

    /// `g_λ(σ)`.
    pub fn value(&self, lambda: f64, sigma: f64) -> Result<f64> {
        filter_value(self.kind, lambda, sigma)
    }
}

/// Number of gradient steps standing in for regularization `λ`:
/// `p = max(1, ⌊1/λ⌋)`, so that `p ≤ 1/λ` whenever `λ ≤ 1`.
pub fn gradient_steps(lambda: f64) -> u32 {
    let p = libm::floor(1.0 / lambda);
    if p < 1.0 {
        1
    } else if p > u32::MAX as f64 {
        u32::MAX
    } else {
        p as u32
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(alloc::format!("regularization parameter must be positive, got {lambda}")))
    }
}

/// Scalar filter value `g_λ(σ)`.
pub fn filter_value(kind: FilterKind, lambda: f64, sigma: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(sigma >= 0.0) {
        return Err(Error::domain(alloc::format!("eigenvalue must be nonnegative, got {sigma}")));
    }
    Ok(match kind {
        FilterKind::Tikhonov => 1.0 / (sigma + lambda),
        FilterKind::Cutoff => {
            if sigma >= lambda {
                1.0 / sigma
            } else {
                0.0
            }
        }
        FilterKind::GradientDescent => {
            if sigma > 1.0 {
                return Err(Error::domain(alloc::format!(
                    "gradient-descent filter requires σ ≤ 1, got {sigma}"
                )));
            }
            let p = gradient_steps(lambda);
            if sigma == 0.0 {
                p as f64
            } else {
                // Σ_{i<p} (1-σ)^i = (1 - (1-σ)^p) / σ, without cancellation for small σ.
                -libm::expm1(p as f64 * libm::log1p(-sigma)) / sigma
            }
        }
    })
}

/// `g_λ(Σ̂) v = Σ_j g_λ(σ_j) (u_j·v) u_j`.
pub fn apply_filter(
    decomp: &SpectralDecomposition,
    kind: FilterKind,
    lambda: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len(decomp.dim(), v.len())?;
    let gains = decomp
        .eigenvalues()
        .iter()
        .map(|&s| filter_value(kind, lambda, s))
        .collect::<Result<Vec<_>>>()?;
    let mut c = decomp.project(v)?;
    for (cj, g) in c.iter_mut().zip(gains) {
        *cj *= g;
    }
    decomp.combine(&c)
}

/// `N̂(λ) = Tr(Σ̂ (Σ̂ + λI)⁻¹) = Σ_j σ_j / (σ_j + λ)`.
pub fn empirical_effective_dimension(decomp: &SpectralDecomposition, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(decomp.eigenvalues().iter().map(|&s| s / (s + lambda)).sum())
}

/// `‖(Σ̂ + λI)^{1/2} v‖₂`. `λ = 0` is allowed.
pub fn weighted_half_norm(decomp: &SpectralDecomposition, lambda: f64, v: &[f64]) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::domain("weight shift must be nonnegative"));
    }
    check_len(decomp.dim(), v.len())?;
    let c = decomp.project(v)?;
    let s: f64 = c
        .iter()
        .zip(decomp.eigenvalues())
        .map(|(cj, &sj)| (sj + lambda) * cj * cj)
        .sum();
    Ok(libm::sqrt(s))
}
