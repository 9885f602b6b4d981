//! Three-sector transfer model.
//!
//! GDP shares move between the agrarian (`a`), industrial (`i`) and service
//! (`s`) sectors as a function of `g`, the natural log of GDP per capita:
//!
//! ```text
//! da/dg = -k1 a
//! di/dg = alpha k1 a - k2 i
//! ds/dg = (1 - alpha) k1 a + k2 i
//! ```
//!
//! with the boundary condition `a(g0) = 1`, `i(g0) = s(g0) = 0`. Everything
//! here is a pure function of its inputs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used to detect the `k1 = k2`, `k = 0` and `alpha = 1`
/// degeneracies.
pub const EPS_DEG: f64 = 1e-9;

/// `true` when `x` and `y` coincide up to [`EPS_DEG`], measured relative to
/// their magnitude (absolute below unit magnitude).
pub fn nearly_equal(x: f64, y: f64) -> bool {
    (x - y).abs() <= EPS_DEG * x.abs().max(y.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} = {value} lies on a classification boundary")]
    Boundary { name: &'static str, value: f64 },
    #[error("collapse transform needs a positive agrarian share, got {0}")]
    NonPositiveShare(f64),
    #[error("display transform needs negative coordinates, got ({0}, {1})")]
    DisplayDomain(f64, f64),
    #[error("degenerate parameters: {0}")]
    Degenerate(&'static str),
}

/// GDP fractions of the three sectors at one value of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorShares {
    pub a: f64,
    pub i: f64,
    pub s: f64,
}

impl SectorShares {
    pub const fn new(a: f64, i: f64, s: f64) -> Self {
        Self { a, i, s }
    }

    pub fn sum(&self) -> f64 {
        self.a + self.i + self.s
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.i.is_finite() && self.s.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.i, self.s]
    }
}

/// Country-specific model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Transfer rate out of the agrarian sector.
    pub k1: f64,
    /// Transfer rate from industry to services.
    pub k2: f64,
    /// Fraction of the agrarian outflow that goes to industry.
    pub alpha: f64,
    /// Value of `g` at which the economy is purely agrarian.
    pub g0: f64,
}

impl ModelParams {
    pub const fn new(k1: f64, k2: f64, alpha: f64, g0: f64) -> Self {
        Self { k1, k2, alpha, g0 }
    }

    /// Right-hand side of the transfer ODE, `(da/dg, di/dg, ds/dg)`.
    pub fn rhs(&self, shares: &SectorShares) -> (f64, f64, f64) {
        let out_a = self.k1 * shares.a;
        let to_i = self.alpha * out_a;
        // Built from the same two fluxes so the three components cancel.
        let to_s = out_a - to_i;
        let i_to_s = self.k2 * shares.i;
        (-out_a, to_i - i_to_s, to_s + i_to_s)
    }

    /// Agrarian share `exp(-k1 (g - g0))`.
    pub fn share_a(&self, g: f64) -> f64 {
        (-self.k1 * (g - self.g0)).exp()
    }

    /// Industrial share from the closed-form solution.
    ///
    /// The difference of exponentials is evaluated by factoring out the
    /// larger exponential and using `expm1` on a non-positive argument, so it
    /// neither cancels nor overflows. When `k1` and `k2` coincide up to
    /// [`EPS_DEG`] the analytic limit `alpha k1 t exp(-k1 t)` is used.
    pub fn share_i(&self, g: f64) -> f64 {
        let t = g - self.g0;
        if nearly_equal(self.k1, self.k2) {
            return self.alpha * self.k1 * t * (-self.k1 * t).exp();
        }
        let dk = self.k2 - self.k1;
        let x = dk * t;
        let diff = if x <= 0.0 {
            (-self.k2 * t).exp() * x.exp_m1()
        } else {
            -(-self.k1 * t).exp() * (-x).exp_m1()
        };
        self.alpha * self.k1 / dk * diff
    }

    /// Service share, the remainder `1 - a - i`.
    pub fn share_s(&self, g: f64) -> f64 {
        1.0 - self.share_a(g) - self.share_i(g)
    }

    pub fn shares(&self, g: f64) -> SectorShares {
        let a = self.share_a(g);
        let i = self.share_i(g);
        SectorShares::new(a, i, 1.0 - a - i)
    }

    /// Location of the industrial maximum, if the trajectory has one.
    ///
    /// A maximum exists when `k1` and `k2` are nonzero and share a sign
    /// (types 1, 2, 7 and 8).
    pub fn g_max_industry(&self) -> Option<f64> {
        let (k1, k2) = (self.k1, self.k2);
        if nearly_equal(k1, 0.0) || nearly_equal(k2, 0.0) || k1.signum() != k2.signum() {
            return None;
        }
        if nearly_equal(k1, k2) {
            return Some(1.0 / k1 + self.g0);
        }
        Some((k1 / k2).ln() / (k1 - k2) + self.g0)
    }

    /// Transfer type from the signs of `k1`, `k2` and the side of `alpha`
    /// relative to 1.
    pub fn classify(&self) -> Result<TransferType, ModelError> {
        if nearly_equal(self.k1, 0.0) {
            return Err(ModelError::Boundary {
                name: "k1",
                value: self.k1,
            });
        }
        if nearly_equal(self.k2, 0.0) {
            return Err(ModelError::Boundary {
                name: "k2",
                value: self.k2,
            });
        }
        if self.alpha <= EPS_DEG || nearly_equal(self.alpha, 1.0) || !self.alpha.is_finite() {
            return Err(ModelError::Boundary {
                name: "alpha",
                value: self.alpha,
            });
        }
        let mut id = 1;
        if self.k1 < 0.0 {
            id += 4;
        }
        if self.k2 < 0.0 {
            id += 2;
        }
        if self.alpha > 1.0 {
            id += 1;
        }
        Ok(TransferType::from_id(id).expect("id in 1..=8"))
    }

    /// Maps an observed `(a, i)` pair onto the collapse coordinates
    /// `x = a - a^(k2/k1)` and `y = (k2 - k1) / (alpha k1) * i`.
    ///
    /// Model-exact shares land on the diagonal `y = x`. Values of `a` above
    /// one are accepted and go through the same formula.
    pub fn collapse_transform(&self, a_obs: f64, i_obs: f64) -> Result<(f64, f64), ModelError> {
        if !(a_obs > 0.0) {
            return Err(ModelError::NonPositiveShare(a_obs));
        }
        if nearly_equal(self.k1, 0.0) {
            return Err(ModelError::Degenerate("k1 = 0 in collapse transform"));
        }
        if self.alpha.abs() <= EPS_DEG {
            return Err(ModelError::Degenerate("alpha = 0 in collapse transform"));
        }
        let x = a_obs - a_obs.powf(self.k2 / self.k1);
        let y = (self.k2 - self.k1) / (self.alpha * self.k1) * i_obs;
        Ok((x, y))
    }

    /// Plotting coordinates for a collapse point: unchanged except for type 3,
    /// whose negative coordinates are sign-flipped and log-transformed.
    pub fn collapse_display(&self, x: f64, y: f64) -> Result<(f64, f64), ModelError> {
        let kind = self.classify()?;
        if kind.id() != 3 {
            return Ok((x, y));
        }
        if !(x < 0.0 && y < 0.0) {
            return Err(ModelError::DisplayDomain(x, y));
        }
        Ok(((-x).ln(), (-y).ln()))
    }

    pub fn to_alt(&self) -> AltParams {
        let k_ai = self.alpha * self.k1;
        AltParams {
            k_ai,
            k_is: self.k2,
            k_as: self.k1 - k_ai,
            g0: self.g0,
        }
    }

    pub fn from_alt(alt: &AltParams) -> Result<Self, ModelError> {
        let k1 = alt.k_ai + alt.k_as;
        if nearly_equal(k1, 0.0) {
            return Err(ModelError::Degenerate("k_ai + k_as = 0"));
        }
        Ok(Self {
            k1,
            k2: alt.k_is,
            alpha: alt.k_ai / k1,
            g0: alt.g0,
        })
    }
}

/// Pairwise-flow parameterization: `da/dg = -(k_ai + k_as) a`,
/// `di/dg = k_ai a - k_is i`, `ds/dg = k_as a + k_is i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltParams {
    pub k_ai: f64,
    pub k_is: f64,
    pub k_as: f64,
    pub g0: f64,
}

/// Direction of flow between two sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    /// From the earlier sector to the later one.
    Forward,
    /// From the later sector back to the earlier one.
    Backward,
    /// Later to earlier while `a` dominates, earlier to later while `i` does.
    Mixed,
    /// Earlier to later while `a` dominates, later to earlier while `i` does.
    MixedReversed,
    /// No direct flow; the pair exchanges through the third sector.
    Indirect,
}

impl Flow {
    fn arrow(self) -> &'static str {
        match self {
            Flow::Forward => "->",
            Flow::Backward => "<-",
            Flow::Mixed => "<=>",
            Flow::MixedReversed => "<=>*",
            Flow::Indirect => "--",
        }
    }
}

/// Flows between the pairs `(a, i)`, `(i, s)` and `(a, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Directions {
    pub a_i: Flow,
    pub i_s: Flow,
    pub a_s: Flow,
}

impl fmt::Display for Directions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "a{}i, i{}s, a{}s",
            self.a_i.arrow(),
            self.i_s.arrow(),
            self.a_s.arrow()
        )
    }
}

/// One of the eight sectoral transfer types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransferType {
    id: u8,
    directions: Directions,
}

impl TransferType {
    pub fn from_id(id: u8) -> Option<Self> {
        use Flow::*;
        let (a_i, i_s, a_s) = match id {
            1 => (Forward, Forward, Forward),
            2 => (Forward, Mixed, Indirect),
            3 => (Forward, Backward, Forward),
            4 => (Forward, Backward, Indirect),
            5 => (Backward, Forward, Backward),
            6 => (Backward, Forward, Indirect),
            7 => (Backward, Backward, Backward),
            8 => (Backward, MixedReversed, Indirect),
            _ => return None,
        };
        Some(Self {
            id,
            directions: Directions { a_i, i_s, a_s },
        })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn directions(&self) -> Directions {
        self.directions
    }

    /// Only types 1 and 2 converge to a pure service economy as `g` grows.
    pub fn is_convergent(&self) -> bool {
        matches!(self.id, 1 | 2)
    }

    /// Whether the industrial share has an interior maximum.
    pub fn has_industrial_maximum(&self) -> bool {
        matches!(self.id, 1 | 2 | 7 | 8)
    }
}

impl fmt::Display for TransferType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type {}", self.id)
    }
}
