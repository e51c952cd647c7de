//! Physics residuals of the Yajima-Oikawa system for a network surrogate.
//!
//! With `S = u + i v`, `i S_t + λ₁ S_xx + S L = 0` and `L_t = λ₂ (|S|²)_x`
//! split into
//!
//! ```text
//! f_u = -v_t + λ₁ u_xx + u L
//! f_v =  u_t + λ₁ v_xx + v L
//! f_L =  L_t - λ₂ (2 u u_x + 2 v v_x)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{derivative_graph, AdError, DiffValue, Tape};
use crate::network::{forward, NetworkError, ParamVars};

/// Coefficients of the physical system used to generate all data.
pub const TRUE_LAMBDA1: f64 = 0.5;
pub const TRUE_LAMBDA2: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("non-finite residual derivative at (x, t) = ({x}, {t})")]
    NonFinite { x: f64, t: f64 },
}

/// Forward mode keeps `λ₁, λ₂` fixed; inverse mode trains them, starting
/// from the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PhysicsMode {
    Forward { lambda1: f64, lambda2: f64 },
    Inverse { lambda1: f64, lambda2: f64 },
}

impl PhysicsMode {
    pub fn forward_yo() -> Self {
        PhysicsMode::Forward {
            lambda1: TRUE_LAMBDA1,
            lambda2: TRUE_LAMBDA2,
        }
    }

    /// Inverse mode with both coefficients initialised at zero.
    pub fn inverse_from_zero() -> Self {
        PhysicsMode::Inverse {
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn lambdas(&self) -> [f64; 2] {
        match *self {
            PhysicsMode::Forward { lambda1, lambda2 } | PhysicsMode::Inverse { lambda1, lambda2 } => {
                [lambda1, lambda2]
            }
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, PhysicsMode::Inverse { .. })
    }

    pub fn with_lambdas(&self, lambdas: [f64; 2]) -> Self {
        let [lambda1, lambda2] = lambdas;
        match self {
            PhysicsMode::Forward { .. } => PhysicsMode::Forward { lambda1, lambda2 },
            PhysicsMode::Inverse { .. } => PhysicsMode::Inverse { lambda1, lambda2 },
        }
    }

    /// Puts the coefficients on the tape: leaves in inverse mode, constants
    /// otherwise.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> Coefficients<'t> {
        let [l1, l2] = self.lambdas();
        if self.is_trainable() {
            Coefficients {
                lambda1: tape.var(l1),
                lambda2: tape.var(l2),
            }
        } else {
            Coefficients {
                lambda1: tape.constant(l1),
                lambda2: tape.constant(l2),
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Coefficients<'t> {
    pub lambda1: DiffValue<'t>,
    pub lambda2: DiffValue<'t>,
}

#[derive(Debug, Clone, Copy)]
pub struct Residuals<'t> {
    pub f_u: DiffValue<'t>,
    pub f_v: DiffValue<'t>,
    pub f_l: DiffValue<'t>,
}

/// Field values and the partial derivatives the residuals need.
#[derive(Debug, Clone, Copy)]
pub struct FieldJet<'t> {
    pub u: DiffValue<'t>,
    pub v: DiffValue<'t>,
    pub l: DiffValue<'t>,
    pub u_x: DiffValue<'t>,
    pub v_x: DiffValue<'t>,
    pub u_t: DiffValue<'t>,
    pub v_t: DiffValue<'t>,
    pub l_t: DiffValue<'t>,
    pub u_xx: DiffValue<'t>,
    pub v_xx: DiffValue<'t>,
}

impl<'t> FieldJet<'t> {
    /// Differentiates a field `(u, v, L)` that depends on the leaves `x, t`.
    pub fn differentiate(
        fields: [DiffValue<'t>; 3],
        x: DiffValue<'t>,
        t: DiffValue<'t>,
    ) -> Result<Self, ResidualError> {
        let [u, v, l] = fields;
        let u_x = derivative_graph(u, x)?;
        let v_x = derivative_graph(v, x)?;
        let jet = Self {
            u,
            v,
            l,
            u_x,
            v_x,
            u_t: derivative_graph(u, t)?,
            v_t: derivative_graph(v, t)?,
            l_t: derivative_graph(l, t)?,
            u_xx: derivative_graph(u_x, x)?,
            v_xx: derivative_graph(v_x, x)?,
        };
        let values = [
            jet.u_x, jet.v_x, jet.u_t, jet.v_t, jet.l_t, jet.u_xx, jet.v_xx,
        ];
        if values.iter().any(|d| !d.value().is_finite()) {
            return Err(ResidualError::NonFinite {
                x: x.value(),
                t: t.value(),
            });
        }
        Ok(jet)
    }

    pub fn residuals(&self, c: &Coefficients<'t>) -> Residuals<'t> {
        let f_u = -self.v_t + c.lambda1 * self.u_xx + self.u * self.l;
        let f_v = self.u_t + c.lambda1 * self.v_xx + self.v * self.l;
        let flux = (self.u * self.u_x + self.v * self.v_x).scale(2.0);
        let f_l = self.l_t - c.lambda2 * flux;
        Residuals { f_u, f_v, f_l }
    }
}

/// Residuals of the network surrogate at the leaf point `(x, t)`.
pub fn residuals_at<'t>(
    params: &ParamVars<'t>,
    coefficients: &Coefficients<'t>,
    x: DiffValue<'t>,
    t: DiffValue<'t>,
) -> Result<Residuals<'t>, ResidualError> {
    let fields = forward(params, x, t)?;
    Ok(FieldJet::differentiate(fields, x, t)?.residuals(coefficients))
}
