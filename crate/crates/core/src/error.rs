use thiserror::Error;

/// Errors raised by the solvers.
///
/// Variants are grouped by the exit code a front end should map them to:
/// precondition/admissibility failures versus solver divergence.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point outside the transonic trajectory: {0}")]
    OutsideTrajectory(String),

    #[error("no root found: {0}")]
    NoRoot(String),

    #[error("requested extent {requested} exceeds the maximal length l_max = {l_max}")]
    Extent { requested: f64, l_max: f64 },

    #[error("admissibility violated: {0}")]
    Admissibility(String),

    #[error("interface topology error: {0}")]
    Topology(String),

    #[error("coefficient extension failed: {0}")]
    ExtensionFailure(String),

    #[error("singular linear system (pivot {pivot:e} at row {row}); condition estimate {cond:e}")]
    Singular { row: usize, pivot: f64, cond: f64 },

    #[error("continuation did not converge; last two H1 gaps {prev:e}, {last:e}")]
    Continuation { prev: f64, last: f64 },

    #[error("coupled alternation does not contract: {0}")]
    CouplingDivergence(String),

    #[error("stream function value outside the inlet range: {0}")]
    Range(String),

    #[error("flux drift {drift:e} exceeds tolerance {tol:e}")]
    DivergenceDefect { drift: f64, tol: f64 },

    #[error("non-positive pressure argument at node ({i}, {j})")]
    Vacuum { i: usize, j: usize },

    #[error("fixed-point iteration diverged; update history {0:?}")]
    Divergence(Vec<f64>),

    #[error("energy identity defect {defect:e} exceeds {bound:e}")]
    QuadratureInconsistency { defect: f64, bound: f64 },

    #[error("quadrature did not reach tolerance: {0}")]
    Quadrature(String),
}

impl Error {
    /// True for errors that signal solver divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_)
                | Error::Continuation { .. }
                | Error::CouplingDivergence(_)
                | Error::Singular { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
