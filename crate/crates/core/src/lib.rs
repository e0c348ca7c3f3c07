//! Latent-price microstructure model.
//!
//! The efficient price `X` follows `dX = αβμ(X)dt + σdB` with the periodic
//! drift `μ(x) = frac(x) − ½`; quotes are the ε-widened rounding of `X`, and
//! cumulative order flow `Y` carries a noisy copy of `dX/α`. The crate
//! simulates the model, computes moment estimators, runs a grid-based Zakai
//! filter for the hidden fractional price and maximizes the resulting
//! likelihood over a parameter grid.

pub mod error;
pub mod filter;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod pipeline;
pub mod quadrature;
pub mod simulate;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use filter::{run_filter, FilterConfig, FilterGrid, FilterOutput, FilterState, Splitting, Transport, ZakaiFilter};
pub use likelihood::{
    grid_search_mle, invert_beta, log_likelihood, Axis, LikelihoodRoute, MleConfig, MleResult, ParamGrid,
    SurfacePoint,
};
pub use model::{big_sigma, bid_ask, mu, phi, psi, ModelParams};
pub use moments::{estimate_epsilon, estimate_sigma_bar2, estimate_sigma_hat, SigmaHatConfig};
pub use simulate::{mean_exit_time_mc, simulate_path, InitialPrice, MarketPath, SimConfig};
pub use pipeline::{estimate, EstimateConfig};
pub use io::EstimationResult;
