//! Mean field equilibrium solver and Monte Carlo simulator for bilateral
//! agent-to-agent sharing markets.
//!
//! Every period each agent is a client (buyer) or a server (seller) and is
//! randomly matched with an agent of the opposite role. Servers post a
//! unified price `k`; clients either bid `k` or decline. The client's choice
//! depends on its private budget and on the belief `z`, the probability that
//! a matched client declines. The crate solves the single-agent discounted
//! dynamic program for a given belief, builds the induced budget Markov
//! chain, and searches for beliefs that reproduce themselves (`z = γ(z)`).
//!
//! Module map:
//!
//! - [`market`]: parameters, financing models and the per-trade mechanics.
//! - [`dp`]: value iteration on a budget grid and client policy extraction.
//! - [`mfe`]: budget kernel, stationary distribution, equilibrium search.
//! - [`sim`]: large-population Monte Carlo with best-response dynamics.
//! - [`casestudy`]: the two-region photovoltaic market.
//! - [`theory`]: small-scale numerical checks of structural properties.

pub mod casestudy;
pub mod dp;
pub mod error;
pub mod market;
pub mod mfe;
pub mod sim;
pub mod theory;

pub use dp::{Belief, BidAction, ClientPolicy, DpProblem, GridSpec, ValueFunction};
pub use error::{Error, Result};
pub use market::{AgentState, LoanModel, MarketParams, RegenerationDistribution, TradeOutcome};
pub use mfe::{BudgetKernel, FixedPointReport, MfeOptions, StationaryDistribution, TypeProfile};
pub use sim::{EpochMetrics, Population, SimConfig, SimOutput};
