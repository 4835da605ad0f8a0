//! Energy-based motif representations.
//!
//! A graph's energy is the sum of a learned per-motif energy `φ` over all
//! connected k-node induced subgraphs (CISes). The sum is estimated without
//! enumeration by random walk tours on the higher-order network of CISes,
//! and the model is fit by noise-contrastive estimation.

pub mod adam;
pub mod cli;
pub mod error;
pub mod eval;
pub mod estimate;
pub mod graph;
pub mod hon;
pub mod model;
pub mod motif;
pub mod nce;
pub mod sample;
pub mod synth;
pub mod tour;
pub mod train;

pub use error::{Error, Result};
pub use estimate::{estimate_energy, estimate_energy_with_grad, EnergyEstimate, Estimator};
pub use graph::{load_graph, Graph};
pub use hon::{enumerate_cises, exact_energy_sum, hon_neighbors, KHonNeighborhood};
pub use model::{EnergyModel, Gradient, ModelDims, MotifRepresentation};
pub use motif::{induced_subgraph, KSet, Motif};
pub use tour::{build_supernode, run_tour, validate_supernode, Supernode, SupernodeReport, TourTrace};
