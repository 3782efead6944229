//! Deep shooting solver for graphon games of optimal investment under
//! relative performance criteria.
//!
//! The equilibrium of a continuum of heterogeneous investors, coupled through
//! a graphon, is characterized by a forward-backward SDE. Its initial value
//! `Y_0(u, x)` and diffusion coefficient `Z(t, u, x)` are parameterized by
//! feed-forward networks and fitted by minimizing `E[Y_T^2]` over simulated
//! particle batches.

pub mod error;
pub mod exploitability;
pub mod graphon;
pub mod market;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use graphon::{sample_adjacency, GraphonKernel, LabelGroup};
pub use market::{
    label_grid, sample_batch, sample_batch_seeded, sample_batch_with_labels, seeded_rng, Batch,
    sample_batch_with, EtaSpec, LabelSampling, MarketKind, MarketModel, TimeGrid, XiSpec,
};
pub use model::{ControlNets, NetworkConfig, ZMode, ZNet};
pub use nn::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpSpec, Parameters};
pub use sim::{
    mean_field_term, rollout, rollout_backward, rollout_backward_with, rollout_with,
    shooting_loss, FrozenMeanField, Interaction, LossGradient, Population, RolloutOptions,
    Trajectory,
};
