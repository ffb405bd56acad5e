//! Local and global alignment between the two domains' latent spaces.

mod gdot;
mod w2;

pub use gdot::{
    gdot_sinkhorn, gw_objective, sinkhorn_scaling, write_coupling_tsv, CostTensor, Coupling,
    Scaling, SinkhornConfig,
};
pub use w2::{gaussian_w2, global_alignment_loss, local_alignment_loss, prior_distances};
