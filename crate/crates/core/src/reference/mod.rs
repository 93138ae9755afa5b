//! Ground-truth attention: the materialized forward/backward and the
//! streaming O(n)-memory variants.

mod memeff;
mod standard;

pub use memeff::{
    aux_bound, memeff_backward, memeff_backward_tracked, memeff_forward, memeff_forward_tracked,
    MemeffBackward, MemeffForward, AUX_CONST, AUX_PER_DIM, AUX_PER_ROW,
};
pub(crate) use standard::check_inputs;
pub use standard::{standard_backward, standard_forward, standard_forward_prefix, ForwardArtifacts, Gradients};
