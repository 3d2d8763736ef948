//! Group-invariant POMDPs end to end: finite-group representations,
//! equivariant recurrent actor-critic networks, the CarFlag domains, a
//! recurrent A2C trainer and exact History-MDP oracles.

pub mod agent;
pub mod autodiff;
pub mod envs;
pub mod equi_nn;
pub mod group;
pub mod pomdp;
