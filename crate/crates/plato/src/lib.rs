pub mod baselines;
pub mod checksum;
pub mod data;
pub mod synth;
pub mod kg;
pub mod model;
pub mod nn;
pub mod seed;
pub mod embed;
pub mod pipeline;
pub mod search;
pub mod train;
