pub mod augment;
pub mod features;
pub mod graphs;
pub mod labellm;
mod logmath;
pub mod loss;
pub mod nn;
pub mod schedule;
pub mod synthdata;
pub mod tensorio;
pub mod tokenizer;
pub mod train;
