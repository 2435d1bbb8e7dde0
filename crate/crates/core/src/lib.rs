pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod finetune;
pub mod pretrain;
pub mod rng;
pub mod tokenizer;
