//! Logistic regression trained with quadratic-gradient NAG, in plaintext and
//! over a simulated leveled homomorphic-encryption slot machine.

pub mod data;
pub mod enc_train;
pub mod encoding;
pub mod he;
pub mod optim;
pub mod quadgrad;
pub mod sigmoid;
