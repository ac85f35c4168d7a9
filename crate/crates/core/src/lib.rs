pub mod ahe;
pub mod arith;
pub mod hash;
pub mod ring;
pub mod sharing;
pub mod committee;
pub mod dpcore;
pub mod attest;
pub mod sig;
pub mod aggproto;
pub mod merkle;
pub mod board;
pub mod harness;
