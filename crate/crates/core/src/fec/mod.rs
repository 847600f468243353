//! Forward error correction for the coded link: the rate-1/2 (171,133)
//! convolutional code with soft-decision Viterbi decoding, random
//! interleaving, and the BPSK bit mapping.
//!
//! LLR convention throughout: positive values favor bit 0 (symbol +1).

mod conv;
mod interleaver;

pub use conv::{ConvCodeSpec, TAIL_BITS};
pub use interleaver::Interleaver;

/// Coded bit 0 maps to +1, bit 1 to -1.
pub fn bits_to_bpsk(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect()
}

pub fn bpsk_to_bits(symbols: &[f64]) -> Vec<u8> {
    symbols.iter().map(|&x| u8::from(x < 0.0)).collect()
}
