//! Binary slot dumps.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    4 bytes  "QSLT"
//! slots    u32      power of two
//! level    u32      remaining modulus bits
//! scale    u32      scale exponent
//! boots    u32      bootstrap count
//! payload  slots x (f64 re, f64 im)
//! ```

use num_complex::Complex64;

use super::{HeError, SimCiphertext};

pub const DUMP_MAGIC: &[u8; 4] = b"QSLT";
const HEADER: usize = 20;
/// Refuse dumps claiming more slots than the largest supported ring.
const MAX_SLOTS: usize = 1 << (super::MAX_LOG_N - 1);

pub fn encode_ciphertext(ct: &SimCiphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 16 * ct.slots.len());
    out.extend_from_slice(DUMP_MAGIC);
    for v in [ct.slots.len() as u32, ct.level_bits, ct.scale_bits, ct.boot_count] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ct.slots {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode_ciphertext(bytes: &[u8]) -> Result<SimCiphertext, HeError> {
    let err = |m: String| Err(HeError::Dump(m));
    if bytes.len() < HEADER {
        return err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != DUMP_MAGIC {
        return err("bad magic".into());
    }
    let slots = u32_at(bytes, 4) as usize;
    if !slots.is_power_of_two() || slots > MAX_SLOTS {
        return err(format!("slot count {slots} is not a supported power of two"));
    }
    let want = HEADER + 16 * slots;
    if bytes.len() != want {
        return err(format!("expected {want} bytes, found {}", bytes.len()));
    }
    let mut values = Vec::with_capacity(slots);
    for k in 0..slots {
        let at = HEADER + 16 * k;
        let (re, im) = (f64_at(bytes, at), f64_at(bytes, at + 8));
        if !(re.is_finite() && im.is_finite()) {
            return err(format!("slot {k} is not finite"));
        }
        values.push(Complex64::new(re, im));
    }
    Ok(SimCiphertext {
        slots: values,
        level_bits: u32_at(bytes, 8),
        scale_bits: u32_at(bytes, 12),
        boot_count: u32_at(bytes, 16),
    })
}
