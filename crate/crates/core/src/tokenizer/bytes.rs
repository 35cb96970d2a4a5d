//! Reversible byte ↔ printable-char mapping used for token strings.
//!
//! Printable Latin-1 bytes map to themselves; the remaining 68 bytes
//! (controls, space, NBSP, soft hyphen, ...) map to consecutive code points
//! starting at U+0100. Token strings therefore never contain a space, which
//! keeps `"left right"` merge lines unambiguous.

use std::sync::OnceLock;

struct Tables {
    to_char: [char; 256],
    to_byte: std::collections::HashMap<char, u8>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
        let mut to_char = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..256u32 {
            let c = if printable(b) {
                b
            } else {
                next += 1;
                next - 1
            };
            to_char[b as usize] = char::from_u32(c).expect("valid scalar");
        }
        let to_byte = to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        Tables { to_char, to_byte }
    })
}

pub fn byte_to_char(b: u8) -> char {
    tables().to_char[b as usize]
}

/// Maps raw bytes to their token-string form.
pub fn bytes_to_token(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_char(b)).collect()
}

/// Inverse of [`bytes_to_token`]; `None` if a char is outside the mapping.
pub fn token_to_bytes(token: &str) -> Option<Vec<u8>> {
    let t = tables();
    token.chars().map(|c| t.to_byte.get(&c).copied()).collect()
}
