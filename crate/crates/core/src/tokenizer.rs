//! Byte-level tokenizer: one token per byte plus BOS/EOS specials.
//!
//! No external vocabulary is involved; token ids 0..=255 are raw byte
//! values, 256 is BOS and 257 is EOS.

use alloc::string::String;
use alloc::vec::Vec;

pub const BOS: u16 = 256;
pub const EOS: u16 = 257;
/// Smallest legal vocabulary: 256 byte tokens plus the two specials.
pub const MIN_VOCAB: usize = 258;

pub type TokenId = u16;

/// BOS followed by one token per UTF-8 byte.
pub fn tokenize(text: &str) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(text.len() + 1);
    ids.push(BOS);
    ids.extend(text.bytes().map(|b| b as TokenId));
    ids
}

/// Inverse of [`tokenize`]: specials are dropped, bytes decoded as UTF-8.
pub fn detokenize(ids: &[TokenId]) -> String {
    String::from_utf8_lossy(&ids_to_bytes(ids)).into_owned()
}

pub fn bytes_to_ids(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| b as TokenId).collect()
}

/// Keeps byte tokens only; BOS/EOS and anything above 255 are skipped.
pub fn ids_to_bytes(ids: &[TokenId]) -> Vec<u8> {
    ids.iter().filter(|&&id| id < 256).map(|&id| id as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_bos_only() {
        assert_eq!(tokenize(""), alloc::vec![BOS]);
    }

    #[test]
    fn ascii_bytes() {
        assert_eq!(tokenize("AB"), alloc::vec![BOS, 65, 66]);
    }

    #[test]
    fn round_trip() {
        for t in ["", "AB", "héllo wörld", "日本語", "tab\tand\nnewline"] {
            assert_eq!(detokenize(&tokenize(t)), t);
        }
    }
}
