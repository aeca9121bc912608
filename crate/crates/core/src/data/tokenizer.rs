//! Byte-level tokenizer: a bijection between bytes and ids 3..=258, with
//! PAD = 0, BOS = 1, EOS = 2.

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 259;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("token id {0} out of range for vocab {VOCAB_SIZE}")]
    IdOutOfRange(u32),
}

/// `[BOS, bytes + 3 ..., EOS]`
pub fn tokenize(bytes: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(bytes.len() + 2);
    out.push(BOS);
    out.extend(bytes.iter().map(|&b| u32::from(b) + BYTE_OFFSET));
    out.push(EOS);
    out
}

/// `[BOS, bytes + 3 ...]` — no terminator, for generation prompts.
pub fn tokenize_prompt(bytes: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(bytes.len() + 1);
    out.push(BOS);
    out.extend(bytes.iter().map(|&b| u32::from(b) + BYTE_OFFSET));
    out
}

/// Map ids back to bytes, skipping PAD/BOS/EOS. Ids at or beyond the vocab
/// are an error.
pub fn detokenize(ids: &[u32]) -> Result<Vec<u8>, TokenError> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id as usize >= VOCAB_SIZE {
            return Err(TokenError::IdOutOfRange(id));
        }
        if id >= BYTE_OFFSET {
            out.push((id - BYTE_OFFSET) as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_string_is_bos_eos() {
        assert_eq!(tokenize(b""), vec![BOS, EOS]);
    }

    #[test]
    fn ab_under_offset_3_layout() {
        assert_eq!(tokenize(b"ab"), vec![BOS, 97 + 3, 98 + 3, EOS]);
    }

    #[test]
    fn out_of_range_id_errors() {
        assert_eq!(
            detokenize(&[1, 259, 2]).unwrap_err(),
            TokenError::IdOutOfRange(259)
        );
    }

    proptest! {
        #[test]
        fn round_trip_any_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)).unwrap(), bytes);
        }
    }
}
