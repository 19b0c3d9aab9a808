//! Hashing tokenizer: whole-word and character-trigram feature hashing into
//! a closed bucket space, with reserved ids for control and locale tokens.

use localeq_core::LocaleId;
use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK_LOCALE: u32 = 3;
/// First locale token id; locale `l` maps to `LOCALE_BASE + l`.
pub const LOCALE_BASE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub n_buckets: usize,
    pub max_len: usize,
    pub n_locales: usize,
}

impl TokenizerConfig {
    /// Total embedding rows: reserved ids, locale tokens, hash buckets.
    pub fn vocab_total(&self) -> usize {
        LOCALE_BASE as usize + self.n_locales + self.n_buckets
    }

    fn bucket_offset(&self) -> u32 {
        LOCALE_BASE + self.n_locales as u32
    }
}

/// Locale prefix of a tokenized query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalePrefix {
    /// No locale conditioning (non-unified and locale-agnostic inputs).
    None,
    Locale(LocaleId),
    /// Locale not present in the registry; the reserved unknown token.
    Unknown,
}

/// A tokenized query: `ids[0]` is always CLS and `ids.len() <= max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// 64-bit FNV-1a over UTF-8 bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

fn bucket_id(config: &TokenizerConfig, text: &str) -> u32 {
    let h = fnv1a(text.as_bytes()) % config.n_buckets as u64;
    config.bucket_offset() + h as u32
}

/// Tokenizes a query: Unicode lowercase, whitespace split; each word
/// contributes its whole-word bucket followed by its character-trigram
/// buckets. Layout is `[CLS]` (plus locale token and `[SEP]` when a prefix
/// is given) then the buckets, truncated to `max_len`.
pub fn tokenize(query: &str, prefix: LocalePrefix, config: &TokenizerConfig) -> TokenSequence {
    assert!(config.max_len >= 3, "max_len must be at least 3");
    let mut ids = Vec::with_capacity(config.max_len);
    ids.push(CLS);
    match prefix {
        LocalePrefix::None => {}
        LocalePrefix::Locale(locale) => {
            debug_assert!((locale.0 as usize) < config.n_locales);
            ids.push(LOCALE_BASE + locale.0);
            ids.push(SEP);
        }
        LocalePrefix::Unknown => {
            ids.push(UNK_LOCALE);
            ids.push(SEP);
        }
    }
    let lowered = query.to_lowercase();
    'words: for word in lowered.split_whitespace() {
        if ids.len() >= config.max_len {
            break;
        }
        ids.push(bucket_id(config, word));
        let chars: Vec<char> = word.chars().collect();
        for w in chars.windows(3) {
            if ids.len() >= config.max_len {
                break 'words;
            }
            let tri: String = w.iter().collect();
            ids.push(bucket_id(config, &tri));
        }
    }
    ids.truncate(config.max_len);
    TokenSequence { ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> TokenizerConfig {
        TokenizerConfig {
            n_buckets: 64,
            max_len: 16,
            n_locales: 3,
        }
    }

    #[test]
    fn empty_query_with_locale_is_cls_locale_sep() {
        let seq = tokenize("", LocalePrefix::Locale(LocaleId(0)), &config());
        assert_eq!(seq.ids, vec![CLS, LOCALE_BASE, SEP]);
        let bare = tokenize("", LocalePrefix::None, &config());
        assert_eq!(bare.ids, vec![CLS]);
    }

    #[test]
    fn locale_prefix_shifts_but_preserves_suffix() {
        let cfg = TokenizerConfig {
            max_len: 32,
            ..config()
        };
        let with = tokenize("harry potter mug", LocalePrefix::Locale(LocaleId(2)), &cfg);
        let without = tokenize("harry potter mug", LocalePrefix::None, &cfg);
        assert_eq!(with.ids[1], LOCALE_BASE + 2);
        assert_eq!(with.ids[2], SEP);
        assert_eq!(&with.ids[3..], &without.ids[1..]);
    }

    #[test]
    fn buckets_match_reference_fnv() {
        let cfg = config();
        let seq = tokenize("mug", LocalePrefix::None, &cfg);
        // Whole word plus one trigram ("mug" has exactly 3 chars).
        let offset = LOCALE_BASE + cfg.n_locales as u32;
        let expect = |s: &str| offset + (localeq_core::oracles::fnv1a64(s.as_bytes()) % 64) as u32;
        assert_eq!(seq.ids, vec![CLS, expect("mug"), expect("mug")]);

        let seq = tokenize("Harry potter", LocalePrefix::None, &cfg);
        assert_eq!(
            seq.ids,
            vec![
                CLS,
                expect("harry"),
                expect("har"),
                expect("arr"),
                expect("rry"),
                expect("potter"),
                expect("pot"),
                expect("ott"),
                expect("tte"),
                expect("ter"),
            ]
        );
    }

    #[test]
    fn truncation_and_unicode_lowercase() {
        let cfg = TokenizerConfig {
            max_len: 5,
            ..config()
        };
        let seq = tokenize("zażółć gęślą jaźń", LocalePrefix::Locale(LocaleId(1)), &cfg);
        assert_eq!(seq.len(), 5);
        assert_eq!(seq.ids[0], CLS);
        // Uppercase and lowercase forms hash identically.
        let a = tokenize("MUG", LocalePrefix::None, &cfg);
        let b = tokenize("mug", LocalePrefix::None, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn short_words_have_no_trigrams() {
        let cfg = config();
        let seq = tokenize("ab", LocalePrefix::None, &cfg);
        assert_eq!(seq.len(), 2);
    }

    #[test]
    fn all_ids_below_vocab_total() {
        let cfg = config();
        let seq = tokenize(
            "some reasonably long query string here",
            LocalePrefix::Unknown,
            &cfg,
        );
        assert!(seq.ids.iter().all(|&id| (id as usize) < cfg.vocab_total()));
        assert_eq!(seq.ids[1], UNK_LOCALE);
    }
}
