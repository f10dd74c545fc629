//! Round-trip identity and special-token atomicity under fuzzed inputs.

use std::sync::LazyLock;

use desklm_core::tokenizer::{
    train_bpe, SpecialTokens, Vocabulary, BEGIN_OF_TEXT, END_HEADER, EOT, START_HEADER,
};
use proptest::prelude::*;

static VOCAB: LazyLock<Vocabulary> = LazyLock::new(|| {
    let corpus = vec![
        "il gatto dorme sul divano mentre il cane gioca".to_string(),
        "the quick brown fox jumps over the lazy dog".to_string(),
        "perché la risposta è sempre quarantadue, chiedi pure".to_string(),
        "numbers 0123456789 and symbols !@#$%^&*()".to_string(),
        "多言語のテキストもばっちり".to_string(),
    ];
    train_bpe(&corpus, 256 + 4 + 64, &SpecialTokens::default()).unwrap()
});

fn trained_vocab() -> &'static Vocabulary {
    &VOCAB
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_identity(s in any::<String>()) {
        let v = trained_vocab();
        let ids = v.encode(&s, false);
        prop_assert_eq!(v.decode(&ids).unwrap(), s);
    }

    #[test]
    fn no_special_ids_without_parse_special(
        prefix in any::<String>(),
        which in 0usize..4,
        suffix in any::<String>(),
        cut in 1usize..17,
    ) {
        let v = trained_vocab();
        let literal = [BEGIN_OF_TEXT, EOT, START_HEADER, END_HEADER][which];
        // Adversarial embeddings: the full literal, and a sliced fragment of
        // it, surrounded by arbitrary text.
        let frag = &literal[..cut.min(literal.len())];
        let text = format!("{prefix}{literal}{suffix}{frag}");
        let ids = v.encode(&text, false);
        prop_assert!(ids.iter().all(|&id| !v.is_special(id)));
        prop_assert_eq!(v.decode(&ids).unwrap(), text);
    }

    #[test]
    fn parse_special_round_trips_and_is_atomic(
        a in "[a-zà-ù ]{0,24}",
        b in "[a-zà-ù ]{0,24}",
    ) {
        let v = trained_vocab();
        let text = format!("{BEGIN_OF_TEXT}{a}{EOT}{b}");
        let ids = v.encode(&text, true);
        // Exactly one begin id and one eot id, each a single token.
        let bos = v.begin_of_text_id();
        let eot = v.eot_id();
        prop_assert_eq!(ids.iter().filter(|&&i| i == bos).count(), 1);
        prop_assert_eq!(ids.iter().filter(|&&i| i == eot).count(), 1);
        prop_assert_eq!(v.decode(&ids).unwrap(), text);
    }

    #[test]
    fn byte_length_bookkeeping_exact(s in any::<String>()) {
        let v = trained_vocab();
        let ids = v.encode(&s, false);
        let decoded = v.decode(&ids).unwrap();
        prop_assert_eq!(decoded.len(), s.len());
        // Token byte strings partition the input.
        let total: usize = ids.iter().map(|&id| v.token_bytes(id).unwrap().len()).sum();
        prop_assert_eq!(total, s.len());
    }

    #[test]
    fn token_byte_strings_stay_unique_and_files_are_lossless(
        docs in proptest::collection::vec("[abcdx ]{4,40}", 1..8),
    ) {
        // Corpora over a tiny alphabet provoke overlapping merge paths
        // (e.g. a+bc vs ab+c both spelling "abc"); training must keep byte
        // strings unique so the string-pair merge file reloads exactly.
        let v = train_bpe(&docs, 256 + 4 + 24, &SpecialTokens::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for id in 0..v.size() as u32 {
            prop_assert!(
                seen.insert(v.token_bytes(id).unwrap().to_vec()),
                "duplicate token bytes at id {}", id
            );
        }
        let reloaded = Vocabulary::from_json(&v.to_json()).unwrap();
        for doc in &docs {
            prop_assert_eq!(reloaded.encode(doc, false), v.encode(doc, false));
        }
    }
}
