use std::sync::OnceLock;

use lusoforge::tokenizer::{train_tokenizer, TokenizerModel};
use proptest::prelude::*;

fn model() -> &'static TokenizerModel {
    static M: OnceLock<TokenizerModel> = OnceLock::new();
    M.get_or_init(|| {
        let text = include_str!("fixtures/pretrain_pt.txt").to_lowercase();
        train_tokenizer([text.as_str(), "abcdefghijklmnopqrstuvwxyz"], 300, 0).unwrap()
    })
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,8}", 1..12).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn decode_inverts_encode(s in sentence()) {
        let m = model();
        let seq = m.encode(&s, 512, true).unwrap();
        prop_assert_eq!(m.decode(&seq.ids).unwrap(), s);
    }

    #[test]
    fn encoding_respects_length_and_vocab(s in sentence(), t in sentence(), max_len in 3usize..40) {
        let m = model();
        for seq in [m.encode(&s, max_len, true).unwrap(), m.encode_pair(&s, &t, max_len).unwrap()] {
            prop_assert!(seq.ids.len() <= max_len);
            prop_assert_eq!(seq.ids.len(), seq.segments.len());
            prop_assert!(seq.ids.iter().all(|&id| (id as usize) < m.vocab_size()));
        }
    }
}
