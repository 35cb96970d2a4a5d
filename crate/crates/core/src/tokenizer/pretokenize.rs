//! Splits text into chunks that BPE merges never cross.
//!
//! A chunk is a maximal run of letters, of digits, or of other non-space
//! characters, optionally carrying the single space that precedes it.
//! Whitespace that is not absorbed this way forms its own chunk. The chunks
//! concatenate back to the input exactly.

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn is_combining(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036f | 0x1ab0..=0x1aff | 0x1dc0..=0x1dff | 0x20d0..=0x20ff | 0xfe20..=0xfe2f)
}

fn class_of(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() || is_combining(c) {
        Class::Letter
    } else if c.is_numeric() {
        Class::Digit
    } else {
        Class::Other
    }
}

pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut current: Option<Class> = None;

    for (idx, c) in text.char_indices() {
        let class = class_of(c);
        match current {
            Some(cur) if cur == class => continue,
            None => {}
            Some(Class::Space) => {
                // a trailing plain space moves over to the chunk that follows it
                let split = if text[..idx].ends_with(' ') { idx - 1 } else { idx };
                if split > start {
                    out.push(&text[start..split]);
                }
                start = split;
            }
            Some(_) => {
                out.push(&text[start..idx]);
                start = idx;
            }
        }
        current = Some(class);
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_words_with_leading_space() {
        assert_eq!(pretokenize("Γειά σου, κόσμε 42!"), vec!["Γειά", " σου", ",", " κόσμε", " 42", "!"]);
    }

    #[test]
    fn extra_whitespace_forms_its_own_chunk() {
        assert_eq!(pretokenize("a   b\n\nc"), vec!["a", "  ", " b", "\n\n", "c"]);
        assert_eq!(pretokenize("  x"), vec![" ", " x"]);
        assert_eq!(pretokenize("x  "), vec!["x", "  "]);
    }

    #[test]
    fn empty_input() {
        assert!(pretokenize("").is_empty());
    }

    proptest! {
        #[test]
        fn chunks_concatenate_to_input(s in "\\PC{0,60}") {
            let chunks = pretokenize(&s);
            prop_assert_eq!(chunks.concat(), s.clone());
            prop_assert!(chunks.iter().all(|c| !c.is_empty()));
        }
    }
}
