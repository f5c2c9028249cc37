use proptest::prelude::*;

use sap_core::backend::parse_prompt;
use sap_core::prompt::{render_prompt, DEFAULT_MASK_TOKEN, DEFAULT_STOP_TOKEN};
use sap_core::{reverse_example, strip_repetition, Example, LangTag, TaskSpec};

fn words(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,6}", 1..max).prop_map(|w| w.join(" "))
}

fn tags() -> (LangTag, LangTag) {
    (LangTag::from_code("es").unwrap(), LangTag::from_code("en").unwrap())
}

proptest! {
    #[test]
    fn reverse_is_an_involution(src in words(8), tgt in words(8)) {
        let (es, en) = tags();
        let e = Example::new(src, tgt, es, en).unwrap();
        prop_assert_eq!(reverse_example(reverse_example(e.clone())), e);
    }

    #[test]
    fn rendered_prompt_has_one_mask_and_parses_back(
        shots in prop::collection::vec((words(6), words(6)), 0..4),
        query in words(10),
        partial in prop::option::of(words(5)),
    ) {
        let (es, en) = tags();
        let shots: Vec<Example> = shots
            .into_iter()
            .map(|(s, t)| Example::new(s, t, es.clone(), en.clone()).unwrap())
            .collect();
        let n = shots.len();
        let task = TaskSpec::translation(&es, &en, shots).unwrap();
        let partial = partial.unwrap_or_default();
        let prompt = render_prompt(&task, &query, &partial).unwrap();

        prop_assert_eq!(prompt.matches(DEFAULT_MASK_TOKEN).count(), 1);
        prop_assert!(prompt.ends_with(DEFAULT_MASK_TOKEN));
        prop_assert_eq!(prompt.matches(DEFAULT_STOP_TOKEN).count(), 2 * n + 1);
        prop_assert_eq!(prompt.lines().count(), 2 * n + 3);

        let parsed = parse_prompt(&prompt, DEFAULT_MASK_TOKEN, DEFAULT_STOP_TOKEN).unwrap();
        prop_assert_eq!(parsed.query, query.as_str());
        prop_assert_eq!(parsed.partial, partial.as_str());
        prop_assert_eq!(parsed.target_label, "English:");
    }

    #[test]
    fn strip_repetition_is_idempotent(tokens in prop::collection::vec(0u8..3, 0..24), w in 1usize..4) {
        let text = tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
        let once = strip_repetition(&text, w);
        prop_assert_eq!(strip_repetition(&once, w), once.clone());
        prop_assert!(text.starts_with(&once));
    }
}

#[test]
fn reserved_tokens_are_rejected_in_queries() {
    let (es, en) = tags();
    let task = TaskSpec::translation(&es, &en, vec![]).unwrap();
    assert!(render_prompt(&task, "el <X> perro", "").is_err());
    assert!(render_prompt(&task, "el perro</s>", "").is_err());
}

#[test]
fn zero_shot_layout() {
    let (es, en) = tags();
    let task = TaskSpec::translation(&es, &en, vec![]).unwrap();
    let p = render_prompt(&task, "el perro", "the").unwrap();
    assert_eq!(p.lines().last().unwrap(), "English: the <X>");
    assert!(p.lines().nth_back(1).unwrap().starts_with("Spanish: el perro"));
}
