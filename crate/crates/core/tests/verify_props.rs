use cika::simulator::verify::{answers_match, extract_boxed, normalize, verify};
use proptest::prelude::*;

fn answer() -> impl Strategy<Value = String> {
    prop_oneof![
        "[-+]?[0-9]{1,4}(\\.[0-9]{1,3})?",
        "[a-z ]{0,8}",
        "\\\\frac\\{[0-9]\\}\\{[1-9]\\}",
        "[-0-9./ ]{0,6}",
        any::<String>(),
    ]
}

proptest! {
    #[test]
    fn matching_is_reflexive(a in answer()) {
        prop_assert!(answers_match(&a, &a));
    }

    #[test]
    fn matching_is_symmetric(a in answer(), b in answer()) {
        prop_assert_eq!(answers_match(&a, &b), answers_match(&b, &a));
    }

    #[test]
    fn normalization_is_idempotent(a in answer()) {
        let once = normalize(&a);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn boxed_answer_is_extracted(a in "[0-9a-z+-]{1,10}") {
        let text = format!("some work \\boxed{{{a}}} done");
        prop_assert_eq!(extract_boxed(&text), Some(a.clone()));
        prop_assert!(verify(&text, &a).strict);
    }
}

#[test]
fn equivalent_forms_agree() {
    assert!(answers_match("0.5", "1/2"));
    assert!(answers_match("42", " 42.0 "));
    assert!(!answers_match("42", "43"));
}
