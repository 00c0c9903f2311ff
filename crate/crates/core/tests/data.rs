use std::io::Cursor;
use std::path::Path;

use gausscse::data::{parse_jsonl, save_jsonl, write_jsonl};
use gausscse::{
    build_triplets, combine, generate_synthetic, load_jsonl, tokenize, Label, NliExample, SynthConfig,
};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Entailment), Just(Label::Neutral), Just(Label::Contradiction)]
}

fn example() -> impl Strategy<Value = NliExample> {
    ("\\PC{1,30}", "[ -~\n\t\"\\\\é]{1,30}", label(), prop::option::of(any::<bool>())).prop_map(
        |(premise, hypothesis, label, bilateral)| NliExample { premise, hypothesis, label, bilateral },
    )
}

/// Reference pairing: walk premises in first-appearance order and zip.
fn brute_triplets(examples: &[NliExample]) -> (Vec<(String, String, String)>, usize) {
    let mut premises: Vec<&str> = Vec::new();
    for e in examples {
        if !premises.contains(&e.premise.as_str()) {
            premises.push(&e.premise);
        }
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    for p in premises {
        let of = |l: Label| -> Vec<&str> {
            examples
                .iter()
                .filter(|e| e.premise == p && e.label == l)
                .map(|e| e.hypothesis.as_str())
                .collect()
        };
        let (ent, con) = (of(Label::Entailment), of(Label::Contradiction));
        if ent.is_empty() || con.is_empty() {
            dropped += 1;
        }
        for k in 0..ent.len().min(con.len()) {
            out.push((p.to_string(), ent[k].to_string(), con[k].to_string()));
        }
    }
    (out, dropped)
}

proptest! {
    #[test]
    fn jsonl_round_trips(examples in prop::collection::vec(example(), 0..20)) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &examples).unwrap();
        let back = parse_jsonl(Cursor::new(buf), Path::new("mem")).unwrap();
        prop_assert_eq!(back.skipped, 0);
        prop_assert_eq!(back.examples, examples);
    }

    #[test]
    fn triplets_match_brute_force(
        raw in prop::collection::vec((0usize..4, 0usize..6, label()), 0..30),
    ) {
        let examples: Vec<NliExample> = raw
            .iter()
            .map(|&(p, h, l)| NliExample::new(format!("p{p}"), format!("h{h}"), l))
            .collect();
        let set = build_triplets(&examples);
        let (expected, dropped) = brute_triplets(&examples);
        let got: Vec<_> = set
            .triplets
            .iter()
            .map(|t| (t.premise.clone(), t.entailed.clone(), t.contradicted.clone()))
            .collect();
        prop_assert_eq!(got, expected);
        prop_assert_eq!(set.dropped_premises, dropped);
    }
}

#[test]
fn two_by_two_group_gives_two_ordered_triplets() {
    let examples = [
        NliExample::new("p", "e1", Label::Entailment),
        NliExample::new("p", "c1", Label::Contradiction),
        NliExample::new("p", "e2", Label::Entailment),
        NliExample::new("p", "n", Label::Neutral),
        NliExample::new("p", "c2", Label::Contradiction),
    ];
    let set = build_triplets(&examples);
    let pairs: Vec<_> = set.triplets.iter().map(|t| (t.entailed.as_str(), t.contradicted.as_str())).collect();
    assert_eq!(pairs, [("e1", "c1"), ("e2", "c2")]);
}

#[test]
fn file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let examples = generate_synthetic(&SynthConfig { count: 50, ..SynthConfig::default() }).unwrap();
    save_jsonl(&path, &examples).unwrap();
    assert_eq!(load_jsonl(&path).unwrap().examples, examples);

    let good = r#"{"premise":"p","hypothesis":"h","label":"entailment"}"#;
    std::fs::write(&path, format!("{good}\n{good}\n{good}\n{{not json\n")).unwrap();
    let err = load_jsonl(&path).unwrap_err().to_string();
    assert!(err.contains(":4:"), "{err}");
    assert!(load_jsonl(dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn combine_preserves_order_and_duplicates() {
    let x = vec![NliExample::new("a", "b", Label::Entailment)];
    let y = vec![NliExample::new("a", "b", Label::Entailment), NliExample::new("c", "d", Label::Neutral)];
    assert_eq!(combine(&[&[], &x]), x);
    assert_eq!(combine(&[&x]), x);
    let xy = combine(&[&x, &y]);
    assert_eq!(xy.len(), 3);
    assert_eq!(xy[1..], y[..]);
}

#[test]
fn synthetic_corpus_properties() {
    let config = SynthConfig { count: 300, seed: 9, ..SynthConfig::default() };
    let a = generate_synthetic(&config).unwrap();
    assert_eq!(a, generate_synthetic(&config).unwrap());
    assert_eq!(a.len(), 600);
    for pair in a.chunks(2) {
        let (ent, con) = (&pair[0], &pair[1]);
        assert_eq!((ent.label, con.label), (Label::Entailment, Label::Contradiction));
        let premise = tokenize(&ent.premise);
        let hyp = tokenize(&ent.hypothesis);
        assert!(hyp.len() < premise.len());
        // strict subsequence
        let mut it = premise.iter();
        assert!(hyp.iter().all(|h| it.any(|p| p == h)));
        assert!(tokenize(&con.hypothesis).iter().all(|t| !premise.contains(t)));
    }
    assert_eq!(build_triplets(&a).triplets.len(), 300);
}
