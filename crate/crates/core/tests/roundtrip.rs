use capqual_core::codec::{canonical_serialize, parse_record, read_records, write_records_to};
use capqual_core::contrastive::TrainingExample;
use capqual_core::enhance::parse_streaming;
use capqual_core::scores::{Assessment, CriterionScores};
use capqual_core::sft::{compose_target, format_record, parse_target, InstructionPools};
use capqual_core::{AnnotationRecord, CaptionVariant, DatasetVariant, EnhancedPair, SftRecord, Split};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z ,]{1,30}",
        Just("<overall>".to_string()),
        Just("quote \" and \\ slash".to_string()),
        Just("naïve café 画像 <<overall>>".to_string()),
        "\\PC{1,20}",
    ]
    .prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn scores() -> impl Strategy<Value = CriterionScores> {
    (prop::array::uniform6(1u8..=10), prop::collection::vec(text(), 6)).prop_map(|(s, e)| {
        let mut i = 0;
        CriterionScores::from_fn(|_| {
            let a = Assessment::new(s[i], e[i].clone());
            i += 1;
            a
        })
    })
}

fn example() -> impl Strategy<Value = TrainingExample> {
    ("[a-z0-9:]{1,12}", text(), prop::option::of(text()), scores(), 0..3u8).prop_map(
        |(id, caption, recaption, scores, v)| TrainingExample {
            pair_id: id,
            input_caption: caption,
            input_variant: [CaptionVariant::Original, CaptionVariant::RewrittenHigh, CaptionVariant::GeneratedLow]
                [v as usize],
            target_recaption: recaption,
            target_scores: scores,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn annotation_records_round_trip(id in "[a-z0-9:]{1,12}", caption in text(), s in scores()) {
        let r = AnnotationRecord::new(id, CaptionVariant::Original, caption, s).unwrap();
        let bytes = canonical_serialize(&r);
        prop_assert!(bytes.ends_with(b"\n"));
        prop_assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        let back: AnnotationRecord = parse_record(std::str::from_utf8(&bytes).unwrap()).unwrap();
        prop_assert_eq!(canonical_serialize(&back), bytes);
        prop_assert_eq!(back, r);
    }

    #[test]
    fn targets_round_trip(e in example()) {
        let t = compose_target(&e);
        let parsed = parse_target(&t.text).unwrap();
        prop_assert_eq!(&parsed.recaption, &e.target_recaption);
        prop_assert_eq!(&parsed.scores, &e.target_scores);
    }

    #[test]
    fn streaming_is_fragmentation_invariant(e in example(), cuts in prop::collection::vec(0usize..2000, 0..40)) {
        let text = compose_target(&e).text;
        let chars: Vec<char> = text.chars().collect();
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (chars.len() + 1)).collect();
        bounds.push(0);
        bounds.push(chars.len());
        bounds.sort_unstable();
        bounds.dedup();
        let pieces: Vec<String> = bounds.windows(2).map(|w| chars[w[0]..w[1]].iter().collect()).collect();
        let r = parse_streaming(&pieces).unwrap();
        prop_assert_eq!(&r.recaption, &e.target_recaption);
        prop_assert_eq!(r.overall, e.target_scores.overall.score);
        prop_assert!(r.stopped_early);
        prop_assert!(r.consumed_chars < chars.len());
    }

    #[test]
    fn sft_records_round_trip(e in example(), seed in any::<u64>()) {
        let (rec, _) = format_record(&e, &InstructionPools::default(), seed, DatasetVariant::Aitqe, Split::Train);
        let bytes = canonical_serialize(&rec);
        let back: SftRecord = parse_record(std::str::from_utf8(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back, rec);
    }
}

#[test]
fn thousand_records_survive_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    let records: Vec<EnhancedPair> = (0..1000)
        .map(|i| EnhancedPair {
            id: format!("p{i}"),
            image_ref: format!("img/{i}.png"),
            final_caption: if i % 3 == 0 { format!("Rewritten {i}.") } else { format!("orig {i}") },
            overall_score: Some((i % 10 + 1) as u8),
            was_rewritten: i % 3 == 0,
            original_caption: format!("orig {i}"),
            flag: None,
        })
        .collect();
    write_records_to(&path, &records).unwrap();
    let back: Vec<EnhancedPair> = read_records(&path).unwrap();
    assert_eq!(back, records);
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), 1000);
    assert!(lines.lines().next().unwrap().starts_with(r#"{"id":"p0","image_ref":"img/0.png","caption":"Rewritten 0.","overall":1"#));
}

#[test]
fn invalid_records_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = canonical_serialize(
        &AnnotationRecord::new("a", CaptionVariant::Original, "c", CriterionScores::uniform(5, "x")).unwrap(),
    );
    let mut body = good.clone();
    body.extend(String::from_utf8(good).unwrap().replace("\"Overall Score\":5", "\"Overall Score\":11").bytes());
    std::fs::write(&path, body).unwrap();
    let err = read_records::<AnnotationRecord>(&path).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}
