use oracle_core::generate::{export_plan, generate, parse_plan_sequence, GenerationRequest};
use oracle_core::ingest::{filter_dataset, parse_log, preprocess_log, split_dataset, synth_generate, SynthProfile};
use oracle_core::model::{Cvae, ModelConfig};
use oracle_core::{read_dataset, write_dataset, ActivityClass, ConditionMask, PlausibilityRuleSet};

/// One annotated day. Gaps are split half/half between neighbours and the
/// first and last activities stretch to the day's edges.
const LOG: &str = "\
2011-06-15 01:00:00.000001 M021 ON Sleep begin
2011-06-15 03:12:09.118003 M021 OFF
2011-06-15 07:00:00 M021 OFF Sleep end
2011-06-15 07:00:00 M013 ON Toilet begin
2011-06-15 07:10:00 M013 OFF Toilet end
2011-06-15 07:10:00 M014 ON Personal_Hygiene begin
2011-06-15 07:30:00 M014 OFF Personal_Hygiene end
2011-06-15 07:30:00 M020 ON Dress begin
2011-06-15 07:40:00 M020 OFF Dress end
2011-06-15 07:40:00 M015 ON Eat_Breakfast begin
2011-06-15 08:10:00 M015 OFF Eat_Breakfast end
2011-06-15 08:30:00 M026 ON Work begin
2011-06-15 09:00:00 M026 ON Meditate begin
2011-06-15 09:20:00 M026 ON Meditate end
2011-06-15 12:00:00 M026 OFF Work end
2011-06-15 12:00:00 M017 ON Wash_Dishes begin
2011-06-15 12:30:00 M017 OFF Wash_Dishes end
2011-06-15 13:00:00 M004 ON Watch_TV begin
2011-06-15 22:00:00 M004 OFF Watch_TV end
not a log line
";

#[test]
fn raw_log_to_plausible_day() {
    let parsed = parse_log(LOG.as_bytes()).unwrap();
    assert_eq!(parsed.diagnostics.len(), 1);
    let out = preprocess_log(&parsed, "home");
    assert_eq!(out.days.len(), 1);
    let day = &out.days[0];
    assert_eq!(day.day_id(), "home_2011-06-15");

    use ActivityClass::*;
    let mut want = [0u32; 12];
    for (c, m) in [(Sleep, 420), (Toilet, 10), (Hygiene, 20), (Dress, 10), (Meal, 40), (Work, 220), (Chore, 45), (Rest, 675)] {
        want[c.index()] = m;
    }
    assert_eq!(day.class_minutes(), want);

    let (kept, rejected) = filter_dataset(out.days.clone(), &PlausibilityRuleSet::table1());
    assert_eq!((kept.len(), rejected.len()), (1, 0));

    let mut plan = Vec::new();
    export_plan(day, &mut plan).unwrap();
    let text = String::from_utf8(plan.clone()).unwrap();
    assert!(text.starts_with("00:00~07:00 Sleep\n07:00~07:10 Toilet\n"), "{text}");
    assert!(text.ends_with("12:45~24:00 Rest\n"), "{text}");
    assert_eq!(&parse_plan_sequence(day.day_id(), plan.as_slice()).unwrap(), day);
}

#[test]
fn dataset_files_round_trip_through_the_split() {
    let days = synth_generate(50, 4, SynthProfile::Mixed);
    let split = split_dataset(days.clone(), 4).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (40, 5, 5));
    for part in [&split.train, &split.val, &split.test] {
        let mut buf = Vec::new();
        write_dataset(&mut buf, part).unwrap();
        assert_eq!(&read_dataset(buf.as_slice()).unwrap(), part);
    }
    let mut all: Vec<_> = split.train.iter().chain(&split.val).chain(&split.test).cloned().collect();
    all.sort_by(|a, b| a.day_id().cmp(b.day_id()));
    let mut orig = days;
    orig.sort_by(|a, b| a.day_id().cmp(b.day_id()));
    assert_eq!(all, orig);
}

#[test]
fn untrained_model_honours_a_condition() {
    let cfg = ModelConfig { hidden: 16, latent: 16, layers: 1, heads: 2, ..ModelConfig::desk() };
    let model = Cvae::<f32>::new(cfg, 5).unwrap();
    let mut mask = ConditionMask::fully_masked();
    mask.fix_range(0, 84, ActivityClass::Sleep).unwrap();
    mask.fix_range(144, 150, ActivityClass::Meal).unwrap();
    let days = generate(&model, &GenerationRequest::conditional(mask.clone(), 5, 3, 1.0)).unwrap();
    assert!(days.iter().all(|d| mask.is_satisfied_by(d)));
}
