mod common;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use common::simulated_audit;
use walkaudit::annotation::{
    aggregate_mean, default_profiles, load_ratings, read_ratings, simulate_ratings, write_ratings,
    Measure, RaterProfile,
};
use walkaudit::auditor::{select_for_annotation, SampleDesign};
use walkaudit::config::default_policy;
use walkaudit::stats::{krippendorff_alpha, AlphaMetric};
use walkaudit::{RandomStream, RatingRecord};

fn sample_ratings(seed: u64, profiles: &[RaterProfile], deleted: &[usize]) -> Vec<RatingRecord> {
    let (catalog, audit) = simulated_audit(&default_policy(), 2000, seed, 150);
    let mut s = RandomStream::derive(seed, "annotation-sample", 0, 0);
    let mut sample = select_for_annotation(&audit, &SampleDesign::default(), &catalog, &mut s).unwrap();
    sample.flag_deleted(deleted);
    let mut s = RandomStream::derive(seed, "ratings", 0, 0);
    simulate_ratings(&sample, &catalog, profiles, &mut s).unwrap()
}

#[test]
fn default_raters_land_in_the_observed_agreement_range() {
    let deleted = [4, 19, 33, 51, 70];
    let per_seed: Vec<[f64; 3]> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let records = sample_ratings(seed, &default_profiles(), &deleted);
            assert_eq!(records.len(), 3 * 81);
            Measure::ALL.map(|m| krippendorff_alpha(&records, m, AlphaMetric::Ordinal).unwrap().alpha)
        })
        .collect();
    let inside = |a: f64| a > 0.4 && a < 0.9;
    let hits = per_seed.iter().flatten().filter(|&&a| inside(a)).count();
    assert!(hits >= 285, "only {hits}/300 alphas inside (0.4, 0.9)");
    for (i, m) in Measure::ALL.iter().enumerate() {
        let mut v: Vec<f64> = per_seed.iter().map(|a| a[i]).collect();
        let med = common::median(&mut v);
        assert!(inside(med), "{m:?}: median alpha {med}");
    }
}

#[test]
fn noiseless_raters_agree_perfectly() {
    let profiles: Vec<RaterProfile> = ["a", "b", "c"].iter().map(|id| RaterProfile::noiseless(id)).collect();
    let records = sample_ratings(5, &profiles, &[]);
    for m in Measure::ALL {
        let a = krippendorff_alpha(&records, m, AlphaMetric::Ordinal).unwrap();
        assert_eq!(a.alpha, 1.0, "{m:?}");
    }
}

#[test]
fn deleted_slots_are_missing_for_every_rater() {
    let records = sample_ratings(6, &default_profiles(), &[0, 1, 2, 3, 4]);
    let missing = records
        .iter()
        .filter(|r| r.topic_relatedness.is_none() && r.happiness.is_none() && r.sadness.is_none())
        .count();
    assert_eq!(missing, 15);
    assert!(records.iter().all(|r| [r.topic_relatedness, r.happiness, r.sadness]
        .iter()
        .flatten()
        .all(|&v| v <= 10)));
}

#[test]
fn aggregation_ignores_rater_order() {
    let mut records = sample_ratings(7, &default_profiles(), &[]);
    let before = aggregate_mean(&records);
    let mut rng = RandomStream::from_seed(7);
    for _ in 0..20 {
        records.shuffle(&mut rng);
        assert_eq!(aggregate_mean(&records), before);
    }
}

#[test]
fn ratings_file_round_trip_preserves_records() {
    let mut profiles = default_profiles();
    for p in &mut profiles {
        p.missing_rate = 0.1;
    }
    let records = sample_ratings(8, &profiles, &[10, 20, 30, 40, 50]);
    let mut buf = Vec::new();
    write_ratings(&records, &mut buf, None).unwrap();
    let back = read_ratings(buf.as_slice()).unwrap();
    assert_eq!(back, records);
    assert_eq!(back.len(), 243);
}

fn write_csv(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "rater_id,walk_id,step_index,video_id,topic_relatedness,happiness,sadness").unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn three_raters_of_seventy_six_rows() {
    let mut body = String::new();
    for r in ["r1", "r2", "r3"] {
        for slot in 0..76 {
            body.push_str(&format!("{r},{},{},v{:06},5,4,3\n", slot / 3, (slot % 3) * 5, slot));
        }
    }
    let f = write_csv(&body);
    assert_eq!(load_ratings(f.path()).unwrap().len(), 228);
}

#[test]
fn out_of_range_value_names_row_and_field() {
    let f = write_csv("r1,0,0,v000001,5,4,3\nr1,0,5,v000002,5,11,3\n");
    let err = load_ratings(f.path()).unwrap_err().to_string();
    assert!(err.contains("row 3") && err.contains("happiness"), "{err}");
}

#[test]
fn empty_cell_is_missing() {
    let f = write_csv("r1,0,0,v000001,5,4,\n");
    let records = load_ratings(f.path()).unwrap();
    assert_eq!(records[0].sadness, None);
    assert_eq!(records[0].happiness, Some(4));
}

#[test]
fn duplicate_keys_are_rejected() {
    let f = write_csv("r1,0,0,v000001,5,4,3\nr1,0,0,v000001,6,4,3\n");
    let err = load_ratings(f.path()).unwrap_err().to_string();
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn aggregate_examples() {
    let rec = |rater: &str, v: Option<u8>| RatingRecord {
        rater_id: rater.into(),
        walk_id: 1,
        step_index: 0,
        video_id: walkaudit::VideoId(1),
        topic_relatedness: v,
        happiness: None,
        sadness: None,
    };
    let key = |m: &std::collections::BTreeMap<walkaudit::annotation::CellKey, f64>| {
        m.values().copied().collect::<Vec<_>>()
    };
    let a = aggregate_mean(&[rec("a", Some(0)), rec("b", Some(1)), rec("c", Some(2))]);
    assert_eq!(key(&a), vec![1.0]);
    let b = aggregate_mean(&[rec("a", Some(8)), rec("b", Some(8)), rec("c", None)]);
    assert_eq!(key(&b), vec![8.0]);
    let c = aggregate_mean(&[rec("a", None), rec("b", None)]);
    assert!(c.is_empty());
}
