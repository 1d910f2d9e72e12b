//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use walkaudit::annotation::{simulate_ratings, Measure, RaterProfile, RatingRecord};
use walkaudit::auditor::{run_audit, select_for_annotation, SampleDesign, WalkOptions};
use walkaudit::catalog::{generate_catalog, CatalogConfig, VideoId};
use walkaudit::config::{default_policy, RunConfig};
use walkaudit::report::{
    parse_jsonl, render_jsonl, render_text, run_bias_tests, RowOutcome, TestRow, Variable,
};
use walkaudit::stats::{
    krippendorff_alpha, krippendorff_alpha_units, landis_koch_band, mann_whitney_u,
    AgreementBand, AlphaError, AlphaMetric, TestMode,
};
use walkaudit::{AuditRun, PlatformSim, RandomStream, RecommendationPolicy};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- oracles

/// Twice the number of (a, b) pairs where `a` is larger, ties counting half.
fn doubled_wins(a: &[i32], b: &[i32]) -> i64 {
    let mut s = 0;
    for &x in a {
        for &y in b {
            s += match x.cmp(&y) {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    s
}

/// Two-tailed exact p by enumerating every assignment of the pooled values
/// to a group of size `a.len()`.
fn brute_force_p(a: &[i32], b: &[i32]) -> f64 {
    let pooled: Vec<i32> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let n1 = a.len();
    let observed = doubled_wins(a, b);
    let (mut lower, mut upper, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let (mut g1, mut g2) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                g1.push(v);
            } else {
                g2.push(v);
            }
        }
        let u = doubled_wins(&g1, &g2);
        total += 1;
        if u <= observed {
            lower += 1;
        }
        if u >= observed {
            upper += 1;
        }
    }
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

fn mwu_compare(a: &[i32], b: &[i32]) -> Result<f64, String> {
    let af: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let bf: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    let t = mann_whitney_u(&af, &bf, TestMode::Exact).map_err(|e| e.to_string())?;
    let n1n2 = (a.len() * b.len()) as f64;
    if t.u1 + t.u2 != n1n2 {
        return Err(format!("U1+U2 = {} != {n1n2} for {a:?} {b:?}", t.u1 + t.u2));
    }
    if (2.0 * t.u1) as i64 != doubled_wins(b, a) {
        return Err(format!("U1 {} disagrees with pair count for {a:?} {b:?}", t.u1));
    }
    let oracle = brute_force_p(a, b);
    Ok((t.p_two_tailed - oracle).abs())
}

fn all_vectors(n: usize) -> Vec<Vec<i32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..5).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

fn mann_whitney_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomStream::from_seed(20190501);
    let pairs: Vec<(Vec<i32>, Vec<i32>)> = (0..1000)
        .map(|_| {
            let n1 = rng.random_range(1..=7);
            let n2 = rng.random_range(1..=7);
            let a = (0..n1).map(|_| rng.random_range(0..5)).collect();
            let b = (0..n2).map(|_| rng.random_range(0..5)).collect();
            (a, b)
        })
        .collect();
    let random_max = pairs
        .par_iter()
        .map(|(a, b)| mwu_compare(a, b))
        .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))?;

    let mut exhaustive = 0usize;
    let mut exhaustive_max = 0.0f64;
    for n in 1..=4 {
        let vs = all_vectors(n);
        exhaustive += vs.len() * vs.len();
        let m = vs
            .par_iter()
            .map(|a| {
                vs.iter()
                    .map(|b| mwu_compare(a, b))
                    .try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
            })
            .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))?;
        exhaustive_max = exhaustive_max.max(m);
    }
    let elapsed = start.elapsed();
    let max = random_max.max(exhaustive_max);
    check(max <= 1e-12, format!("max |p - oracle| = {max:e} > 1e-12"))?;
    check(
        elapsed < Duration::from_secs(60),
        format!("took {:.1}s (limit 60s)", elapsed.as_secs_f64()),
    )?;
    Ok(format!(
        "{} random + {exhaustive} exhaustive pairs, max |dp| = {max:e}, {:.1}s",
        pairs.len(),
        elapsed.as_secs_f64()
    ))
}

fn known_exact_values() -> Outcome {
    let t = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], TestMode::Auto).unwrap();
    check(t.u_statistic == 0.0 && t.p_two_tailed == 0.1, format!("[1,2,3] vs [4,5,6]: U={} p={}", t.u_statistic, t.p_two_tailed))?;
    let t = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], TestMode::Auto).unwrap();
    check(t.u_statistic == 0.0 && t.p_two_tailed == 1.0 / 3.0, format!("[1,2] vs [3,4]: U={} p={}", t.u_statistic, t.p_two_tailed))?;
    let x = [3.0, 1.0, 4.0, 1.0, 5.0];
    for mode in [TestMode::Auto, TestMode::Exact, TestMode::Normal] {
        let t = mann_whitney_u(&x, &x, mode).unwrap();
        check(t.p_two_tailed == 1.0, format!("identical samples ({mode:?}): p={}", t.p_two_tailed))?;
    }
    Ok("U=0 p=0.1; U=0 p=1/3; identical p=1.0".into())
}

fn record(rater: &str, unit: u32, value: Option<u8>) -> RatingRecord {
    RatingRecord {
        rater_id: rater.into(),
        walk_id: unit,
        step_index: 0,
        video_id: VideoId(unit),
        topic_relatedness: value,
        happiness: None,
        sadness: None,
    }
}

fn krippendorff_correctness() -> Outcome {
    // Perfect agreement.
    let units: Vec<Vec<i32>> = (0..8).map(|u| vec![u % 5, u % 5, u % 5]).collect();
    let a = krippendorff_alpha_units(&units, AlphaMetric::Ordinal).map_err(|e| e.to_string())?;
    check(a.alpha == 1.0, format!("perfect agreement alpha = {}", a.alpha))?;

    // No variance at all.
    let flat: Vec<Vec<i32>> = (0..6).map(|_| vec![4, 4, 4]).collect();
    match krippendorff_alpha_units(&flat, AlphaMetric::Ordinal) {
        Err(AlphaError::Undefined) => {}
        other => return Err(format!("zero variance gave {other:?}")),
    }

    // Pinned worked example: 1065/1139 from the coincidence matrix by hand.
    let r1 = [Some(1), Some(3), Some(4), Some(7), Some(9), Some(2)];
    let r2 = [Some(2), Some(3), Some(5), Some(7), Some(8), None];
    let r3 = [Some(1), Some(4), Some(4), Some(6), Some(9), Some(3)];
    let mut records = Vec::new();
    for (id, col) in [("r1", r1), ("r2", r2), ("r3", r3)] {
        for (u, v) in col.iter().enumerate() {
            records.push(record(id, u as u32, *v));
        }
    }
    let pinned = krippendorff_alpha(&records, Measure::TopicRelatedness, AlphaMetric::Ordinal)
        .map_err(|e| e.to_string())?;
    let expected = 1065.0 / 1139.0;
    check(
        (pinned.alpha - expected).abs() <= 1e-9,
        format!("pinned example alpha = {} (expected {expected})", pinned.alpha),
    )?;

    // Rater relabeling on random data with missing values.
    let mut rng = RandomStream::from_seed(11);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let raters = ["ann", "bob", "cy", "dee"];
        let renamed = ["zz", "aa", "mm", "bb"];
        let mut orig = Vec::new();
        let mut relabeled = Vec::new();
        for (ri, r) in raters.iter().enumerate() {
            for u in 0..15 {
                let v = if rng.random_bool(0.15) {
                    None
                } else {
                    Some(rng.random_range(0..=10u8))
                };
                orig.push(record(r, u, v));
                relabeled.push(record(renamed[ri], u, v));
            }
        }
        relabeled.reverse();
        let a = krippendorff_alpha(&orig, Measure::TopicRelatedness, AlphaMetric::Ordinal);
        let b = krippendorff_alpha(&relabeled, Measure::TopicRelatedness, AlphaMetric::Ordinal);
        match (a, b) {
            (Ok(a), Ok(b)) => worst = worst.max((a.alpha - b.alpha).abs()),
            (a, b) => return Err(format!("trial {trial}: {a:?} vs {b:?}")),
        }
    }
    check(worst <= 1e-12, format!("relabeling changed alpha by {worst:e}"))?;
    Ok(format!(
        "perfect = 1.0, flat = Undefined, pinned = {:.12}, relabel max diff = {worst:e}",
        pinned.alpha
    ))
}

// ---------------------------------------------------------- simulations

fn simulated_audit(policy: &RecommendationPolicy, n_videos: usize, seed: u64, n_walks: usize) -> (walkaudit::Catalog, AuditRun) {
    let catalog = generate_catalog(&CatalogConfig::with_videos(n_videos), seed).unwrap();
    let topics: Vec<_> = catalog.topics().iter().map(|t| t.id).collect();
    let sim = PlatformSim::new(catalog.as_of_walk_time(), policy.clone()).unwrap();
    let audit = run_audit(&sim, &topics, n_walks, seed, &WalkOptions::default(), Some(1)).unwrap();
    (catalog, audit)
}

fn row<'a>(rows: &'a [TestRow], variable: Variable, to: u8) -> (f64, f64, f64) {
    let r = rows
        .iter()
        .find(|r| r.variable == variable && r.from_step == 0 && r.to_step == to)
        .expect("row present");
    match &r.outcome {
        RowOutcome::Evaluated {
            p,
            median_from,
            median_to,
            ..
        } => (*p, *median_from, *median_to),
        RowOutcome::NotEvaluated { reason } => panic!("row not evaluated: {reason}"),
    }
}

fn bias_detection_power() -> Outcome {
    let start = Instant::now();
    let policy = RecommendationPolicy::popularity(2.0);
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (_, audit) = simulated_audit(&policy, 2000, seed, 150);
            let tests = run_bias_tests(&audit, None).unwrap();
            let ok = [Variable::Views, Variable::Likes].iter().all(|&v| {
                [5, 10].iter().all(|&to| {
                    let (p, from, to) = row(&tests.popularity, v, to);
                    p < 1e-4 && to > from
                })
            });
            ok as usize
        })
        .sum();
    let elapsed = start.elapsed();
    check(hits >= 95, format!("{hits}/100 seeds significant"))?;
    check(
        elapsed < Duration::from_secs(300),
        format!("sweep took {:.1}s (limit 300s)", elapsed.as_secs_f64()),
    )?;
    Ok(format!("{hits}/100 seeds with all four p < 0.0001 and increasing medians, {:.1}s", elapsed.as_secs_f64()))
}

fn null_calibration() -> Outcome {
    let policy = RecommendationPolicy::uniform();
    let rejections: usize = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let (_, audit) = simulated_audit(&policy, 2000, seed, 150);
            let tests = run_bias_tests(&audit, None).unwrap();
            (row(&tests.popularity, Variable::Views, 5).0 < 0.05) as usize
        })
        .sum();
    let rate = rejections as f64 / 500.0;
    let msg = format!("{rejections}/500 audits rejected ({:.1}%)", 100.0 * rate);
    check((0.02..=0.08).contains(&rate), format!("{msg}, outside 2-8%"))?;
    Ok(msg)
}

fn qualitative_shape() -> Outcome {
    let policy = default_policy();
    let raters = vec![
        RaterProfile::noiseless("r1"),
        RaterProfile::noiseless("r2"),
        RaterProfile::noiseless("r3"),
    ];
    let results: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (catalog, audit) = simulated_audit(&policy, 2000, seed, 150);
            let mut s = RandomStream::derive(seed, "annotation-sample", 0, 0);
            let sample = select_for_annotation(&audit, &SampleDesign::default(), &catalog, &mut s).unwrap();
            let mut s = RandomStream::derive(seed, "ratings", 0, 0);
            let ratings = simulate_ratings(&sample, &catalog, &raters, &mut s).unwrap();
            let tests = run_bias_tests(&audit, Some(&ratings)).unwrap();
            let (_, m0, m5) = row(&tests.topic, Variable::TopicRelatedness, 5);
            (m0, m5)
        })
        .collect();
    let hits = results.iter().filter(|(m0, m5)| *m0 >= 7.0 && *m5 <= 2.0).count();
    let worst5 = results.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    check(hits >= 90, format!("{hits}/100 seeds fall from >= 7 to <= 2"))?;
    Ok(format!("{hits}/100 seeds fall from >= 7 to <= 2 (largest step-5 median {worst5:.2})"))
}

fn golden_file_fidelity() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests");
    let fixture = std::fs::read_to_string(dir.join("fixtures/reference_tables.jsonl")).unwrap();
    let report = parse_jsonl(&fixture).map_err(|e| e.to_string())?;
    let text = render_text(&report);
    let jsonl = render_jsonl(&report);
    for needle in [
        "9,590", "224,353", "293,789", "249,754", "3728.5  0.0000 ***", "3167.0  0.0000 ***",
        "9819.5  0.0570\n", "4796.5  0.0000 ***", "10471.0  0.3001\n", "470.5  0.0114 *  ",
        "472.5  0.0273 *  ", "188.5  0.0043 **", "193.5  0.0033 **", "8.00 -> 0.83",
        "0.765  substantial", "0.613  substantial", "0.441  moderate",
    ] {
        check(text.contains(needle), format!("rendered text lacks `{needle}`"))?;
    }
    let v = &report.verdicts;
    check(
        v.popularity_bias.status.is_detected()
            && v.topic_drift.status.is_detected()
            && v.emotion_shift.status.is_detected(),
        "fixture verdicts are not all detected",
    )?;
    let golden_text = std::fs::read_to_string(dir.join("golden/reference_tables.txt")).unwrap();
    let golden_jsonl = std::fs::read_to_string(dir.join("golden/reference_tables.jsonl")).unwrap();
    check(text == golden_text, "text differs from golden/reference_tables.txt")?;
    check(jsonl == golden_jsonl, "jsonl differs from golden/reference_tables.jsonl")?;
    Ok(format!("{} text bytes and {} jsonl bytes identical to golden files", text.len(), jsonl.len()))
}

fn protocol_arithmetic() -> Outcome {
    let config = RunConfig::default();
    let (catalog, audit) = simulated_audit(&config.policy, config.catalog.n_videos, config.master_seed, config.audit.n_walks);
    check(audit.walks.len() == 150, format!("{} walks", audit.walks.len()))?;
    check(audit.total_steps() == 1650, format!("{} records", audit.total_steps()))?;
    let mut s = RandomStream::derive(config.master_seed, "annotation-sample", 0, 0);
    let mut sample = select_for_annotation(&audit, &config.annotation.design, &catalog, &mut s).unwrap();
    check(sample.len() == 81, format!("{} slots", sample.len()))?;
    sample.flag_deleted(&[3, 17, 40, 62, 80]);
    check(sample.ratable_count() == 76, format!("{} ratable", sample.ratable_count()))?;
    Ok("150 walks, 1,650 records, 81 slots, 76 ratable after 5 deletions".into())
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_walkaudit"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("walkaudit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli(&a, &["generate", "--seed", "7"])?;
    cli(&b, &["generate", "--seed", "7"])?;
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    check(read(&a, "catalog.tsv") == read(&b, "catalog.tsv"), "catalog files differ")?;
    cli(&a, &["audit", "--seed", "7", "--threads", "1"])?;
    cli(&b, &["audit", "--seed", "7", "--threads", "8"])?;
    check(read(&a, "audit.tsv") == read(&b, "audit.tsv"), "audit logs differ across --threads")?;
    Ok(format!(
        "catalog ({} bytes) and audit log ({} bytes) byte-identical, threads 1 vs 8",
        read(&a, "catalog.tsv").len(),
        read(&a, "audit.tsv").len()
    ))
}

fn agreement_banding() -> Outcome {
    let got: Vec<AgreementBand> = [0.765, 0.613, 0.441].iter().map(|&a| landis_koch_band(a)).collect();
    check(
        got == [AgreementBand::Substantial, AgreementBand::Substantial, AgreementBand::Moderate],
        format!("bands {got:?}"),
    )?;
    Ok(".765 substantial, .613 substantial, .441 moderate".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("mann_whitney_oracle_equivalence", mann_whitney_oracle_equivalence),
        ("known_exact_values", known_exact_values),
        ("krippendorff_correctness", krippendorff_correctness),
        ("bias_detection_power", bias_detection_power),
        ("null_calibration", null_calibration),
        ("qualitative_shape", qualitative_shape),
        ("golden_file_fidelity", golden_file_fidelity),
        ("protocol_arithmetic", protocol_arithmetic),
        ("cli_determinism", cli_determinism),
        ("agreement_banding", agreement_banding),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
