//! Acceptance criteria 1-10, one line per criterion.
//!
//! Runs with `cargo test --test acceptance`. Every criterion is evaluated even
//! when an earlier one fails; the process exits nonzero if any failed.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segnas::archive::{fronts_csv, generation_file_name, RunDir, TIMING_FILE};
use segnas::config::{Objective, SearchConfig};
use segnas::cost::{build_layer_graph, count_flops, count_params, CostModel};
use segnas::engine::{evolve, Engine, RunArchive};
use segnas::eval::SyntheticEvaluator;
use segnas::genome::{
    decode_mobilenetv2, decode_xception, encode_mobilenetv2, encode_xception, space_cardinality, Architecture,
    Genome, MobileNetV2Arch, SpaceId, XceptionArch, MIDDLE_BLOCKS,
};
use segnas::nsga::{crowding_distance, nondominated_sort};
use segnas::pareto::hypervolume_2d;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within_time(elapsed: Duration, limit: Duration) -> Outcome {
    check!(elapsed < limit, "took {:.2?}, limit {:.0?}", elapsed, limit);
    Ok(String::new())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn xception_cost(a: &XceptionArch) -> (u64, u64) {
    let lg = build_layer_graph(&Architecture::Xception(*a), 513);
    (count_flops(&lg), count_params(&lg))
}

fn params_of(arch: &Architecture, side: usize) -> u64 {
    count_params(&build_layer_graph(arch, side))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let x = space_cardinality(SpaceId::Xception);
    let m = space_cardinality(SpaceId::MobileNetV2);
    let elapsed = t.elapsed();
    check!(x == 4_194_304, "xception cardinality {x}");
    check!(m == 8_388_608, "mobilenetv2 cardinality {m}");
    check!(x == 1 << SpaceId::Xception.genome_len(), "xception length mismatch");
    check!(m == 1 << SpaceId::MobileNetV2.genome_len(), "mobilenetv2 length mismatch");
    within_time(elapsed, Duration::from_secs(1))?;
    Ok(format!("{x} and {m} in {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    for packed in 0..(1u32 << 22) {
        let g = Genome::from_packed(SpaceId::Xception, packed).map_err(|e| e.to_string())?;
        let arch = decode_xception(&g).map_err(|e| format!("decode {g}: {e}"))?;
        check!(encode_xception(&arch).map_err(|e| e.to_string())? == g, "round trip broke on {g}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1_000_000 {
        let g = Genome::random(SpaceId::MobileNetV2, &mut rng);
        let arch: MobileNetV2Arch = decode_mobilenetv2(&g).map_err(|e| format!("decode {g}: {e}"))?;
        check!(encode_mobilenetv2(&arch).map_err(|e| e.to_string())? == g, "round trip broke on {g}");
    }
    let elapsed = t.elapsed();
    within_time(elapsed, Duration::from_secs(120))?;
    Ok(format!("4194304 xception + 1000000 mobilenetv2 genomes in {elapsed:.2?}"))
}

fn criterion_3() -> Outcome {
    let closed_form: u64 = 3 * (3 * 3 * 728 + 728 * 728 + 2 * 2 * 728);
    check!(closed_form == 1_618_344, "closed form {closed_form}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let base = decode_xception(&Genome::random(SpaceId::Xception, &mut rng)).map_err(|e| e.to_string())?;
        let k = rng.gen_range(0..MIDDLE_BLOCKS);
        let mut on = base;
        on.middle_blocks[k] = true;
        let mut off = base;
        off.middle_blocks[k] = false;
        let delta = xception_cost(&on).1 - xception_cost(&off).1;
        check!(delta == closed_form, "block {k}: delta {delta}");
    }
    let implied = (41.26 - 38.00) / 2.0 * 1e6;
    let err = rel(closed_form as f64, implied);
    check!(err <= 0.05, "{closed_form} vs implied {implied}: {:.2}%", err * 100.0);
    Ok(format!("delta {closed_form}, {:.2}% from implied {implied:.0}", err * 100.0))
}

fn criterion_4() -> Outcome {
    let f1 = decode_xception(&genome(FMAS_F1)).map_err(|e| e.to_string())?;
    let p2 = decode_xception(&genome(FMAS_P2)).map_err(|e| e.to_string())?;
    check!(f1.middle_blocks == p2.middle_blocks, "F1 and P2 masks differ");
    check!((f1.entry_stride, p2.entry_stride) == (3, 2), "strides {} and {}", f1.entry_stride, p2.entry_stride);
    let (pf1, pp2) = (xception_cost(&f1).1, xception_cost(&p2).1);
    check!(pf1 == pp2, "F1 params {pf1} vs P2 {pp2}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut variants = 0usize;
    for _ in 0..20 {
        let base = decode_xception(&Genome::random(SpaceId::Xception, &mut rng)).map_err(|e| e.to_string())?;
        let params = xception_cost(&base).1;
        for entry_stride in 1..=4 {
            for middle_atrous in 1..=4 {
                for exit_atrous in [(1, 2), (2, 4)] {
                    for aspp_rates in [(6, 12, 18), (12, 24, 36)] {
                        let a = XceptionArch {
                            entry_stride,
                            middle_atrous,
                            exit_atrous,
                            aspp_rates,
                            ..base
                        };
                        check!(xception_cost(&a).1 == params, "params moved for {a:?}");
                        variants += 1;
                    }
                }
            }
        }
    }
    for _ in 0..200 {
        let g = Genome::random(SpaceId::MobileNetV2, &mut rng);
        let mut shifted = g;
        // bits 0..13 hold strides and dilations; the rest are group toggles
        for bit in 0..13 {
            shifted = shifted.with_bit(bit, rng.gen());
        }
        let (a, b) = (params_of(&Architecture::decode(&g), 384), params_of(&Architecture::decode(&shifted), 384));
        check!(a == b, "mobilenetv2 params moved: {g} {a} vs {shifted} {b}");
        variants += 1;
    }
    Ok(format!("F1 = P2 = {pf1} params; {variants} stride/dilation variants unchanged"))
}

fn criterion_5() -> Outcome {
    let r = CostModel::for_space(SpaceId::Xception).report(&Architecture::Xception(XceptionArch::supernet()));
    let params_m = r.params as f64 / 1e6;
    let flops_g = r.flops as f64 / 1e9;
    let (ep, ef) = (rel(params_m, 41.26), rel(flops_g, 101.47));
    check!(ep <= 0.10, "params {params_m:.3} M is {:.2}% from 41.26 M", ep * 100.0);
    check!(ef <= 0.15, "flops {flops_g:.3} G is {:.2}% from 101.47 G", ef * 100.0);
    Ok(format!(
        "{params_m:.3} M params ({:+.2}%), {flops_g:.2} G FLOPs ({:+.2}%)",
        (params_m / 41.26 - 1.0) * 100.0,
        (flops_g / 101.47 - 1.0) * 100.0
    ))
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10_000 {
        let b = decode_xception(&Genome::random(SpaceId::Xception, &mut rng)).map_err(|e| e.to_string())?;
        let mut a = b;
        for k in 0..MIDDLE_BLOCKS {
            a.middle_blocks[k] = b.middle_blocks[k] && rng.gen_bool(0.5);
        }
        let ((fa, pa), (fb, pb)) = (xception_cost(&a), xception_cost(&b));
        check!(fa <= fb && pa <= pb, "{} vs {}", a.mask_string(), b.mask_string());
    }
    for _ in 0..1_000 {
        let base = decode_xception(&Genome::random(SpaceId::Xception, &mut rng)).map_err(|e| e.to_string())?;
        let s1 = rng.gen_range(1..4u8);
        let s2 = rng.gen_range(s1 + 1..=4u8);
        let lo = xception_cost(&XceptionArch { entry_stride: s1, ..base }).0;
        let hi = xception_cost(&XceptionArch { entry_stride: s2, ..base }).0;
        check!(hi < lo, "stride {s2} gave {hi} FLOPs, stride {s1} gave {lo}");
    }
    let elapsed = t.elapsed();
    within_time(elapsed, Duration::from_secs(60))?;
    Ok(format!("10000 mask pairs, 1000 stride pairs in {elapsed:.2?}"))
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut largest = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=500);
        largest = largest.max(n);
        // a coarse grid makes ties and duplicates common
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| f64::from(rng.gen_range(0..40u8)) / 4.0).collect())
            .collect();
        let fast = nondominated_sort(&pts).map_err(|e| e.to_string())?;
        check!(fast == brute_force_fronts(&pts), "case {case} (n = {n}) differs");
    }
    let d = crowding_distance(&[vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    check!(d[1] == 2.0, "middle crowding {}", d[1]);
    check!(d[0].is_infinite() && d[2].is_infinite(), "boundary crowding {d:?}");
    let elapsed = t.elapsed();
    within_time(elapsed, Duration::from_secs(30))?;
    Ok(format!("200 instances up to n = {largest}, middle crowding 2.0, in {elapsed:.2?}"))
}

fn criterion_8() -> Outcome {
    let hand = hypervolume_2d(&[vec![0.2, 0.4], vec![0.5, 0.1]], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    check!((hand - 0.63).abs() < 1e-12, "hand case {hand}");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.gen_range(1..=20);
        let front = random_front(n, &mut rng);
        let exact = hypervolume_2d(&front, &[1.0, 1.0]).map_err(|e| e.to_string())?;
        let (mc, _) = monte_carlo_hypervolume(&front, &[1.0, 1.0], 1_000_000, &mut rng);
        let err = rel(exact, mc);
        worst = worst.max(err);
        check!(err <= 0.01, "front {case}: sweep {exact} vs Monte Carlo {mc}");
    }
    Ok(format!("hand case {hand}, worst Monte Carlo gap {:.3}% over 50 fronts", worst * 100.0))
}

fn standard() -> SearchConfig {
    SearchConfig::new(SpaceId::Xception, vec![Objective::Error, Objective::Flops], 7)
}

fn synthetic(config: &SearchConfig) -> SyntheticEvaluator {
    SyntheticEvaluator::new(config.surrogate.clone(), config.cost_model())
}

fn fronts_of(a: &RunArchive) -> Result<String, String> {
    fronts_csv(&a.config.objective_names(), a.records.iter().map(|r| &r.front)).map_err(|e| e.to_string())
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let config = standard();
    check!(config.population == 12 && config.generations == 20, "default run shape changed");
    let a = evolve(config.clone(), &synthetic(&config)).map_err(|e| e.to_string())?;
    let b = evolve(config.clone(), &synthetic(&config)).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    check!(fronts_of(&a)? == fronts_of(&b)?, "fronts.csv differs between runs");
    check!(a.records.len() == 20, "{} generations", a.records.len());
    for pair in a.records.windows(2) {
        let (h0, h1) = (pair[0].hypervolume, pair[1].hypervolume);
        check!(h1 >= h0, "hypervolume fell at generation {}: {h0:?} -> {h1:?}", pair[1].generation);
    }
    for r in &a.records {
        let d = r.hyperarea_difference.ok_or("missing hyperarea difference")?;
        check!(d >= 0.0, "generation {} difference {d}", r.generation);
    }
    check!(a.unique_evaluations() == 240, "{} unique evaluations", a.unique_evaluations());
    within_time(elapsed, Duration::from_secs(10))?;
    let hv = a.records.last().and_then(|r| r.hypervolume).unwrap_or_default();
    Ok(format!("identical fronts, 240 evaluations, final hypervolume {hv:.6}, two runs in {elapsed:.2?}"))
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.file_name() == TIMING_FILE {
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

/// Steps an engine to completion or `limit` generations, persisting each one.
fn drive(run: &RunDir, archive: RunArchive, ev: &SyntheticEvaluator, limit: usize) -> Result<(), String> {
    let mut engine = Engine::resume(archive, ev).map_err(|e| e.to_string())?;
    for _ in 0..limit {
        match engine.step().map_err(|e| e.to_string())? {
            Some(report) => run.save_generation(engine.archive(), &report).map_err(|e| e.to_string())?,
            None => break,
        }
    }
    Ok(())
}

fn criterion_10() -> Outcome {
    let config = standard();
    let ev = synthetic(&config);
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;

    let whole = RunDir::new(tmp.path().join("whole"));
    whole.create(&RunArchive::new(config.clone())).map_err(|e| e.to_string())?;
    drive(&whole, RunArchive::new(config.clone()), &ev, usize::MAX)?;

    let cut = RunDir::new(tmp.path().join("cut"));
    cut.create(&RunArchive::new(config.clone())).map_err(|e| e.to_string())?;
    drive(&cut, RunArchive::new(config), &ev, 10)?;
    // the process dies while writing generation 11
    fs::write(cut.path(&generation_file_name(11)), "{\"genome\":").map_err(|e| e.to_string())?;

    let loaded = cut.load().map_err(|e| e.to_string())?;
    check!(loaded.records.len() == 10, "checkpoint holds {} generations", loaded.records.len());
    cut.reconcile(&loaded).map_err(|e| e.to_string())?;
    drive(&cut, loaded, &ev, usize::MAX)?;

    let (a, b) = (whole.load().map_err(|e| e.to_string())?, cut.load().map_err(|e| e.to_string())?);
    check!(a == b, "resumed archive differs in memory");
    let (sa, sb) = (snapshot(whole.root())?, snapshot(cut.root())?);
    check!(sa.len() == sb.len(), "{} files vs {}", sa.len(), sb.len());
    for ((na, ba), (nb, bb)) in sa.iter().zip(&sb) {
        check!(na == nb && ba == bb, "{na} differs from {nb}");
    }
    Ok(format!("{} files byte-identical after resume at generation 10", sa.len()))
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
