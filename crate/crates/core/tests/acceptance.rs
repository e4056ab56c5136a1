//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria in [`KNOWN_FAILURES`] cannot hold in IEEE-754 doubles; they
//! still run and print FAIL. The process exits non-zero on any other
//! failure, when a known failure starts passing, or on any failure at all
//! with `SPL_ACCEPTANCE_STRICT=1`.
//!
//! Run with `cargo test -p spl-core --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spl_core::harness::{
    aggregate_report, builtin_fixture, oracle_selection, replay_fixture, run_cell, run_pipeline,
    AblationBase, PipelineConfig, SyntheticWorld, TableOneFixture, WorldSpec,
};
use spl_core::library::{
    centroid_order, decode_library, encode_library, load_library, sample_clustering,
    sample_distributed, save_library, EmbeddingMetadata, LibraryEntry, PromptEmbedding,
    PromptMatrix, SourcePromptLibrary, LIBRARY_MAGIC,
};
use spl_core::mips::MipsIndex;
use spl_core::oracle::{OptionProbe, OptionProbeResult, OracleError};
use spl_core::selection::{
    interpolate, interpolate_by_score, select, select_top_frequency, select_variance,
    variance_score, CandidateTally, Selection, Strategy,
};
use spl_core::BuildConfig;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Criterion name and why it cannot pass.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "variance-score",
    "0.6 and 0.4 are not exact doubles; the correctly rounded result is one ulp above 40",
)];

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_library(rng: &mut ChaCha8Rng, max_keys: usize, dim: usize) -> SourcePromptLibrary {
    let n_emb = rng.random_range(1..=12usize);
    let rows = rng.random_range(1..=3usize);
    let cols = rng.random_range(1..=5usize);
    let embeddings: Vec<PromptEmbedding> = (0..n_emb)
        .map(|e| {
            let values = (0..rows * cols)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            PromptEmbedding::new(
                format!("ds{}/prompt-{e:02}", e % 3),
                EmbeddingMetadata {
                    source_dataset: format!("ds{}", e % 3),
                    prompt_name: format!("prompt-{e:02}"),
                    task_cluster: "nli".into(),
                    answer_choice_format: if e % 2 == 0 {
                        "yes/no".into()
                    } else {
                        String::new()
                    },
                },
                PromptMatrix::new(rows, cols, values).unwrap(),
            )
        })
        .collect();
    let mut embeddings = embeddings;
    embeddings.sort_by(|a, b| a.id.cmp(&b.id));
    let count = rng.random_range(1..=max_keys);
    let mut entries: Vec<LibraryEntry> = Vec::with_capacity(count);
    for ordinal in 0..count {
        // occasional exact duplicates exercise the ordinal tie-break
        let key = if ordinal > 0 && rng.random_bool(0.05) {
            entries[rng.random_range(0..ordinal)].key.clone()
        } else {
            (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect()
        };
        entries.push(LibraryEntry {
            ordinal,
            embedding: rng.random_range(0..n_emb),
            key,
        });
    }
    SourcePromptLibrary::from_parts(dim, rows, cols, embeddings, entries).unwrap()
}

/// Full scan with every score computed, then a stable argsort.
fn scan_oracle(lib: &SourcePromptLibrary, query: &[f32], top_n: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = lib
        .entries()
        .iter()
        .map(|e| {
            let mut s = 0.0f64;
            for (q, k) in query.iter().zip(&e.key) {
                s += *q as f64 * *k as f64;
            }
            (e.ordinal, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    scored
}

fn mips_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut lists = 0usize;
    for lib_no in 0..200 {
        let dim = rng.random_range(4..=64usize);
        let lib = random_library(&mut rng, 1000, dim);
        let index = MipsIndex::build(&lib).map_err(|e| e.to_string())?;
        let queries: Vec<Vec<f32>> = (0..rng.random_range(1..=8))
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .collect();
        let top_n = rng.random_range(1..=20usize);
        let got = index
            .batch_search(&queries, top_n)
            .map_err(|e| e.to_string())?;
        for (q, hits) in queries.iter().zip(&got) {
            let want = scan_oracle(&lib, q, top_n);
            check(hits.len() == want.len(), || {
                format!("library {lib_no}: hit count")
            })?;
            for (h, (ordinal, score)) in hits.iter().zip(&want) {
                check(h.ordinal == *ordinal, || {
                    format!("library {lib_no}: order differs")
                })?;
                let owner = &lib.embeddings()[lib.entries()[*ordinal].embedding].id;
                check(&h.embedding_id == owner, || {
                    format!("library {lib_no}: id differs")
                })?;
                let rel = (h.score - score).abs() / score.abs().max(1e-300);
                check(h.score == *score || rel <= 1e-6, || {
                    format!("library {lib_no}: score {} vs {score}", h.score)
                })?;
            }
            lists += 1;
        }
    }
    Ok(format!(
        "200 libraries, {lists} hit lists identical to full scan"
    ))
}

struct TableProbe(BTreeMap<String, Vec<f64>>);

impl OptionProbe for TableProbe {
    fn probe_options(&self, id: &str, hp: &str) -> Result<OptionProbeResult, OracleError> {
        Ok(OptionProbeResult {
            embedding_id: id.into(),
            hard_prompt_id: hp.into(),
            option_probs: self.0[id].clone(),
        })
    }
}

fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = rng.random_range(2..=5);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn selection_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    for t in 0..1000 {
        let distinct = rng.random_range(1..=15usize);
        // small counts make frequency ties common
        let counts: Vec<(String, u64)> = (0..distinct)
            .map(|i| {
                (
                    format!("emb-{:02}", (i * 7 + t) % 40),
                    rng.random_range(1..=6),
                )
            })
            .collect();
        let tally = CandidateTally::from_counts(counts);
        let probe = TableProbe(
            tally
                .counts
                .keys()
                .map(|id| (id.clone(), random_probs(&mut rng)))
                .collect(),
        );
        let n_prime = rng.random_range(1..=6usize);
        let factor = rng.random_range(2..=1000u64);

        let top = select_top_frequency(&tally).map_err(|e| e.to_string())?;
        let inter1 = interpolate(&tally, 1).map_err(|e| e.to_string())?;
        check(inter1.chosen == top.chosen, || {
            format!("tally {t}: (a) interpolate(.,1)")
        })?;

        let mut scored = tally.clone();
        let var = select_variance(&mut scored, &probe, "hp").map_err(|e| e.to_string())?;
        let by_score1 = interpolate_by_score(&scored, 1).map_err(|e| e.to_string())?;
        check(by_score1.chosen == var.chosen, || {
            format!("tally {t}: (b) interpolate_by_score(.,1)")
        })?;

        let mut all: Vec<Selection> = vec![top.clone(), inter1, var, by_score1];
        for strategy in Strategy::ALL {
            let mut fresh = tally.clone();
            all.push(
                select(strategy, &mut fresh, n_prime, Some(&probe), "hp")
                    .map_err(|e| e.to_string())?,
            );
        }
        for s in &all {
            check((s.weight_sum() - 1.0).abs() <= 1e-9, || {
                format!(
                    "tally {t}: (c) {} weights sum to {}",
                    s.strategy,
                    s.weight_sum()
                )
            })?;
        }

        let scaled = tally.scaled(factor);
        for strategy in Strategy::ALL {
            let mut a = tally.clone();
            let mut b = scaled.clone();
            let sa =
                select(strategy, &mut a, n_prime, Some(&probe), "hp").map_err(|e| e.to_string())?;
            let sb =
                select(strategy, &mut b, n_prime, Some(&probe), "hp").map_err(|e| e.to_string())?;
            check(sa.chosen == sb.chosen, || {
                format!(
                    "tally {t}: (d) {strategy} changed under x{factor}: {:?} vs {:?}",
                    sa.chosen, sb.chosen
                )
            })?;
        }
    }
    Ok("1000 tallies: (a) (b) (c) (d) hold for all four strategies".into())
}

fn variance_score_fidelity() -> Outcome {
    let mut failures = Vec::new();
    let exact = variance_score(4, &[0.6, 0.4]).map_err(|e| e.to_string())?;
    if exact != 40.0 {
        failures.push(format!(
            "variance_score(4, (0.6, 0.4)) = {exact:?}, expected exactly 40.0"
        ));
    }
    // two-option distributions (0.5 + d, 0.5 - d): variance d^2, well above the floor
    let spreads: Vec<f64> = (1..=20).map(|k| 0.02 * k as f64).collect();
    let grid: Vec<Vec<f64>> = (1..=20u64)
        .map(|f| {
            spreads
                .iter()
                .map(|d| variance_score(f, &[0.5 + d, 0.5 - d]).unwrap())
                .collect()
        })
        .collect();
    for f in 0..20 {
        for v in 0..20 {
            if f + 1 < 20 && grid[f + 1][v] <= grid[f][v] {
                failures.push(format!("not increasing in freq at ({}, {})", f + 1, v));
            }
            if v + 1 < 20 && grid[f][v + 1] >= grid[f][v] {
                failures.push(format!("not decreasing in variance at ({}, {})", f + 1, v));
            }
        }
    }
    if failures.is_empty() {
        Ok("exact value and 20x20 monotonicity grid".into())
    } else {
        Err(failures.join("; "))
    }
}

fn fixture_arithmetic() -> Outcome {
    let rte = builtin_fixture("rte").map_err(|e| e.to_string())?;
    let replay = replay_fixture(&rte).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = replay
        .prompts
        .iter()
        .map(|p| p.selected_embedding.as_str())
        .collect();
    let column: Vec<&str> = rte
        .prompts
        .iter()
        .map(|p| p.rospr_embedding.as_str())
        .collect();
    check(ids == column, || {
        "RTE retrieved-embedding column not reproduced".into()
    })?;
    let rte_mean = replay.columns["rospr"].mean;
    check((rte_mean - 71.30).abs() <= 0.01, || {
        format!("RTE mean {rte_mean}")
    })?;

    let table = TableOneFixture::builtin();
    let t0 = table.row("T0 (3B)").ok_or("T0 row missing")?;
    let (t0_mean, _) = aggregate_report(&t0.accuracies).map_err(|e| e.to_string())?;
    check((t0_mean - 51.22).abs() <= 0.01, || {
        format!("T0 mean {t0_mean}")
    })?;
    Ok(format!(
        "RTE mean {rte_mean:.4} (71.30), T0 row mean {t0_mean:.4} (51.22)"
    ))
}

fn planted_optimum() -> Outcome {
    let base = AblationBase {
        world: WorldSpec::default(),
        strategy: Strategy::Frequency,
        pipeline: PipelineConfig {
            query_count: 32,
            top_n: 10,
            ..Default::default()
        },
        build: BuildConfig::default(),
        world_seeds: (0..100).collect(),
        seeds: vec![0],
        prompts_count: None,
        datasets_count: None,
    };
    check(
        base.world.embedding_count() == 10 && base.world.separation >= 4.0,
        || "world spec drifted".into(),
    )?;
    let main = run_cell(&base).map_err(|e| e.to_string())?;
    check(main.trials == 100, || format!("{} trials", main.trials))?;
    let mut rates = Vec::new();
    for q in [1usize, 4, 8, 32] {
        let mut cell = base.clone();
        cell.pipeline.query_count = q;
        rates.push((q, run_cell(&cell).map_err(|e| e.to_string())?.successes));
    }
    let summary = format!(
        "{}/100 at Q=32; successes by Q: {}",
        main.successes,
        rates
            .iter()
            .map(|(q, s)| format!("{q}:{s}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    check(main.successes >= 95, || summary.clone())?;
    check(rates.windows(2).all(|w| w[0].1 <= w[1].1), || {
        format!("not monotone: {summary}")
    })?;
    Ok(summary)
}

fn oracle_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut comparisons = 0usize;
    let mut violations = Vec::new();
    for task_no in 0..100u64 {
        let spec = WorldSpec {
            seed: 1000 + task_no,
            datasets: rng.random_range(2..=5),
            prompts_per_dataset: rng.random_range(1..=3),
            separation: rng.random_range(1.0..6.0),
            query_purity: rng.random_range(0.2..1.0),
            hard_prompts: 3,
            option_count: rng.random_range(2..=4),
            ..Default::default()
        };
        let world = SyntheticWorld::generate(&spec).map_err(|e| e.to_string())?;
        let library = world
            .build_library(&BuildConfig {
                n_per_prompt: rng.random_range(10..=100),
                ..Default::default()
            })
            .map_err(|e| e.to_string())?;
        let index = MipsIndex::build(&library).map_err(|e| e.to_string())?;
        let config = PipelineConfig {
            query_count: rng.random_range(1..=32),
            top_n: rng.random_range(1..=10),
            n_prime: rng.random_range(1..=4),
            ..Default::default()
        };
        for strategy in Strategy::ALL {
            let outcomes = run_pipeline(
                &world.task,
                &library,
                &index,
                strategy,
                &config,
                task_no,
                &world.oracle,
            )
            .map_err(|e| e.to_string())?;
            for o in outcomes {
                let ids: Vec<String> = o.tally.counts.keys().cloned().collect();
                let (_, best) = oracle_selection(&o.hard_prompt_id, &ids, &world.oracle)
                    .map_err(|e| e.to_string())?;
                comparisons += 1;
                if o.accuracy > best {
                    violations.push(format!(
                        "task {task_no} {strategy} {}: {} > {best}",
                        o.hard_prompt_id, o.accuracy
                    ));
                }
            }
        }
    }
    check(violations.is_empty(), || {
        format!("{} violations: {}", violations.len(), violations.join("; "))
    })?;
    Ok(format!(
        "100 tasks, {comparisons} strategy/prompt comparisons, 0 violations"
    ))
}

/// Exact integer nearest-to-centroid selection for keys on a half-integer grid.
fn brute_force_clustering(keys: &[Vec<f32>], n: usize) -> Vec<usize> {
    let count = keys.len() as i64;
    let twice: Vec<Vec<i64>> = keys
        .iter()
        .map(|k| k.iter().map(|&v| (v * 2.0) as i64).collect())
        .collect();
    let dim = keys[0].len();
    let sums: Vec<i64> = (0..dim).map(|d| twice.iter().map(|k| k[d]).sum()).collect();
    let mut scored: Vec<(i64, usize)> = twice
        .iter()
        .enumerate()
        .map(|(i, k)| {
            (
                k.iter()
                    .zip(&sums)
                    .map(|(&v, &s)| (count * v - s).pow(2))
                    .sum(),
                i,
            )
        })
        .collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, i)| i).collect()
}

fn sampling_methods() -> Outcome {
    let mut sets = 0usize;
    let mut cases = 0usize;
    let mut verify = |keys: &[Vec<f32>]| -> Result<(), String> {
        sets += 1;
        for n in 1..=keys.len() + 2 {
            cases += 1;
            let got = sample_clustering(keys, n);
            let want = brute_force_clustering(keys, n.min(keys.len()));
            check(got == want, || {
                format!("keys {keys:?} n={n}: {got:?} vs {want:?}")
            })?;
        }
        Ok(())
    };
    // every 1-D sequence of length <= 7 over {-1, -0.5, 0, 0.5, 1}
    let alphabet = [-1.0f32, -0.5, 0.0, 0.5, 1.0];
    for len in 1..=7u32 {
        for code in 0..alphabet.len().pow(len) {
            let mut c = code;
            let keys: Vec<Vec<f32>> = (0..len)
                .map(|_| {
                    let v = alphabet[c % alphabet.len()];
                    c /= alphabet.len();
                    vec![v]
                })
                .collect();
            verify(&keys)?;
        }
    }
    // random multi-dimensional sets of every size up to 12
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    for size in 1..=12usize {
        for _ in 0..2000 {
            let dim = rng.random_range(1..=6);
            let keys: Vec<Vec<f32>> = (0..size)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.random_range(-6i32..=6) as f32 * 0.5)
                        .collect()
                })
                .collect();
            verify(&keys)?;
        }
    }

    let keys: Vec<Vec<f32>> = (0..1000)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let order = centroid_order(&keys);
    let picked = sample_distributed(&keys, 100);
    let mut positions: Vec<usize> = picked
        .iter()
        .map(|i| order.iter().position(|o| o == i).unwrap())
        .collect();
    positions.sort_unstable();
    let expected: Vec<usize> = (0..100).map(|k| 10 * k).collect();
    check(positions == expected, || {
        format!("distributed positions {positions:?}")
    })?;
    Ok(format!("clustering matches brute force on {sets} sets / {cases} cases; distributed 1000/100 -> 0,10,..,990"))
}

fn persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut total_bytes = 0usize;
    for i in 0..100 {
        let dim = rng.random_range(1..=32usize);
        let mut lib = random_library(&mut rng, 300, dim);
        if i % 2 == 0 {
            lib = lib
                .with_build_config(BuildConfig {
                    n_per_prompt: 7,
                    seed: i,
                    ..Default::default()
                })
                .with_provenance(BTreeMap::from([("run".to_owned(), i.to_string())]));
        }
        let bytes = encode_library(&lib).map_err(|e| e.to_string())?;
        let decoded = decode_library(&bytes).map_err(|e| e.to_string())?;
        let again = encode_library(&decoded).map_err(|e| e.to_string())?;
        check(bytes == again, || {
            format!("library {i}: bytes differ after decode")
        })?;
        check(
            decoded.entries() == lib.entries() && decoded.embeddings() == lib.embeddings(),
            || format!("library {i}: contents differ"),
        )?;
        let path = dir.path().join(format!("lib-{i}.splb"));
        save_library(&lib, &path).map_err(|e| e.to_string())?;
        let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
        check(on_disk == bytes, || {
            format!("library {i}: file bytes differ")
        })?;
        let loaded = load_library(&path).map_err(|e| e.to_string())?;
        check(
            loaded.build_config() == lib.build_config() && loaded.provenance() == lib.provenance(),
            || format!("library {i}: manifest fields lost"),
        )?;
        total_bytes += bytes.len();
    }

    let lib = random_library(&mut rng, 50, 4);
    let good = encode_library(&lib).map_err(|e| e.to_string())?;
    let mut corrupt = Vec::new();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    corrupt.push(("magic", bad_magic, "SPLB_BAD_MAGIC"));
    let mut bad_version = good.clone();
    bad_version[4..8].copy_from_slice(&99u32.to_le_bytes());
    corrupt.push(("version", bad_version, "SPLB_BAD_VERSION"));
    corrupt.push(("short header", good[..20].to_vec(), "SPLB_TRUNCATED"));
    let mut huge = good.clone();
    huge[24..32].copy_from_slice(&u64::MAX.to_le_bytes());
    corrupt.push(("entry count", huge, "SPLB_TRUNCATED"));
    // header fields that decode but break a library invariant
    let lone = SourcePromptLibrary::from_parts(
        4,
        1,
        1,
        lib.embeddings()[..1]
            .iter()
            .cloned()
            .map(|mut e| {
                e.matrix = PromptMatrix::new(1, 1, vec![0.5]).unwrap();
                e
            })
            .collect(),
        Vec::new(),
    )
    .map_err(|e| e.to_string())?;
    let mut zero_dim = encode_library(&lone).map_err(|e| e.to_string())?;
    zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
    corrupt.push(("key_dim", zero_dim, "SPLB_INVALID_LIBRARY"));
    let mut missing_embeddings = good.clone();
    missing_embeddings[20..24].copy_from_slice(&10_000u32.to_le_bytes());
    corrupt.push(("embedding count", missing_embeddings, "SPLB_TRUNCATED"));
    let mut trailing = good.clone();
    trailing.push(0);
    corrupt.push(("trailing", trailing, "SPLB_TRAILING_BYTES"));
    check(good[..4] == LIBRARY_MAGIC, || {
        "magic not at offset 0".into()
    })?;
    for (what, bytes, code) in &corrupt {
        match decode_library(bytes) {
            Ok(_) => return Err(format!("corrupted {what} accepted")),
            Err(e) => check(e.code() == *code, || {
                format!("corrupted {what}: {} ({e})", e.code())
            })?,
        }
    }
    Ok(format!(
        "100 libraries ({total_bytes} bytes) byte-identical; {} corruptions rejected with codes",
        corrupt.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("mips-exactness", mips_exactness),
        ("selection-algebra", selection_algebra),
        ("variance-score", variance_score_fidelity),
        ("fixture-arithmetic", fixture_arithmetic),
        ("planted-optimum", planted_optimum),
        ("oracle-dominance", oracle_dominance),
        ("sampling-methods", sampling_methods),
        ("persistence", persistence),
    ];
    let strict = std::env::var("SPL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let known = |name: &str| {
        KNOWN_FAILURES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, why)| *why)
    };
    let (mut failed, mut known_failed, mut unexpected) = (0, 0, Vec::new());
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match (outcome, known(name)) {
            (Ok(detail), None) => println!("PASS {name} ({secs:.2}s): {detail}"),
            (Ok(detail), Some(_)) => {
                unexpected.push(name);
                println!("PASS {name} ({secs:.2}s): {detail} [listed as a known failure]");
            }
            (Err(detail), why) => {
                failed += 1;
                match why {
                    Some(why) => {
                        known_failed += 1;
                        println!("FAIL {name} ({secs:.2}s): {detail} [known: {why}]");
                    }
                    None => {
                        unexpected.push(name);
                        println!("FAIL {name} ({secs:.2}s): {detail}");
                    }
                }
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({known_failed} known)",
        criteria.len() - failed
    );
    if !unexpected.is_empty() || (strict && failed > 0) {
        std::process::exit(1);
    }
}
