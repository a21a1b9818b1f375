//! Acceptance suite. Each test prints one `PASS` or `FAIL` line for its
//! criterion before asserting.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssc::checkpoint::{init_model, Checkpoint};
use ssc::corpus::{aggregate, gen_synthetic, planted_indices, qualify, Vote};
use ssc::crf::{self, CrfParams};
use ssc::encoder::{EncoderConfig, Graph};
use ssc::metrics::{accuracy, lcs_length, micro_f1, rouge_l, LabeledPair};
use ssc::model::{prepare, Example, Model, ModelKind, ModelSpec, Task};
use ssc::seqpack::{bisect_split, Document, Vocab};
use ssc::tensor::{gradcheck, ParamStore, Tensor};
use ssc::trainer::{accumulate_and_step, evaluate, train, AdamState, Splits, TrainConfig};

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    // written to the handle directly so the line survives test output capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{verdict} criterion {criterion:>2} ({name}): {detail}");
}

fn within(criterion: u32, name: &str, elapsed: Duration, limit: Duration) -> bool {
    let ok = elapsed <= limit;
    if !ok {
        report(criterion, name, false, &format!("took {elapsed:?}, limit {limit:?}"));
    }
    ok
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn ssc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssc"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("ssc runs");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_01_gradients() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut check = |name: &'static str, inputs: Vec<Tensor>, f: &dyn Fn(&mut ssc::tensor::Tape<'_>, &[ssc::tensor::Var]) -> ssc::tensor::Result<ssc::tensor::Var>| {
        let r = gradcheck::check_inputs(&inputs, gradcheck::STEP, f).unwrap();
        worst.push((name, r.max_rel_err));
    };
    // every op reduced to a scalar through a fixed random weighting so
    // that each output element has a distinct gradient
    let w23 = random_tensor(&mut rng, &[2, 3]);
    let w33 = random_tensor(&mut rng, &[3, 3]);
    let w32 = random_tensor(&mut rng, &[3, 2]);
    let w34 = random_tensor(&mut rng, &[3, 4]);
    let w35 = random_tensor(&mut rng, &[3, 5]);
    let w6 = random_tensor(&mut rng, &[6]);
    let weigh = |t: &mut ssc::tensor::Tape<'_>, y: ssc::tensor::Var, w: &Tensor| {
        let c = t.constant(w.clone())?;
        let p = t.mul(y, c)?;
        t.sum(p)
    };
    let a23 = random_tensor(&mut rng, &[2, 3]);
    let a33 = random_tensor(&mut rng, &[3, 3]);
    let b32 = random_tensor(&mut rng, &[3, 2]);
    let v3 = random_tensor(&mut rng, &[3]);

    check("matmul", vec![a23.clone(), a33.clone()], &|t, x| {
        let y = t.matmul(x[0], x[1])?;
        weigh(t, y, &w23)
    });
    check("transpose", vec![a23.clone()], &|t, x| {
        let y = t.transpose(x[0])?;
        weigh(t, y, &w32)
    });
    check("add", vec![a33.clone(), random_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[3, 3])], &|t, x| {
        let y = t.add(x[0], x[1])?;
        weigh(t, y, &w33)
    });
    check("add_row", vec![a33.clone(), v3.clone()], &|t, x| {
        let y = t.add_row(x[0], x[1])?;
        weigh(t, y, &w33)
    });
    check("mul", vec![a33.clone(), random_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[3, 3])], &|t, x| {
        let y = t.mul(x[0], x[1])?;
        weigh(t, y, &w33)
    });
    check("scale", vec![a33.clone()], &|t, x| {
        let y = t.scale(x[0], -1.7)?;
        weigh(t, y, &w33)
    });
    check("softmax rows", vec![a33.clone()], &|t, x| {
        let y = t.softmax(x[0], 1)?;
        weigh(t, y, &w33)
    });
    check("softmax columns", vec![a33.clone()], &|t, x| {
        let y = t.softmax(x[0], 0)?;
        weigh(t, y, &w33)
    });
    check("masked_softmax", vec![a33.clone()], &|t, x| {
        let y = t.masked_softmax(x[0], &[true, false, true])?;
        weigh(t, y, &w33)
    });
    check("layer_norm", vec![random_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[3, 4]), random_tensor(&mut ChaCha8Rng::seed_from_u64(4), &[4]), random_tensor(&mut ChaCha8Rng::seed_from_u64(5), &[4])], &|t, x| {
        let y = t.layer_norm(x[0], x[1], x[2], 1e-12)?;
        weigh(t, y, &w34)
    });
    check("gelu", vec![a33.clone()], &|t, x| {
        let y = t.gelu(x[0])?;
        weigh(t, y, &w33)
    });
    check("sigmoid", vec![a33.clone()], &|t, x| {
        let y = t.sigmoid(x[0])?;
        weigh(t, y, &w33)
    });
    check("dropout", vec![a33.clone()], &|t, x| {
        // the same mask on every evaluation
        let y = t.dropout(x[0], 0.4, true, &mut ChaCha8Rng::seed_from_u64(6))?;
        weigh(t, y, &w33)
    });
    check("gather_rows", vec![random_tensor(&mut ChaCha8Rng::seed_from_u64(7), &[4, 3])], &|t, x| {
        let y = t.gather_rows(x[0], &[2, 0, 2])?;
        weigh(t, y, &w33)
    });
    check("concat_cols", vec![a33.clone(), b32.clone()], &|t, x| {
        let y = t.concat_cols(&[x[0], x[1]])?;
        weigh(t, y, &w35)
    });
    check("concat_rows", vec![a23.clone(), a33.clone()], &|t, x| {
        let y = t.concat_rows(&[x[0], x[1]])?;
        let y = t.reshape(y, &[15])?;
        let w = Tensor::new(vec![15], w35.data().to_vec()).unwrap();
        weigh(t, y, &w)
    });
    check("narrow_cols", vec![random_tensor(&mut ChaCha8Rng::seed_from_u64(8), &[2, 5])], &|t, x| {
        let y = t.narrow_cols(x[0], 1, 3)?;
        weigh(t, y, &w23)
    });
    check("reshape", vec![a23.clone()], &|t, x| {
        let y = t.reshape(x[0], &[6])?;
        weigh(t, y, &w6)
    });
    check("sum", vec![a33.clone()], &|t, x| {
        let y = t.gelu(x[0])?;
        t.sum(y)
    });
    check("mean", vec![a33.clone()], &|t, x| {
        let y = t.sigmoid(x[0])?;
        t.mean(y)
    });
    check("cross_entropy", vec![a33.clone()], &|t, x| t.cross_entropy(x[0], &[2, 0, 1]));
    check("mse", vec![v3.clone()], &|t, x| t.mse(x[0], &[0.3, -0.2, 1.0]));
    check("scalar_fn", vec![v3.clone()], &|t, x| {
        // f(v) = Σ v_i³ supplied with its hand gradient
        let v = t.value(x[0]).to_vec();
        let value = v.iter().map(|a| a * a * a).sum();
        let grad = v.iter().map(|a| 3.0 * a * a).collect();
        let s = t.scalar_fn(&[x[0]], value, vec![grad])?;
        t.scale(s, 0.5)
    });

    // end-to-end joint model
    let docs: Vec<Document> = (0..2)
        .map(|d| {
            let sents = (0..3).map(|i| format!("t{} t{} t{} .", (d * 7 + i) % 40, (i * 3) % 40, d + i)).collect();
            Document::new(format!("g{d}"), sents).with_labels(vec![0, 1, 2])
        })
        .collect();
    let vocab = Vocab::build(&docs, 50).unwrap();
    let enc = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        ff_dim: 32,
        vocab_size: 50,
        max_positions: 32,
        dropout: 0.0,
    };
    let spec = ModelSpec::new(ModelKind::Joint, Task::Classify, enc, 3);
    let (model, store) = init_model(&spec, 5).unwrap();
    let ex = prepare(&spec, &vocab, &docs).unwrap();
    let r = gradcheck::check_params(&store, gradcheck::STEP, |tape, store| {
        let mut g = Graph::eval(tape, store);
        model.loss(&mut g, &ex[0])
    })
    .unwrap();
    worst.push(("joint model", r.max_rel_err));

    let elapsed = start.elapsed();
    let (name, max) = worst.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let ok = max <= 1e-4 && within(1, "gradient correctness", elapsed, Duration::from_secs(60));
    report(
        1,
        "gradient correctness",
        ok,
        &format!(
            "{} checks, max relative error {max:.2e} ({name}), {} model scalars, {elapsed:.1?}",
            worst.len(),
            r.checked
        ),
    );
    assert!(ok, "{worst:?}");
}

/// Log-partition and best path by enumerating all `L^T` label paths.
fn crf_brute_force(em: &Tensor, p: &CrfParams) -> (f64, Vec<usize>) {
    let (t_len, l) = (em.rows(), p.labels);
    let mut scores = Vec::new();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for code in 0..l.pow(t_len as u32) {
        let mut path = Vec::with_capacity(t_len);
        let mut c = code;
        for _ in 0..t_len {
            path.push(c % l);
            c /= l;
        }
        path.reverse();
        let mut s = p.start[path[0]] + p.end[path[t_len - 1]];
        for t in 0..t_len {
            s += em.at(t, path[t]);
            if t > 0 {
                s += p.transitions[path[t - 1] * l + path[t]];
            }
        }
        if s > best.0 {
            best = (s, path);
        }
        scores.push(s);
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    (z, best.1)
}

#[test]
fn criterion_02_crf_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut max_err, mut path_mismatches) = (0.0f64, 0);
    for _ in 0..200 {
        let l = rng.gen_range(1..=4);
        let t = rng.gen_range(1..=6);
        let em = Tensor::new(vec![t, l], (0..t * l).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let mut gen = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let p = CrfParams {
            labels: l,
            transitions: gen(l * l),
            start: gen(l),
            end: gen(l),
        };
        let (z, best) = crf_brute_force(&em, &p);
        max_err = max_err.max((crf::log_partition(&em, &p).unwrap() - z).abs());
        if crf::viterbi(&em, &p).unwrap().0 != best {
            path_mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = max_err <= 1e-10 && path_mismatches == 0 && within(2, "CRF oracle", elapsed, Duration::from_secs(10));
    report(
        2,
        "CRF oracle",
        ok,
        &format!("200 instances, max |logZ error| {max_err:.1e}, {path_mismatches} viterbi mismatches, {elapsed:.1?}"),
    );
    assert!(ok);
}

/// All strings of length 0..=8 over {0,1,2}, indexed by length then
/// base-3 value.
struct Strings {
    items: Vec<Vec<u8>>,
    offsets: Vec<usize>,
}

impl Strings {
    fn new(max_len: usize) -> Self {
        let mut items = Vec::new();
        let mut offsets = Vec::new();
        for len in 0..=max_len {
            offsets.push(items.len());
            for code in 0..3usize.pow(len as u32) {
                let mut s = vec![0u8; len];
                let mut c = code;
                for k in (0..len).rev() {
                    s[k] = (c % 3) as u8;
                    c /= 3;
                }
                items.push(s);
            }
        }
        Self { items, offsets }
    }

    fn index(&self, s: &[u8]) -> usize {
        self.offsets[s.len()] + s.iter().fold(0usize, |acc, &x| acc * 3 + x as usize)
    }
}

/// Indices of all distinct subsequences of `s`, grouped by length.
fn subsequences(strings: &Strings, s: &[u8]) -> Vec<Vec<usize>> {
    let mut by_len: Vec<HashSet<usize>> = vec![HashSet::new(); s.len() + 1];
    for mask in 0u32..(1 << s.len()) {
        let sub: Vec<u8> = (0..s.len()).filter(|i| mask & (1 << i) != 0).map(|i| s[i]).collect();
        by_len[sub.len()].insert(strings.index(&sub));
    }
    by_len.into_iter().map(|set| set.into_iter().collect()).collect()
}

#[test]
fn criterion_03_rouge_oracle() {
    let start = Instant::now();
    let strings = Strings::new(8);
    let n = strings.items.len();
    let words = n.div_ceil(64);
    // contains[s] = set of strings having s as a subsequence
    let mut contains = vec![vec![0u64; words]; n];
    for (b, s) in strings.items.iter().enumerate() {
        for level in subsequences(&strings, s) {
            for sub in level {
                contains[sub][b / 64] |= 1 << (b % 64);
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get());
    let chunk = n.div_ceil(threads);
    let mismatches: usize = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (strings, contains) = (&strings, &contains);
                scope.spawn(move || {
                    let mut bad = 0;
                    for a in (t * chunk)..((t + 1) * chunk).min(n) {
                        let sa = &strings.items[a];
                        // level[k]: strings sharing a length-k subsequence with a
                        let levels: Vec<Vec<u64>> = subsequences(strings, sa)
                            .into_iter()
                            .map(|subs| {
                                let mut acc = vec![0u64; words];
                                for s in subs {
                                    for (x, y) in acc.iter_mut().zip(&contains[s]) {
                                        *x |= y;
                                    }
                                }
                                acc
                            })
                            .collect();
                        for (b, sb) in strings.items.iter().enumerate() {
                            let oracle = (1..levels.len())
                                .filter(|&k| levels[k][b / 64] & (1 << (b % 64)) != 0)
                                .count();
                            if lcs_length(sa, sb) != oracle {
                                bad += 1;
                            }
                        }
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    let cand = ["a", "c"];
    let reference = ["a", "b", "c"];
    let f = rouge_l(&cand, &reference).unwrap().f;
    let ok = mismatches == 0 && f == 0.8;
    report(
        3,
        "ROUGE oracle",
        ok,
        &format!("{n}x{n} pairs, {mismatches} LCS mismatches, worked example F = {f}, {:.1?}", start.elapsed()),
    );
    assert!(ok);
}

#[test]
fn criterion_04_micro_f1_is_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut differ = 0;
    for _ in 0..1000 {
        let classes = rng.gen_range(2..=12);
        let len = rng.gen_range(1..=300);
        let pairs: Vec<LabeledPair> = (0..len)
            .map(|_| LabeledPair {
                gold: rng.gen_range(0..classes),
                pred: rng.gen_range(0..classes),
            })
            .collect();
        let plain = pairs.iter().filter(|p| p.gold == p.pred).count() as f64 / len as f64;
        let f1 = micro_f1(&pairs, classes).unwrap();
        if f1 != plain || accuracy(&pairs).unwrap() != plain {
            differ += 1;
        }
    }
    report(4, "micro-F1 identity", differ == 0, &format!("1000 lists, {differ} differ"));
    assert_eq!(differ, 0);
}

#[test]
fn criterion_05_memorization() {
    let start = Instant::now();
    let corpus = gen_synthetic(55, 32, 6).unwrap();
    let vocab = Vocab::build(&corpus.docs, 1000).unwrap();
    let enc = EncoderConfig {
        num_layers: 4,
        num_heads: 4,
        hidden_dim: 64,
        ff_dim: 128,
        vocab_size: vocab.len(),
        max_positions: 128,
        dropout: 0.0,
    };
    let spec = ModelSpec::new(ModelKind::Joint, Task::Classify, enc, 2);
    let config = TrainConfig {
        learning_rates: vec![1e-3],
        epochs: 200,
        micro_batch: 32,
        effective_batch: 32,
        seeds: vec![1],
    };
    let docs = &corpus.docs;
    let mut last_loss = f64::NAN;
    let out = train(
        &spec,
        &vocab,
        Splits {
            train: docs,
            dev: docs,
            test: docs,
        },
        &config,
        &mut |l| last_loss = l.train_loss,
    )
    .unwrap();
    let ex = prepare(&spec, &vocab, docs).unwrap();
    let (r, _) = evaluate(&out.model, &out.store, docs, &ex).unwrap();
    let f1 = r.micro_f1.unwrap();
    let elapsed = start.elapsed();
    let ok = f1 >= 0.99 && within(5, "memorization", elapsed, Duration::from_secs(600));
    report(
        5,
        "memorization",
        ok,
        &format!(
            "training micro-F1 {f1:.4} (epoch {}), final loss {last_loss:.2e}, {elapsed:.1?}",
            out.runs[0].best_epoch
        ),
    );
    assert!(ok);
}

fn context_run(kind: ModelKind, context: bool, epochs: usize, vocab: &Vocab, splits: Splits) -> f64 {
    let enc = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 32,
        ff_dim: 64,
        vocab_size: vocab.len(),
        max_positions: 128,
        dropout: 0.1,
    };
    let mut spec = ModelSpec::new(kind, Task::Classify, enc, 2);
    spec.context_layer = context;
    let config = TrainConfig {
        learning_rates: vec![2e-3],
        epochs,
        micro_batch: 32,
        effective_batch: 32,
        seeds: vec![1],
    };
    train(&spec, vocab, splits, &config, &mut |_| {}).unwrap().test_metric
}

#[test]
fn criterion_06_context_dependency() {
    let start = Instant::now();
    let train_c = gen_synthetic(61, 2000, 6).unwrap();
    let dev_c = gen_synthetic(62, 200, 6).unwrap();
    let test_c = gen_synthetic(63, 500, 6).unwrap();
    let vocab = Vocab::build(&train_c.docs, 1000).unwrap();
    let splits = Splits {
        train: &train_c.docs,
        dev: &dev_c.docs,
        test: &test_c.docs,
    };
    let joint = context_run(ModelKind::Joint, false, 6, &vocab, splits);
    let alone = context_run(ModelKind::ClsBaseline, false, 3, &vocab, splits);
    let with_context = context_run(ModelKind::ClsBaseline, true, 10, &vocab, splits);
    let elapsed = start.elapsed();
    let ok = joint >= 0.95
        && alone <= 0.60
        && with_context >= 0.90
        && within(6, "context dependency", elapsed, Duration::from_secs(1800));
    report(
        6,
        "context dependency",
        ok,
        &format!(
            "test accuracy joint {joint:.4}, [CLS] alone {alone:.4}, [CLS]+context {with_context:.4}, {elapsed:.1?}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_bisection() {
    let mut violations = 0;
    for n in 0..=200 {
        for threshold in 1..=30 {
            let splits = bisect_split(n, threshold);
            let mut next = 0;
            for r in &splits {
                if r.start != next || r.is_empty() || r.len() > threshold {
                    violations += 1;
                }
                next = r.end;
            }
            if next != n {
                violations += 1;
            }
        }
    }
    let lens: Vec<usize> = bisect_split(25, 10).iter().map(|r| r.len()).collect();
    let ok = violations == 0 && lens == [7, 6, 6, 6];
    report(
        7,
        "bisection",
        ok,
        &format!("{violations} violations over n <= 200, threshold <= 30; n=25,t=10 gives {lens:?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_08_aggregation() {
    let accs: BTreeMap<String, f64> = [("w1", 0.9), ("w2", 0.8), ("w3", 0.8), ("w4", 0.7), ("w5", 0.6)]
        .into_iter()
        .map(|(w, a)| (w.to_string(), a))
        .collect();
    let votes: Vec<Vote> = [("w1", 0), ("w2", 0), ("w3", 1), ("w4", 1), ("w5", 1)]
        .into_iter()
        .map(|(w, label)| Vote {
            worker: w.to_string(),
            label,
        })
        .collect();
    let (label, conf) = aggregate(&votes, &accs, 2).unwrap();
    let want = (0.8 + 0.7 + 0.6) / (0.9 + 0.8 + 0.8 + 0.7 + 0.6);
    let boundary: BTreeMap<String, f64> = [("edge", 0.75), ("below", 0.74)]
        .into_iter()
        .map(|(w, a)| (w.to_string(), a))
        .collect();
    let q = qualify(&boundary, 0.75);
    let ok = label == 1 && (conf - want).abs() <= 1e-12 && (conf - 2.1 / 3.8).abs() <= 1e-12 && q.contains("edge") && !q.contains("below");
    report(
        8,
        "aggregation",
        ok,
        &format!("label {}, confidence {conf} vs 2.1/3.8, qualified at 0.75: {q:?}", ["A", "B"][label]),
    );
    assert!(ok);
}

#[test]
fn criterion_09_accumulation() {
    let corpus = gen_synthetic(99, 32, 4).unwrap();
    let vocab = Vocab::build(&corpus.docs, 100).unwrap();
    let enc = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        ff_dim: 32,
        vocab_size: vocab.len(),
        max_positions: 64,
        dropout: 0.0,
    };
    let spec = ModelSpec::new(ModelKind::Joint, Task::Classify, enc, 2);
    let (model, store) = init_model(&spec, 9).unwrap();
    let examples = prepare(&spec, &vocab, &corpus.docs).unwrap();
    assert_eq!(examples.len(), 32);
    let batch: Vec<&Example> = examples.iter().collect();
    let step = |micro: usize| -> (ParamStore, u64) {
        let mut s = store.clone();
        let mut state = AdamState::new(&s);
        accumulate_and_step(&model, &mut s, &mut state, &batch, micro, 1e-3, None).unwrap();
        (s, state.t)
    };
    let (four, t4) = step(8);
    let (one, t1) = step(32);
    let mut diff = 0.0f64;
    for id in four.ids() {
        for (a, b) in four.value(id).data().iter().zip(one.value(id).data()) {
            diff = diff.max((a - b).abs());
        }
    }
    let moved = one.ids().any(|id| one.value(id) != store.value(id));
    let ok = diff <= 1e-10 && moved && t4 == 1 && t1 == 1;
    report(
        9,
        "gradient accumulation",
        ok,
        &format!("4x8 vs 1x32 max parameter difference {diff:.1e}, one optimizer step each"),
    );
    assert!(ok);
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    run_ok(ssc_bin().args(["gen", "--seed", "10", "--train-docs", "40", "--dev-docs", "10", "--test-docs", "10", "--out"]).arg(&data));
    let run = d.join("run");
    let train_cmd = || {
        let mut c = ssc_bin();
        c.arg("train")
            .arg("--train")
            .arg(data.join("train.jsonl"))
            .arg("--dev")
            .arg(data.join("dev.jsonl"))
            .arg("--test")
            .arg(data.join("test.jsonl"))
            .arg("--out")
            .arg(&run)
            .args(["--lr", "2e-3,5e-3", "--seeds", "4,5", "--epochs", "2", "--hidden", "16", "--ff", "32"])
            .args(["--max-positions", "128", "--dropout", "0.1"]);
        c
    };
    run_ok(&mut train_cmd());
    let first = read_tree(&run);
    std::fs::rename(&run, d.join("first")).unwrap();
    run_ok(&mut train_cmd());
    let second = read_tree(&run);
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let has = |k: &str| first.contains_key(k);
    let ok = differing.is_empty() && has("metrics.json") && has("checkpoint/manifest.txt");
    report(
        10,
        "determinism",
        ok,
        &format!("{} output files compared, {} differ", first.len(), differing.len()),
    );
    assert!(ok, "{differing:?}");
}

#[test]
fn criterion_11_summarization() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    run_ok(
        ssc_bin()
            .args(["gen", "--kind", "summarize", "--seed", "11"])
            .args(["--train-docs", "200", "--dev-docs", "50", "--test-docs", "50", "--out"])
            .arg(&data),
    );
    let run = d.join("run");
    run_ok(
        ssc_bin()
            .arg("train")
            .arg("--train")
            .arg(data.join("train.jsonl"))
            .arg("--dev")
            .arg(data.join("dev.jsonl"))
            .arg("--test")
            .arg(data.join("test.jsonl"))
            .arg("--out")
            .arg(&run)
            .args(["--task", "summarize", "--lr", "2e-3", "--epochs", "20", "--seeds", "1"])
            .args(["--hidden", "32", "--ff", "64", "--max-positions", "256"]),
    );
    let preds = d.join("preds.jsonl");
    run_ok(
        ssc_bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(run.join("checkpoint"))
            .arg("--data")
            .arg(data.join("test.jsonl"))
            .arg("--predictions")
            .arg(&preds),
    );

    // dev MSE before and after training
    let ck = Checkpoint::load(&run.join("checkpoint")).unwrap();
    let dev = ssc::corpus::load_jsonl(&data.join("dev.jsonl"), None).unwrap().docs;
    let ex = prepare(&ck.config.spec, &ck.vocab, &dev).unwrap();
    let (untrained, untrained_store): (Model, ParamStore) = init_model(&ck.config.spec, ck.config.seed).unwrap();
    let before = evaluate(&untrained, &untrained_store, &dev, &ex).unwrap().0.mse.unwrap();
    let after = evaluate(&ck.model, &ck.store, &dev, &ex).unwrap().0.mse.unwrap();

    // planted highlights among the extracted sentences
    let test = ssc::corpus::load_jsonl(&data.join("test.jsonl"), None).unwrap().docs;
    let text = std::fs::read_to_string(&preds).unwrap();
    let (mut found, mut planted) = (0, 0);
    for (doc, line) in test.iter().zip(text.lines()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["doc_id"], doc.doc_id.as_str());
        let summary: Vec<usize> = serde_json::from_value(v["summary"].clone()).unwrap();
        assert!(summary.len() <= 10);
        for i in planted_indices(doc) {
            planted += 1;
            if summary.contains(&i) {
                found += 1;
            }
        }
    }
    let recall = found as f64 / planted as f64;
    let elapsed = start.elapsed();
    let ok = before / after >= 5.0 && recall >= 0.8 && within(11, "summarization", elapsed, Duration::from_secs(900));
    report(
        11,
        "summarization",
        ok,
        &format!(
            "dev MSE {before:.4} -> {after:.5} ({:.1}x), planted highlights recovered {found}/{planted} ({:.1}%), {elapsed:.1?}",
            before / after,
            100.0 * recall
        ),
    );
    assert!(ok);
}
