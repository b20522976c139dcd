//! Acceptance criteria, one test per criterion. Each test prints a single
//! PASS/FAIL line straight to stdout so the lines survive output capture.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adaptmix::cli::{cmd_ablate_entropy, cmd_run, ExperimentConfig, GlobalOptions, Suite};
use adaptmix::diffcore::{finite_difference_gradient, relative_error, ParamSet, Tape, Tensor, Var};
use adaptmix::metrics::{
    auc, auc_ratio, best_loss, mid_budget_loss, summarize, tokens_to_match, win_rate, LossCurve, ScoreTable,
};
use adaptmix::mixture::{entropy, meta_gradient, n_eff, smooth_max, softmax_mixture, MetaGradInputs, MetaHyper};
use adaptmix::model::{QuadraticTaskSpec, TinyLm, TinyLmConfig, TokenBatch};
use adaptmix::tasks::{generate_suite, static_weights, StaticMode, SuiteConfig};
use adaptmix::trainer::{
    run, BudgetedRunRecord, LmWorkload, Method, QuadraticSuiteConfig, QuadraticWorkload, RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn random_spec(rng: &mut ChaCha8Rng, dim: usize) -> QuadraticTaskSpec {
    let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
    let center = normals(rng, dim);
    QuadraticTaskSpec::random(&eig, center, rng.random_range(0.0..1.0), 0.0, rng).unwrap()
}

#[test]
fn c01_meta_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let t = rng.random_range(3..=8);
        let dim = rng.random_range(4..=16);
        let train: Vec<QuadraticTaskSpec> = (0..t).map(|_| random_spec(&mut rng, dim)).collect();
        let val: Vec<QuadraticTaskSpec> = (0..t).map(|_| random_spec(&mut rng, dim)).collect();
        let theta = normals(&mut rng, dim);
        let w: Vec<f64> = normals(&mut rng, t);
        let hyper = MetaHyper {
            tau: [0.1, 0.3, 1.0][case as usize % 3],
            entropy_weight: [0.0, 1e-3, 0.1][(case as usize / 3) % 3],
            probe_lr: rng.random_range(0.05..0.3),
            ..MetaHyper::default()
        };

        let g: Vec<Vec<f64>> = train.iter().map(|s| s.eval(&theta).unwrap().1).collect();
        let probe = |p: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|d| theta[d] - hyper.probe_lr * p.iter().zip(&g).map(|(pi, gi)| pi * gi[d]).sum::<f64>())
                .collect()
        };
        let p = softmax_mixture(&w);
        let theta_p = probe(&p);
        let (v, h): (Vec<f64>, Vec<Vec<f64>>) = val.iter().map(|s| s.eval(&theta_p).unwrap()).unzip();
        let inputs = MetaGradInputs {
            p: &p,
            train_grads: &g,
            val_grads: &h,
            val_losses: &v,
        };
        let closed = meta_gradient(&inputs, &hyper).unwrap();

        let objective = |ps: &ParamSet| {
            let p = softmax_mixture(ps.get("w").unwrap().data());
            let tp = probe(&p);
            let v: Vec<f64> = val.iter().map(|s| s.eval(&tp).unwrap().0).collect();
            smooth_max(&v, hyper.tau) - hyper.entropy_weight * entropy(&p)
        };
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(w.clone()).unwrap()).unwrap();
        let fd = finite_difference_gradient(objective, &ps, 1e-5).unwrap().flatten();
        worst = worst.max(relative_error(&closed, &fd));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-5 && secs < 10.0;
    report(
        1,
        "meta-gradient exactness",
        pass,
        &format!("50 cases, max rel err {worst:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

type Build = fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Var;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normals(rng, n)).unwrap()
}

/// Leaves named x0, x1, ... are built from `inputs`; the op output is reduced
/// with a random weighting and mask so every output element matters.
fn primitive_case(inputs: Vec<Tensor>, build: Build, seed: u64) -> f64 {
    let mut ps = ParamSet::new();
    for (i, t) in inputs.into_iter().enumerate() {
        ps.insert(format!("x{i}"), t).unwrap();
    }
    let forward = |ps: &ParamSet, tape: &mut Tape| -> (Var, Vec<Var>) {
        let leaves: Vec<Var> = ps.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = build(tape, &leaves, &mut rng);
        let shape = tape.value(out).shape().to_vec();
        let n: usize = tape.value(out).len();
        let c = tape.constant(random_tensor(&mut rng, &shape));
        let weighted = tape.mul(out, c).unwrap();
        let mut mask: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.8) { 1.0 } else { 0.0 }).collect();
        mask[0] = 1.0;
        (tape.masked_mean(weighted, mask).unwrap(), leaves)
    };
    let mut tape = Tape::new();
    let (loss, leaves) = forward(&ps, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = leaves.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();
    let fd = finite_difference_gradient(
        |q| {
            let mut tape = Tape::new();
            let (loss, _) = forward(q, &mut tape);
            tape.value(loss).data()[0]
        },
        &ps,
        1e-6,
    )
    .unwrap();
    let numeric: Vec<f64> = ps.names().flat_map(|n| fd.get(n).unwrap().data().to_vec()).collect();
    relative_error(&analytic, &numeric)
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn lm_case(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = TinyLmConfig {
        vocab_size: rng.random_range(5..12),
        embed_dim: rng.random_range(2..6),
        hidden_dim: rng.random_range(2..6),
        context_len: 8,
        seed: rng.random(),
    };
    let model = TinyLm::new(cfg.clone()).unwrap();
    let params = model.init();
    let seqs: Vec<Vec<u32>> = (0..rng.random_range(1..4))
        .map(|_| {
            (0..rng.random_range(2..8))
                .map(|_| rng.random_range(1..cfg.vocab_size as u32))
                .collect()
        })
        .collect();
    let batch = TokenBatch::from_sequences(&seqs).unwrap();
    let (_, grad, _) = model.loss_and_grad(&params, &batch).unwrap();
    let fd = finite_difference_gradient(|q| model.loss_value(q, &batch).unwrap(), &params, 1e-6).unwrap();
    relative_error(&grad, &fd.flatten())
}

#[test]
fn c02_autodiff_matches_finite_differences() {
    let start = Instant::now();
    let names = [
        "add",
        "add_row_broadcast",
        "subtract",
        "multiply",
        "scale",
        "matmul",
        "embedding",
        "relu",
        "tanh",
        "logsumexp_vector",
        "logsumexp_rows",
        "softmax_cross_entropy",
        "masked_mean",
        "tiny_lm_loss",
    ];
    let mut worst = vec![0.0f64; names.len()];
    for case in 0..100u64 {
        let kind = case as usize % names.len();
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let err = match kind {
            0 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[r, c])],
                |t, x, _| t.add(x[0], x[1]).unwrap(),
                case,
            ),
            1 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[c])],
                |t, x, _| t.add(x[0], x[1]).unwrap(),
                case,
            ),
            2 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[r, c])],
                |t, x, _| t.sub(x[0], x[1]).unwrap(),
                case,
            ),
            3 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[r, c])],
                |t, x, _| t.mul(x[0], x[1]).unwrap(),
                case,
            ),
            4 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c])],
                |t, x, rng| t.scale(x[0], rng.random_range(-3.0..3.0)).unwrap(),
                case,
            ),
            5 => {
                let k = rng.random_range(1..5);
                primitive_case(
                    vec![random_tensor(&mut rng, &[r, k]), random_tensor(&mut rng, &[k, c])],
                    |t, x, _| t.matmul(x[0], x[1]).unwrap(),
                    case,
                )
            }
            6 => primitive_case(
                vec![random_tensor(&mut rng, &[6, c])],
                |t, x, rng| {
                    let ids = (0..rng.random_range(1..9)).map(|_| rng.random_range(0..6)).collect();
                    t.embedding(x[0], ids).unwrap()
                },
                case,
            ),
            7 => primitive_case(
                vec![away_from_zero(&mut rng, &[r, c])],
                |t, x, _| t.relu(x[0]).unwrap(),
                case,
            ),
            8 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c])],
                |t, x, _| t.tanh(x[0]).unwrap(),
                case,
            ),
            9 => primitive_case(
                vec![random_tensor(&mut rng, &[c + 1])],
                |t, x, _| t.logsumexp(x[0]).unwrap(),
                case,
            ),
            10 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c + 1])],
                |t, x, _| t.logsumexp(x[0]).unwrap(),
                case,
            ),
            11 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c + 1])],
                |t, x, rng| {
                    let shape = t.value(x[0]).shape().to_vec();
                    let targets = (0..shape[0]).map(|_| rng.random_range(0..shape[1])).collect();
                    t.softmax_cross_entropy(x[0], targets).unwrap()
                },
                case,
            ),
            12 => primitive_case(
                vec![random_tensor(&mut rng, &[r, c])],
                |t, x, rng| {
                    let n = t.value(x[0]).len();
                    let mut mask: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
                    mask[0] = 1.0;
                    t.masked_mean(x[0], mask).unwrap()
                },
                case,
            ),
            _ => lm_case(&mut rng),
        };
        worst[kind] = worst[kind].max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let (arg, _) = worst
        .iter()
        .enumerate()
        .fold((0, 0.0), |a, (i, &e)| if e > a.1 { (i, e) } else { a });
    let pass = max < 1e-5 && secs < 30.0;
    report(
        2,
        "autodiff correctness",
        pass,
        &format!(
            "100 cases over {} checks, max rel err {max:.2e} ({}), {secs:.2}s",
            names.len(),
            names[arg]
        ),
    );
    assert!(pass);
}

#[test]
fn c03_smooth_max_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_gap = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=50);
        let scale = [0.01, 1.0, 100.0][rng.random_range(0..3)];
        let v: Vec<f64> = (0..t).map(|_| scale * normal(&mut rng)).collect();
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ln_t = (t as f64).ln();
        for tau in [0.01, 0.3, 3.0] {
            let j = smooth_max(&v, tau);
            if !(m <= j && j <= m + tau * ln_t) {
                violations += 1;
            }
            if tau == 0.01 {
                let gap = (j - m).abs();
                worst_gap = worst_gap.max(gap - 0.01 * ln_t);
                if gap > 0.01 * ln_t {
                    violations += 1;
                }
            }
        }
    }
    let pass = violations == 0;
    report(
        3,
        "smooth-max contract",
        pass,
        &format!("1000 vectors x 3 temperatures, {violations} violations, max(|J-max| - 0.01 ln T) = {worst_gap:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c04_entropy_ablation_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let opts = GlobalOptions {
        out: Some(dir.path().to_path_buf()),
        ..GlobalOptions::default()
    };
    let outcome = cmd_ablate_entropy(&config_path("hetero6.json"), &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rows = &outcome.rows;
    assert_eq!(rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), vec![0.0, 1e-4, 1e-3]);
    let (r0, r4, r3) = (&rows[0], &rows[1], &rows[2]);
    let ordering = r0.n_eff < r4.n_eff && r4.n_eff <= r3.n_eff;
    let loss = r3.final_mean_val_loss <= r0.final_mean_val_loss;
    let pass = ordering && loss && secs < 300.0;
    report(
        4,
        "entropy-ablation ordering",
        pass,
        &format!(
            "N_eff {:.4} < {:.4} <= {:.4}, loss(1e-3) {:.4} <= loss(0) {:.4}, {secs:.1}s",
            r0.n_eff, r4.n_eff, r3.n_eff, r3.final_mean_val_loss, r0.final_mean_val_loss
        ),
    );
    assert!(pass);
}

#[test]
fn c05_efficiency_direction() {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&config_path("hetero6.json")).unwrap();
    let suite = Suite::build(&cfg).unwrap();
    let Suite::Lm(w) = &suite else {
        panic!("reference suite is not a language-model suite")
    };
    let hard: Vec<_> = w.datasets().iter().filter(|d| d.task_id.starts_with("hard")).collect();
    assert_eq!((w.datasets().len(), hard.len()), (6, 2));
    let hard_tokens: usize = hard.iter().map(|d| d.total_train_tokens).sum();
    let budget = suite.budget(cfg.budget_fractions[0]);
    let epochs = budget as f64 / hard_tokens as f64;
    assert!(
        (1.9..=2.1).contains(&epochs),
        "budget is {epochs:.2} epochs of the hard tasks"
    );

    let records: Vec<BudgetedRunRecord> = std::thread::scope(|s| {
        let handles: Vec<_> = Method::ALL
            .iter()
            .map(|&m| {
                let rc = cfg.run_config(m, budget, cfg.seeds[0], suite.name());
                let suite = &suite;
                s.spawn(move || suite.run(&rc).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let (rows, _) = summarize(&records).unwrap();
    let adapt = rows.iter().find(|r| r.method == Method::Adapt).unwrap();
    let ttm = adapt.tokens_to_match;
    let ratio = adapt.auc_ratio_vs_best_sft.unwrap();
    let pass = ttm.is_some_and(|t| t as f64 <= 0.6 * budget as f64) && ratio > 1.0 && secs < 600.0;
    report(
        5,
        "efficiency direction",
        pass,
        &format!(
            "B = {budget} ({epochs:.2} hard epochs), tokens_to_match {} ({}), AUC ratio {ratio:.3}, {secs:.1}s",
            ttm.map_or("not reached".into(), |t| format!("{t}")),
            ttm.map_or("-".into(), |t| format!("{:.1}% of B", 100.0 * t as f64 / budget as f64)),
        ),
    );
    assert!(pass);

    let curve =
        |m: Method| LossCurve::from_record(records.iter().find(|r| r.header.config.method == m).unwrap()).unwrap();
    let mid = mid_budget_loss(&curve(Method::Adapt), budget as f64).unwrap();
    for m in [Method::SftUniform, Method::SftProportional] {
        assert!(
            mid <= best_loss(&curve(m)),
            "mid-budget ADAPT loss {mid} above best {m} loss"
        );
    }
}

fn small_lm() -> LmWorkload {
    let suite = generate_suite(&SuiteConfig::heterogeneous(0)).unwrap();
    let model = TinyLmConfig {
        vocab_size: 40,
        embed_dim: 4,
        hidden_dim: 4,
        context_len: 16,
        seed: 0,
    };
    LmWorkload::new("hetero6", suite, model, 8).unwrap()
}

fn quadratic() -> QuadraticWorkload {
    let mut cfg = QuadraticSuiteConfig::heterogeneous(0);
    cfg.noise_scale = 0.05;
    QuadraticWorkload::from_config(&cfg).unwrap()
}

/// A spread of methods, subset sizes, adoption rules and batch shapes.
fn audit_runs() -> Vec<BudgetedRunRecord> {
    let lm = small_lm();
    let quad = quadratic();
    let mut configs = Vec::new();
    for m in Method::ALL {
        configs.push(RunConfig::new(m, 4000, "hetero6"));
    }
    let mut c = RunConfig::new(Method::Adapt, 3001, "hetero6");
    c.tasks_per_step = 3;
    c.seed = 5;
    configs.push(c);
    let mut c = RunConfig::new(Method::Adapt, 2500, "hetero6");
    c.adopt_probe = true;
    c.batch_size = Some(3);
    c.meta.probe_lr = 0.1;
    c.meta.meta_lr = 3.0;
    configs.push(c);
    let mut c = RunConfig::new(Method::SftProportional, 1234, "hetero6");
    c.batch_size = Some(5);
    c.accumulation_steps = Some(3);
    configs.push(c);
    let mut records: Vec<BudgetedRunRecord> = configs.iter().map(|c| run(&lm, c).unwrap()).collect();
    for m in Method::ALL {
        let mut c = RunConfig::new(m, 5000, "quad-hetero6");
        c.tasks_per_step = 4;
        records.push(run(&quad, &c).unwrap());
    }
    records
}

#[test]
fn c06_budget_accounting() {
    let records = audit_runs();
    let mut failures = Vec::new();
    for r in &records {
        let h = &r.header;
        let a = &h.audit;
        let budget = h.config.budget_tokens;
        let id = format!("{} B={budget}", h.run_id);
        if a.recount_train_tokens != h.total_tokens {
            failures.push(format!(
                "{id}: recount {} != counter {}",
                a.recount_train_tokens, h.total_tokens
            ));
        }
        if a.task_tokens.iter().sum::<usize>() != h.total_tokens {
            failures.push(format!("{id}: per-task tokens do not sum to the counter"));
        }
        if h.total_tokens < budget && !h.data_exhausted {
            failures.push(format!("{id}: stopped at {} before the budget", h.total_tokens));
        }
        let overshoot = h.total_tokens.saturating_sub(budget);
        if overshoot >= a.last_iteration_tokens.max(1) {
            failures.push(format!(
                "{id}: overshoot {overshoot} >= last iteration {}",
                a.last_iteration_tokens
            ));
        }
        if h.config.method == Method::Adapt && a.val_tokens == 0 {
            failures.push(format!("{id}: no validation tokens recorded"));
        }
    }

    // Validation work never touches the counter: dense evaluation logging
    // leaves tokens and parameters unchanged.
    let lm = small_lm();
    let mut sparse = RunConfig::new(Method::Adapt, 3000, "hetero6");
    sparse.log_interval_tokens = Some(3000);
    sparse.val_batch_size = Some(4);
    let mut dense = sparse.clone();
    dense.log_interval_tokens = Some(50);
    dense.val_batch_size = Some(1);
    let (rs, rd) = (run(&lm, &sparse).unwrap(), run(&lm, &dense).unwrap());
    let mut sparse_small_val = sparse.clone();
    sparse_small_val.val_batch_size = Some(1);
    let rv = run(&lm, &sparse_small_val).unwrap();
    if rd.header.total_tokens != rv.header.total_tokens || rd.header.params_digest != rv.header.params_digest {
        failures.push("dense logging changed training".into());
    }
    if rs.header.audit.val_tokens == rv.header.audit.val_tokens {
        failures.push("validation batch size did not change validation tokens".into());
    }
    if rs.header.total_tokens != rs.header.audit.recount_train_tokens {
        failures.push("validation tokens leaked into the counter".into());
    }

    let pass = failures.is_empty();
    report(
        6,
        "budget accounting",
        pass,
        &format!(
            "{} runs checked, {} problems {:?}",
            records.len() + 3,
            failures.len(),
            failures
        ),
    );
    assert!(pass);
}

#[test]
fn c07_mixture_invariants() {
    let records = audit_runs();
    let mut points = 0;
    let mut worst_sum = 0.0f64;
    let mut violations = Vec::new();
    for r in &records {
        let t = r.header.task_ids.len() as f64;
        for pt in &r.points {
            points += 1;
            let s: f64 = pt.p.iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            // recompute from p and also check the logged values
            for (ne, h) in [(n_eff(&pt.p), entropy(&pt.p)), (pt.n_eff, pt.entropy)] {
                if !(ne >= 1.0 && ne <= t * (1.0 + 1e-12)) {
                    violations.push(format!("{}: N_eff {ne} outside [1, {t}]", r.header.run_id));
                }
                if !(h >= 0.0 && h <= t.ln() + 1e-12) {
                    violations.push(format!("{}: H {h} outside [0, ln {t}]", r.header.run_id));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let w: Vec<f64> = (0..n).map(|_| 5.0 * normal(&mut rng)).collect();
        let c: f64 = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = w.iter().map(|x| x + c).collect();
        let (a, b) = (softmax_mixture(&w), softmax_mixture(&shifted));
        worst_shift = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst_shift, f64::max);
    }
    let pass = worst_sum <= 1e-12 && violations.is_empty() && worst_shift <= 1e-12;
    report(
        7,
        "mixture invariants",
        pass,
        &format!(
            "{points} logged mixtures, max |sum p - 1| {worst_sum:.1e}, {} bound violations, max shift diff {worst_shift:.1e} over 1000 logits",
            violations.len()
        ),
    );
    assert!(pass, "{violations:?}");
}

#[test]
fn c08_baseline_fidelity() {
    let lm = small_lm();
    let budget = 300_000;
    let long = |method: Method| {
        let mut c = RunConfig::new(method, budget, "hetero6");
        c.batch_size = Some(1);
        c.accumulation_steps = Some(1);
        c.seed = 11;
        c.log_interval_tokens = Some(budget);
        run(&lm, &c).unwrap()
    };
    let (rp, ru) = std::thread::scope(|s| {
        let p = s.spawn(|| long(Method::SftProportional));
        let u = s.spawn(|| long(Method::SftUniform));
        (p.join().unwrap(), u.join().unwrap())
    });

    let q = static_weights(lm.datasets(), StaticMode::Proportional);
    let total = rp.header.total_tokens as f64;
    let shares: Vec<f64> = rp.header.audit.task_tokens.iter().map(|&x| x as f64 / total).collect();
    let worst_rel = shares
        .iter()
        .zip(&q)
        .map(|(s, q)| (s - q).abs() / q)
        .fold(0.0, f64::max);

    let counts = &ru.header.audit.task_batches;
    let n: usize = counts.iter().sum();
    let pu = 1.0 / counts.len() as f64;
    let sigma = (n as f64 * pu * (1.0 - pu)).sqrt();
    let worst_z = counts
        .iter()
        .map(|&c| (c as f64 - n as f64 * pu).abs() / sigma)
        .fold(0.0, f64::max);

    let pass = worst_rel <= 0.10 && worst_z <= 3.0;
    report(
        8,
        "baseline fidelity",
        pass,
        &format!(
            "SFT-P {} draws, max relative share error {:.2}%; SFT-U {n} draws, max |z| {worst_z:.2}",
            rp.header.audit.task_batches.iter().sum::<usize>(),
            100.0 * worst_rel
        ),
    );
    assert!(pass, "shares {shares:?} vs {q:?}, counts {counts:?}");
}

fn strip_wall_clock(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut header: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    header
        .as_object_mut()
        .unwrap()
        .remove("wall_clock_seconds")
        .expect("header has a wall-clock field");
    lines[0] = header.to_string();
    lines
}

#[test]
fn c09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config_path("hetero6.json")).unwrap()).unwrap();
    cfg["budget_fractions"] = serde_json::json!([0.02, 0.05]);
    cfg["seeds"] = serde_json::json!([0, 3]);
    let lm_cfg = dir.path().join("lm.json");
    std::fs::write(&lm_cfg, cfg.to_string()).unwrap();

    let mut files = 0;
    let mut mismatches = Vec::new();
    for config in [lm_cfg, config_path("quadratic.json")] {
        let outs: Vec<_> = [1, 4]
            .iter()
            .map(|&workers| {
                let out = dir
                    .path()
                    .join(format!("{}-{workers}", config.file_stem().unwrap().to_string_lossy()));
                let opts = GlobalOptions {
                    workers: Some(workers),
                    out: Some(out),
                    ..GlobalOptions::default()
                };
                cmd_run(&config, &opts).unwrap()
            })
            .collect();
        assert_eq!(outs[0].records.len(), outs[1].records.len());
        for (a, b) in outs[0].records.iter().zip(&outs[1].records) {
            files += 1;
            if strip_wall_clock(a) != strip_wall_clock(b) {
                mismatches.push(a.display().to_string());
            }
        }
        if std::fs::read(&outs[0].summary).unwrap() != std::fs::read(&outs[1].summary).unwrap() {
            mismatches.push(outs[0].summary.display().to_string());
        }
    }
    let pass = files > 0 && mismatches.is_empty();
    report(
        9,
        "determinism",
        pass,
        &format!(
            "{files} record pairs (1 vs 4 workers), {} mismatches {mismatches:?}",
            mismatches.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c10_metric_oracles() {
    let c = |pts: &[(f64, f64)]| LossCurve::new(pts.to_vec()).unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();
    checks.push(("auc constant", auc(&c(&[(10.0, 1.0), (70.0, 1.0)])) == 1.0));
    checks.push(("auc linear", (auc(&c(&[(0.0, 2.0), (100.0, 0.0)])) - 1.0).abs() < 1e-15));
    checks.push((
        "auc piecewise",
        (auc(&c(&[(0.0, 2.0), (50.0, 1.0), (100.0, 1.0)])) - 1.25).abs() < 1e-15,
    ));
    let flat1 = c(&[(0.0, 1.0), (10.0, 1.0)]);
    let flat2 = c(&[(0.0, 2.0), (10.0, 2.0)]);
    checks.push(("auc_ratio identical", auc_ratio(&flat1, &flat1).unwrap() == 1.0));
    checks.push(("auc_ratio 2/1", auc_ratio(&flat2, &flat1).unwrap() == 2.0));
    let curve = c(&[(10.0, 2.0), (20.0, 1.5), (30.0, 1.0)]);
    checks.push(("tokens_to_match start", tokens_to_match(&curve, 5.0) == Some(10.0)));
    checks.push(("tokens_to_match unreached", tokens_to_match(&curve, 0.5).is_none()));
    checks.push(("tokens_to_match scan", tokens_to_match(&curve, 1.2) == Some(30.0)));
    checks.push(("best_loss monotone", best_loss(&curve) == 1.0));
    checks.push(("best_loss constant", best_loss(&flat2) == 2.0));
    checks.push((
        "best_loss dip",
        best_loss(&c(&[(0.0, 3.0), (1.0, 1.0), (2.0, 2.0)])) == 1.0,
    ));
    let mid = c(&[(0.0, 3.0), (50.0, 2.0), (100.0, 1.0)]);
    checks.push(("mid_budget explicit", mid_budget_loss(&mid, 100.0).unwrap() == 2.0));
    let straddle = c(&[(0.0, 3.0), (40.0, 2.5), (60.0, 2.0), (100.0, 1.0)]);
    checks.push(("mid_budget straddle", mid_budget_loss(&straddle, 100.0).unwrap() == 2.5));
    checks.push((
        "mid_budget too short",
        mid_budget_loss(&c(&[(0.0, 1.0), (40.0, 1.0)]), 100.0).is_err(),
    ));

    let benchmarks: Vec<String> = (0..11).map(|i| format!("bench{i}")).collect();
    let aft: Vec<f64> = (0..11).map(|i| 20.0 + i as f64).collect();
    // SFT-U ahead on two benchmarks, tied on one
    let mut sft = aft.iter().map(|x| x - 0.5).collect::<Vec<_>>();
    sft[2] = aft[2] + 1.0;
    sft[7] = aft[7] + 0.25;
    sft[4] = aft[4];
    let table = ScoreTable::new(vec!["aft".into(), "sft_u".into()], benchmarks, vec![aft, sft]).unwrap();
    let wr = win_rate(&table, "aft", "sft_u").unwrap();
    checks.push((
        "win_rate 9/11",
        (wr - 9.0 / 11.0).abs() < 1e-15 && (wr - 0.818).abs() < 5e-4,
    ));
    checks.push(("win_rate self", win_rate(&table, "aft", "aft").unwrap() == 1.0));
    let lose = ScoreTable::new(
        vec!["a".into(), "b".into()],
        vec!["x".into(), "y".into()],
        vec![vec![0.0, 1.0], vec![1.0, 2.0]],
    )
    .unwrap();
    checks.push(("win_rate none", win_rate(&lose, "a", "b").unwrap() == 0.0));
    checks.push(("win_rate unknown", win_rate(&table, "aft", "sft_p").is_err()));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty();
    report(
        10,
        "metrics oracles",
        pass,
        &format!("{} fixture checks, win rate {wr:.3}, failed {failed:?}", checks.len()),
    );
    assert!(pass);
}
