//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    max_dueling_gap, max_gradient_error, primal, projected_gradient_svm, rng, separable_2d,
};
use dapolicy::dqn::{epsilon_at, Agent, AgentConfig};
use dapolicy::env::{EnvConfig, Environment};
use dapolicy::harness::{
    prepare, run_pipeline, sub_rng, sub_seed, ExperimentConfig, Summary, TRACE_HEADER,
};
use dapolicy::linsvm::{train_binary_with_report, SvmParams};
use dapolicy::partition::weighted_sample_without_replacement;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let worst = max_gradient_error(100, 11);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.3e} (< 1e-4), {secs:.2}s (< 30s)"),
    )
}

fn dueling_identity() -> Outcome {
    let worst = max_dueling_gap(1000, 12);
    outcome(
        worst < 1e-12,
        format!("max |mean(pre_q) - V| = {worst:.3e} (< 1e-12)"),
    )
}

fn svm_oracle() -> Outcome {
    let (xs, ys) = separable_2d(50, 13);
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let params = SvmParams {
        tol: 1e-10,
        max_epochs: 100_000,
        ..SvmParams::default()
    };
    let (model, report) = train_binary_with_report(&rows, &ys, &params).unwrap();
    let ours = primal(&model.weights, model.bias, &xs, &ys, params.c);
    let (w, b) = projected_gradient_svm(&xs, &ys, params.c, 200_000);
    let reference = primal(&w, b, &xs, &ys, params.c);
    let rel = (ours - reference).abs() / reference.abs();
    let monotone = report
        .dual_objective
        .windows(2)
        .all(|p| p[1] >= p[0] - 1e-12);
    outcome(
        rel < 1e-6 && monotone,
        format!(
            "relative primal gap {rel:.3e} (< 1e-6), dual monotone over {} epochs: {monotone}",
            report.dual_objective.len()
        ),
    )
}

fn telescoping() -> Outcome {
    let cfg = ExperimentConfig::default();
    let prep = prepare(&cfg).unwrap();
    let mut r = rng(14);
    let mut env = Environment::new(&prep.task, cfg.env, &mut r).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        env.reset(&mut r).unwrap();
        let start = env.state().last_accuracy;
        let mut total = 0.0;
        while !env.state().done {
            let action = r.random_range(0..env.n_actions());
            total += env.step(action, &mut r).unwrap().reward;
        }
        worst = worst.max((total - (env.state().last_accuracy - start)).abs());
    }
    outcome(
        worst < 1e-12,
        format!("20 episodes, max |sum r - (end - start)| = {worst:.3e}"),
    )
}

fn structural_constants() -> Outcome {
    let env = EnvConfig::default();
    let (dim, actions) = (env.state_dim(31), env.n_actions());
    let agent_cfg = AgentConfig::default();
    let (e0, e2000) = (epsilon_at(&agent_cfg, 0), epsilon_at(&agent_cfg, 2000));

    let cfg = ExperimentConfig::default();
    let prep = prepare(&cfg).unwrap();
    let mut env_rng = sub_rng(cfg.seed, "env");
    let mut agent_rng = sub_rng(cfg.seed, "agent");
    let mut environment = Environment::new(&prep.task, cfg.env, &mut env_rng).unwrap();
    let mut agent = Agent::new(
        environment.state_dim(),
        environment.n_actions(),
        cfg.agent.clone(),
        sub_seed(cfg.seed, "agent-init"),
    )
    .unwrap();
    let mut synced = agent.online == agent.target;
    for i in 1..=100u64 {
        let a = agent
            .act(&environment.state().vector, 1.0, &mut agent_rng)
            .unwrap();
        let t = environment.step(a, &mut env_rng).unwrap();
        if t.done {
            environment.reset(&mut env_rng).unwrap();
        }
        agent.observe(t, &mut agent_rng).unwrap();
        if i % 10 == 0 {
            synced &= agent.online == agent.target;
        }
    }
    outcome(
        dim == 930 && actions == 21 && e0 == 1.0 && e2000 == 0.0 && synced,
        format!(
            "n=31 state {dim}, actions {actions}, eps(0) {e0}, eps(2000) {e2000}, target == online at every 10th update: {synced}"
        ),
    )
}

fn partition_statistics() -> Outcome {
    let trials = 100_000;
    let mut r = rng(15);
    let mut hits = 0usize;
    for _ in 0..trials {
        hits += usize::from(
            weighted_sample_without_replacement(&[1.0, 2.0], 1, &mut r).unwrap()[0] == 1,
        );
    }
    let single = hits as f64 / trials as f64;
    // Sequential two-draw inclusion of index 0 with weights (1, 2, 3):
    // 1/6 + (2/6)(1/4) + (3/6)(1/3) = 5/12.
    let mut hits = 0usize;
    for _ in 0..trials {
        hits += usize::from(
            weighted_sample_without_replacement(&[1.0, 2.0, 3.0], 2, &mut r)
                .unwrap()
                .contains(&0),
        );
    }
    let pair = hits as f64 / trials as f64;
    let freq_ok = (single - 2.0 / 3.0).abs() < 0.01 && (pair - 5.0 / 12.0).abs() < 0.01;

    let mut disjoint = true;
    for seed in 0..100 {
        let cfg = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        let prep = prepare(&cfg).unwrap();
        let part = &prep.task.partition;
        let reward: HashSet<usize> = part.reward_ids().collect();
        let pos: HashSet<usize> = part.initial_positive_ids().collect();
        let mut env_rng = sub_rng(seed, "env");
        let env = Environment::new(&prep.task, cfg.env, &mut env_rng).unwrap();
        let pool: HashSet<usize> = env.pool().into_iter().collect();
        disjoint &= reward.len() == part.reward.len()
            && pos.len() == part.initial_positive.len()
            && reward.is_disjoint(&pos)
            && reward.is_disjoint(&pool)
            && pos.is_disjoint(&pool)
            && env.state().cand_ids.iter().all(|id| pool.contains(id));
    }
    outcome(
        freq_ok && disjoint,
        format!(
            "P(pick 2 of (1,2)) = {single:.4} vs 0.6667; P(0 in 2 of (1,2,3)) = {pair:.4} vs 0.4167; disjoint over 100 seeds: {disjoint}"
        ),
    )
}

fn end_to_end(dir: &std::path::Path) -> (Outcome, Vec<(Summary, Duration)>) {
    let mut runs = Vec::new();
    for seed in 0..5 {
        let cfg = ExperimentConfig {
            seed,
            out_dir: Some(dir.join(format!("seed_{seed}"))),
            ..ExperimentConfig::default()
        };
        let start = Instant::now();
        let m = run_pipeline(&cfg).unwrap();
        let took = start.elapsed();
        println!(
            "  seed {seed}: learned {:.4} source_only {:.4} random_policy {:.4} all_noisy {:.4} ({:.1}s)",
            m.summary.learned_policy,
            m.summary.baselines.source_only,
            m.summary.baselines.random_policy,
            m.summary.baselines.all_noisy,
            took.as_secs_f64()
        );
        runs.push((m.summary, took));
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&Summary) -> f64| runs.iter().map(|(s, _)| f(s)).sum::<f64>() / n;
    let learned = mean(|s| s.learned_policy);
    let source = mean(|s| s.baselines.source_only);
    let random = mean(|s| s.baselines.random_policy);
    let slowest = runs
        .iter()
        .map(|(_, d)| d.as_secs_f64())
        .fold(0.0, f64::max);
    let pass = learned > source && learned > random && slowest < 600.0;
    (
        outcome(
            pass,
            format!(
                "mean learned {learned:.4} vs source_only {source:.4} ({:+.4}) and random_policy {random:.4} ({:+.4}); slowest seed {slowest:.1}s (< 600s)",
                learned - source,
                learned - random
            ),
        ),
        runs,
    )
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let first = std::fs::read(dir.join("seed_0/trace.csv")).unwrap();
    let cfg = ExperimentConfig {
        seed: 0,
        out_dir: Some(dir.join("seed_0_again")),
        ..ExperimentConfig::default()
    };
    run_pipeline(&cfg).unwrap();
    let second = std::fs::read(dir.join("seed_0_again/trace.csv")).unwrap();
    let header_ok = first.starts_with(TRACE_HEADER.as_bytes());
    outcome(
        first == second && header_ok,
        format!(
            "trace.csv {} bytes, byte-identical: {}",
            first.len(),
            first == second
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient check", gradient_check()),
        (2, "dueling identity", dueling_identity()),
        (3, "SVM reference solver", svm_oracle()),
        (4, "telescoping reward", telescoping()),
        (5, "structural constants", structural_constants()),
    ];
    println!("criterion 6 per-seed results:");
    let (e2e, _) = end_to_end(dir.path());
    results.push((6, "end-to-end adaptation", e2e));
    results.push((7, "partition statistics", partition_statistics()));
    results.push((8, "determinism", determinism(dir.path())));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "criterion {id} ({name}): {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
