use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use magnet_lab::config::ExperimentConfig;
use magnet_lab::eval::PplMode;
use magnet_lab::experiments::{self as exp, Dataset};
use magnet_lab::objectives::{combined_loss, LossConfig, ObjectiveSpec};
use magnet_lab::par::Execution;
use magnet_lab::views::make_view_seeded;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batch(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let data = Dataset::prepare(&cfg.corpus).unwrap();
    let state = exp::init_model(&cfg, &data, 0).unwrap();
    let views: Vec<_> = data
        .lm
        .iter()
        .filter(|x| x.len() <= cfg.run.max_seq_len)
        .take(cfg.run.batch_size)
        .enumerate()
        .map(|(i, x)| make_view_seeded(x, &cfg.run.views, &data.instruction, data.vocab.len(), 0, i as u64).unwrap())
        .collect();

    let mut g = c.benchmark_group("combined_loss");
    g.sample_size(10);
    for (late, it) in [("msg_mntp", 0), ("with_sscl", 5000)] {
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(late, name), &exec, |b, &exec| {
                b.iter(|| combined_loss(&state, &views, &LossConfig::default(), it, ObjectiveSpec::default(), exec, true).unwrap())
            });
        }
    }
    g.finish();

    let mut eval = cfg.eval.clone();
    eval.infill_examples = 32;
    let mut g = c.benchmark_group("span_ppl");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| exp::infill_ppl(&state, &data, &eval, PplMode::Magnet, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
