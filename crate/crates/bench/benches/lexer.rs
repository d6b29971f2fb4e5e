use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use patchprobe_bench::lexer_lines;
use patchprobe_core::lex_line;
use std::hint::black_box;

fn lex(c: &mut Criterion) {
    let lines = lexer_lines();
    let bytes: usize = lines.iter().map(String::len).sum();
    let mut g = c.benchmark_group("lexer");
    g.throughput(Throughput::Bytes(bytes as u64));
    g.bench_function("lex_200_lines", |b| {
        b.iter(|| {
            for l in &lines {
                black_box(lex_line(black_box(l)));
            }
        })
    });
    g.finish();
}

criterion_group!(benches, lex);
criterion_main!(benches);
