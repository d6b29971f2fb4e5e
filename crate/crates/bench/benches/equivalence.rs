use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use patchprobe_core::verify::parse::{parse_strict, VarContext};
use patchprobe_core::verify::{check_expressions, Backend, EquivConfig};
use std::hint::black_box;

const PAIRS: [(&str, &str, &str); 3] = [
    ("motivating", "x1 == 0x303", "!(x1 ^ 771)"),
    ("two_vars", "x1 < x2", "x2 > x1"),
    ("arith", "(x1 << 3) + x2 == 40", "x1 * 8 + x2 == 40"),
];

fn equiv(c: &mut Criterion) {
    let mut g = c.benchmark_group("equivalence");
    for (name, l, r) in PAIRS {
        let mut lc = VarContext::canonical();
        let mut rc = VarContext::canonical();
        let le = parse_strict(l, &mut lc).unwrap();
        let re = parse_strict(r, &mut rc).unwrap();
        for width in [8u32, 32] {
            let cfg = EquivConfig { width, timeout: Duration::from_secs(10), backend: Backend::Builtin };
            g.bench_with_input(BenchmarkId::new(name, width), &cfg, |b, cfg| {
                b.iter(|| black_box(check_expressions(&le, &lc.origin, &re, &rc.origin, cfg)))
            });
        }
        let cfg = EquivConfig { width: 8, timeout: Duration::from_secs(10), backend: Backend::Exhaustive { max_bits: 24 } };
        g.bench_with_input(BenchmarkId::new(format!("{name}_exhaustive"), 8), &cfg, |b, cfg| {
            b.iter(|| black_box(check_expressions(&le, &lc.origin, &re, &rc.origin, cfg)))
        });
    }
    g.finish();
}

criterion_group!(benches, equiv);
criterion_main!(benches);
