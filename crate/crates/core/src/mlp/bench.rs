//! Throughput measurement of the two execution paths.

use std::io::Write;
use std::time::{Duration, Instant};

use super::DeformationNetwork;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub path: String,
    pub batch: usize,
    pub evals_per_sec: f64,
}

fn time<F: FnMut()>(min: Duration, mut f: F) -> f64 {
    f();
    let start = Instant::now();
    let mut reps = 0u32;
    while reps == 0 || start.elapsed() < min {
        f();
        reps += 1;
    }
    start.elapsed().as_secs_f64() / reps as f64
}

/// Forward and forward+backward throughput of both paths at each batch size.
pub fn bench<T: Real>(
    net: &DeformationNetwork<T>,
    batch_sizes: &[usize],
    min_time: Duration,
) -> Vec<BenchRow> {
    let iw = net.input_width();
    let ow = net.output_width();
    let packed = net.pack();
    let mut rows = Vec::new();
    for &b in batch_sizes {
        let x: Vec<T> = (0..b * iw)
            .map(|i| T::lit(((i * 37 % 101) as f64) / 50.0 - 1.0))
            .collect();
        let dy: Vec<T> = vec![T::lit(1e-2); b * ow];
        let mut row = |path: &str, secs: f64| {
            rows.push(BenchRow {
                path: path.into(),
                batch: b,
                evals_per_sec: b as f64 / secs,
            })
        };
        row(
            "reference",
            time(min_time, || {
                drop(std::hint::black_box(net.forward_reference(&x)))
            }),
        );
        row(
            "fused",
            time(min_time, || drop(std::hint::black_box(packed.forward(&x)))),
        );
        row(
            "reference_train",
            time(min_time, || {
                drop(std::hint::black_box(net.backward_reference(&x, &dy)))
            }),
        );
        row(
            "fused_train",
            time(min_time, || {
                let (_, acts) = packed.forward_train(&x);
                drop(std::hint::black_box(packed.backward(&x, &acts, &dy)));
            }),
        );
    }
    rows
}

pub fn write_bench_csv(rows: &[BenchRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "path,batch,evals_per_sec")?;
    for r in rows {
        writeln!(w, "{},{},{:.1}", r.path, r.batch, r.evals_per_sec)?;
    }
    Ok(())
}
