//! Benchmark harness CLI: synthesizes or replays an allocation trace
//! against a chosen strategy and reports latency and fragmentation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use devheap::bench::{
    build_allocator, emit_csv, replay, LatencyStats, RunReport, Strategy, StrategyOptions,
};
use devheap::trace::{parse_trace, synth_trace, write_trace, SynthParams, TraceEvent};
use devheap::HeapConfig;

#[derive(Parser)]
#[command(name = "devheap-bench", version, about = "Allocation trace benchmark")]
struct Args {
    /// Allocation strategy: best-fit, first-fit, next-fit, bitmask,
    /// seg-fit, tlsf, or oracle (naive best-fit reference).
    #[arg(long, default_value = "seg-fit", value_parser = parse_strategy)]
    strategy: Strategy,

    /// Managed device heap size in bytes; k/m/g suffixes accepted.
    #[arg(long, default_value = "8g", value_parser = parse_bytes)]
    heap_size: u64,

    /// Minimum allocation granule in bytes (power of two).
    #[arg(long, default_value = "8", value_parser = parse_bytes)]
    granule: u64,

    /// Trace synthesis seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Trace synthesis steps.
    #[arg(long, default_value_t = 5000)]
    ops: usize,

    /// Number of slot identities the synthesized trace cycles through.
    #[arg(long, default_value_t = 1000)]
    slots: u32,

    /// Smallest synthesized request.
    #[arg(long, default_value = "1k", value_parser = parse_bytes)]
    min_size: u64,

    /// Largest synthesized request.
    #[arg(long, default_value = "16m", value_parser = parse_bytes)]
    max_size: u64,

    /// Replay this trace file instead of synthesizing one.
    #[arg(long)]
    trace_in: Option<PathBuf>,

    /// Write the trace that was run to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,

    /// Write the per-operation report to this CSV file.
    #[arg(long)]
    csv_out: Option<PathBuf>,

    /// Chunk capacity of the hybrid array lists (sequential fits).
    #[arg(long, default_value_t = 64)]
    chunk_cap: usize,

    /// Second-level subdivision of tlsf (power of two, 2..=64).
    #[arg(long, default_value_t = 16)]
    sli: u32,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

/// Parses "4096", "64k", "16m", "8g".
fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim().to_ascii_lowercase();
    let (digits, shift) = match s.strip_suffix(['k', 'm', 'g']) {
        Some(d) => (
            d,
            match s.bytes().last().unwrap() {
                b'k' => 10,
                b'm' => 20,
                _ => 30,
            },
        ),
        None => (s.as_str(), 0),
    };
    let n: u64 = digits.trim().parse().map_err(|e| format!("{e}"))?;
    n.checked_shl(shift).ok_or_else(|| "value too large".to_string())
}

fn human_bytes(n: u64) -> String {
    match n {
        0..=1023 => format!("{n} B"),
        _ if n < 1 << 20 => format!("{:.1} KiB", n as f64 / 1024.0),
        _ if n < 1 << 30 => format!("{:.1} MiB", n as f64 / (1 << 20) as f64),
        _ => format!("{:.2} GiB", n as f64 / (1 << 30) as f64),
    }
}

fn human_ns(n: u64) -> String {
    match n {
        0..=999 => format!("{n}ns"),
        _ if n < 1_000_000 => format!("{:.1}us", n as f64 / 1e3),
        _ if n < 1_000_000_000 => format!("{:.2}ms", n as f64 / 1e6),
        _ => format!("{:.2}s", n as f64 / 1e9),
    }
}

fn print_latency(label: &str, stats: &Option<LatencyStats>) {
    if let Some(s) = stats {
        println!(
            "{label:<6} latency    p50 {:>8}   p99 {:>8}   max {:>8}   ({} ops)",
            human_ns(s.p50_ns),
            human_ns(s.p99_ns),
            human_ns(s.max_ns),
            s.count
        );
    }
}

fn write_csv_file(report: &RunReport, path: &PathBuf) -> Result<(), String> {
    let file =
        File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    emit_csv(report, &mut w)
        .and_then(|()| w.flush())
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run(args: &Args) -> Result<(), (String, u8)> {
    let config = HeapConfig {
        heap_size: args.heap_size,
        min_granule: args.granule,
        alignment: args.granule,
    };
    let usage = |m: String| (m, 2u8);

    let events: Vec<TraceEvent> = match &args.trace_in {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
            parse_trace(BufReader::new(file))
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => synth_trace(&SynthParams {
            seed: args.seed,
            steps: args.ops,
            slots: args.slots,
            min_size: args.min_size,
            max_size: args.max_size,
            granule: args.granule,
        }),
    };

    if let Some(path) = &args.trace_out {
        let file = File::create(path)
            .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        write_trace(&events, &mut w)
            .and_then(|()| w.flush())
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }

    let opts = StrategyOptions { chunk_cap: args.chunk_cap, sli: args.sli };
    let mut alloc = build_allocator(args.strategy, config, opts)
        .map_err(|e| usage(format!("bad configuration: {e}")))?;

    let report = match replay(&events, alloc.as_mut()) {
        Ok(report) => report,
        Err(err) => {
            if let Some(path) = &args.csv_out {
                write_csv_file(&err.partial, path).map_err(usage)?;
            }
            return Err((format!("allocator error at {err}"), 1));
        }
    };

    let summary = report.summary();
    let stats = alloc.stats();
    println!("strategy          {}", args.strategy);
    println!("events            {}", report.per_op.len());
    println!(
        "heap              {} (granule {})",
        human_bytes(args.heap_size),
        args.granule
    );
    println!(
        "final live        {}   reserved {}",
        human_bytes(stats.live_bytes),
        human_bytes(stats.reserved_bytes)
    );
    println!("host metadata     {}", human_bytes(stats.host_metadata_bytes));
    println!(
        "fragmentation     {:.3} (steady state)",
        summary.steady_state_fragmentation
    );
    print_latency("alloc", &summary.alloc);
    print_latency("free", &summary.free);
    print_latency("pfree", &summary.pfree);

    if let Some(path) = &args.csv_out {
        write_csv_file(&report, path).map_err(usage)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((message, code)) => {
            eprintln!("devheap-bench: {message}");
            ExitCode::from(code)
        }
    }
}
