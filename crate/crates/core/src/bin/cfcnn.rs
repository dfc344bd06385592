use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use cfcnn::alloc::{plan, ArchitecturePlan, PlanOptions, PointwiseSizing};
use cfcnn::cost::{fully_parallel_reference_cost, network_cost, sweep_rates, CostScope, SweepGeometry};
use cfcnn::netspec::{parse_network_file, NetworkSpec};
use cfcnn::oracle::{gen_input, gen_values, gen_weights, read_fixture, ref_network, write_fixture, NetworkWeights, Tensor3};
use cfcnn::report::{self, Format, Table};
use cfcnn::sim::trace::{trace_fcu, trace_fcu_serial, trace_kpu, KpuTraceSetup};
use cfcnn::sim::{simulate_network, CycleTrace, SimOptions};
use cfcnn::{Error, Rate};

#[derive(Parser)]
#[command(name = "cfcnn", version, about = "Plan, cost and simulate continuous-flow CNN architectures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => Format::Text,
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    /// Bias, interleavers and FIFOs included.
    Full,
    /// Layer units only.
    Units,
    /// One KPU per kernel and one FCU per neuron.
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pointwise {
    RateMatched,
    SharedNeurons,
}

#[derive(clap::Args)]
struct Common {
    /// Network description (JSON).
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Minimum neurons per FCU (adder pipeline depth).
    #[arg(long, default_value_t = 1)]
    min_h: u64,
    /// FCU sizing for pointwise layers.
    #[arg(long, value_enum, default_value = "rate-matched")]
    pointwise: Pointwise,
}

impl Common {
    fn options(&self) -> PlanOptions {
        PlanOptions {
            min_h: self.min_h,
            pointwise: match self.pointwise {
                Pointwise::RateMatched => PointwiseSizing::RateMatched,
                Pointwise::SharedNeurons => PointwiseSizing::SharedNeurons,
            },
        }
    }

    fn load(&self) -> cfcnn::Result<(NetworkSpec, ArchitecturePlan)> {
        let spec = parse_network_file(&self.spec)?;
        let p = plan(&spec, &self.options())?;
        Ok((spec, p))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer rates, configurations and stall warnings.
    Analyze(Common),
    /// Unit allocation per layer.
    Plan(Common),
    /// Resource cost per layer.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "full")]
        scope: Scope,
    },
    /// Cost of one layer over a list of input rates.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rates, e.g. `8,4,1,1/2`.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<Rate>,
        /// Layer to sweep; defaults to the first convolution.
        #[arg(long)]
        layer: Option<String>,
    },
    /// Run the cycle-accurate simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Weights (JSON); generated from the seed when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Input tensor fixture; generated from the seed when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input maps streamed back to back (generated ones use seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        maps: u64,
        /// Signals to record, e.g. `y`, `C1.x`, `*`.
        #[arg(long, value_delimiter = ',')]
        trace: Vec<String>,
        /// Write the first output map as a fixture.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the simulator against the reference inference over seeded trials.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        trials: u64,
        /// Fixed weights for every trial instead of per-trial ones.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Cycle-by-cycle trace of a single unit.
    Trace {
        #[command(subcommand)]
        unit: TraceUnit,
    },
}

#[derive(Subcommand)]
enum TraceUnit {
    /// One KPU fed `x_n = n`.
    Kpu {
        #[arg(long)]
        f: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        maps: usize,
        /// Weight seed; all-ones weights when absent.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// One FCU with batches of `j` inputs presented at `--loads`.
    Fcu {
        #[arg(long)]
        j: usize,
        #[arg(long)]
        h: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        loads: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// One FCU behind a `j`-wide aggregator, one input per cycle.
    Aggregator {
        #[arg(long)]
        j: usize,
        #[arg(long)]
        h: usize,
        #[arg(long)]
        inputs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
}

enum Failure {
    Input(Error),
    Mismatch(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Deadlock(_) | Error::WidthOverflow { .. } => Failure::Mismatch(e.to_string()),
            e => Failure::Input(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Analyze(c) => {
            let (spec, p) = c.load()?;
            let (t, rep) = report::analyze(&spec, &p);
            out(&report::render(c.format.into(), &t, &rep));
        }
        Command::Plan(c) => {
            let (_, p) = c.load()?;
            let t = report::plan_table(&p);
            match Format::from(c.format) {
                Format::Json => out(&(p.to_json() + "\n")),
                f => out(&report::render(f, &t, &())),
            }
        }
        Command::Cost { common, scope } => {
            let (spec, p) = common.load()?;
            let rep = match scope {
                Scope::Full => network_cost(&p, &CostScope::full()),
                Scope::Units => network_cost(&p, &CostScope::layer_only()),
                Scope::Parallel => fully_parallel_reference_cost(&spec)?,
            };
            out(&report::render(common.format.into(), &report::cost_table(&rep), &rep));
        }
        Command::Sweep { common, rates, layer } => {
            let spec = parse_network_file(&common.spec)?;
            let g = SweepGeometry::from_spec(&spec, layer.as_deref())?;
            let rows = sweep_rates(&g, &rates)?;
            let t = report::sweep_table(&rows, g.separable);
            out(&report::render(common.format.into(), &t, &rows));
        }
        Command::Simulate {
            common,
            weights,
            input,
            seed,
            maps,
            trace,
            output,
        } => {
            let (spec, p) = common.load()?;
            let w = match &weights {
                Some(path) => load_weights(&spec, path)?,
                None => gen_weights(&spec, seed),
            };
            let xs: Vec<Tensor3> = match &input {
                Some(path) => vec![read_fixture(&std::fs::read(path).map_err(Error::from)?)?; maps.max(1) as usize],
                None => (0..maps.max(1)).map(|m| gen_input(&spec, seed + m)).collect(),
            };
            let r = simulate_network(&p, &w, &xs, &SimOptions::new().with_trace(trace))?;
            if let Some(path) = output {
                std::fs::write(path, write_fixture(&r.outputs[0])?).map_err(Error::from)?;
            }
            print_simulation(common.format.into(), &r)?;
        }
        Command::Compare {
            common,
            seed,
            trials,
            weights,
        } => {
            let (spec, p) = common.load()?;
            let fixed = weights.as_deref().map(|path| load_weights(&spec, path)).transpose()?;
            let results: Vec<TrialResult> = (0..trials)
                .into_par_iter()
                .map(|i| run_trial(&spec, &p, fixed.as_ref(), seed + i))
                .collect();
            let failed = results.iter().filter(|r| !r.pass).count();
            match Format::from(common.format) {
                Format::Json => out(&(serde_json::to_string_pretty(&results).map_err(Error::from)? + "\n")),
                f => {
                    let mut t = Table::new(["trial", "seed", "result", "cycles", "detail"]);
                    for (i, r) in results.iter().enumerate() {
                        t.row([
                            i.to_string(),
                            r.seed.to_string(),
                            if r.pass { "pass" } else { "FAIL" }.to_string(),
                            r.cycles.map_or("-".into(), |c| c.to_string()),
                            r.detail.clone(),
                        ]);
                    }
                    t.notes.push(format!("{}/{} trials passed", results.len() - failed, results.len()));
                    out(&report::render(f, &t, &()));
                }
            }
            if failed > 0 {
                return Err(Failure::Mismatch(format!("{failed} of {trials} trials differ from the reference")));
            }
        }
        Command::Trace { unit } => {
            let (trace, format) = match unit {
                TraceUnit::Kpu {
                    f,
                    k,
                    p,
                    maps,
                    seed,
                    format,
                } => {
                    let setup = KpuTraceSetup {
                        f,
                        k,
                        p,
                        weights: seed.map_or(vec![1; k * k], |s| gen_values(k * k, s, 8, true)),
                        maps: (0..maps).map(|m| (0..f * f).map(|n| (m * f * f + n) as i64).collect()).collect(),
                    };
                    (trace_kpu(&setup)?, format)
                }
                TraceUnit::Fcu {
                    j,
                    h,
                    loads,
                    seed,
                    format,
                } => {
                    let n = j * loads.len();
                    let x: Vec<i64> = (0..n as i64).collect();
                    (trace_fcu(j, h, &x, fcu_weights(n * h, seed), &loads)?, format)
                }
                TraceUnit::Aggregator {
                    j,
                    h,
                    inputs,
                    seed,
                    format,
                } => {
                    let x: Vec<i64> = (0..inputs as i64).collect();
                    (trace_fcu_serial(j, h, &x, fcu_weights(inputs * h, seed))?, format)
                }
            };
            out(&render_trace(format.into(), &trace));
        }
    }
    Ok(())
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn out(s: &str) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(s.as_bytes()).and_then(|_| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: {e}");
        }
        std::process::exit(0);
    }
}

fn fcu_weights(n: usize, seed: Option<u64>) -> Vec<i64> {
    seed.map_or(vec![1; n], |s| gen_values(n, s, 8, true))
}

fn load_weights(spec: &NetworkSpec, path: &Path) -> cfcnn::Result<NetworkWeights> {
    let text = std::fs::read_to_string(path)?;
    NetworkWeights::from_json(spec, &text)
}

fn render_trace(format: Format, trace: &CycleTrace) -> String {
    match format {
        Format::Text => trace.to_text(),
        Format::Json => trace.to_json() + "\n",
        Format::Csv => {
            let mut t = Table::new(std::iter::once("t".to_string()).chain(trace.columns.iter().cloned()));
            for row in &trace.rows {
                let mut cells = vec![row.cycle.to_string()];
                cells.extend(row.values.iter().map(|v| v.as_ref().map_or("-".into(), |v| v.to_string())));
                t.row(cells);
            }
            t.to_csv()
        }
    }
}

#[derive(Serialize)]
struct SimulationDoc<'a> {
    outputs: Vec<&'a [i64]>,
    stats: &'a cfcnn::sim::SimStats,
    utilization: Vec<Option<String>>,
    trace: Option<serde_json::Value>,
}

fn print_simulation(format: Format, r: &cfcnn::sim::SimResult) -> cfcnn::Result<()> {
    let traced = !r.trace.columns.is_empty();
    match format {
        Format::Json => {
            let doc = SimulationDoc {
                outputs: r.outputs.iter().map(|o| o.data.as_slice()).collect(),
                stats: &r.stats,
                utilization: cfcnn::sim::measure_utilization(&r.stats)
                    .into_iter()
                    .map(|u| u.map(|u| u.to_string()))
                    .collect(),
                trace: traced.then(|| serde_json::from_str(&r.trace.to_json())).transpose()?,
            };
            out(&format!("{}\n", serde_json::to_string_pretty(&doc)?));
        }
        Format::Csv => {
            if traced {
                out(&render_trace(format, &r.trace));
            } else {
                out(&report::sim_table(&r.stats).to_csv());
            }
        }
        Format::Text => {
            if traced {
                out(&format!("{}\n", r.trace.to_text()));
            }
            out(&report::sim_table(&r.stats).to_text());
            for (m, o) in r.outputs.iter().enumerate() {
                let shown: Vec<String> = o.data.iter().take(32).map(i64::to_string).collect();
                let more = o.data.len().saturating_sub(32);
                let tail = if more > 0 { format!(" ({more} more)") } else { String::new() };
                out(&format!("output {m}: [{}]{tail}\n", shown.join(", ")));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrialResult {
    seed: u64,
    pass: bool,
    cycles: Option<u64>,
    detail: String,
}

fn run_trial(spec: &NetworkSpec, p: &ArchitecturePlan, fixed: Option<&NetworkWeights>, seed: u64) -> TrialResult {
    let generated;
    let w = match fixed {
        Some(w) => w,
        None => {
            generated = gen_weights(spec, seed);
            &generated
        }
    };
    let x = gen_input(spec, seed);
    let outcome = ref_network(spec, w, &x).and_then(|want| {
        let r = simulate_network(p, w, std::slice::from_ref(&x), &SimOptions::new())?;
        Ok((want, r))
    });
    match outcome {
        Ok((want, r)) => {
            let got = &r.outputs[0];
            let first_diff = want.data.iter().zip(&got.data).position(|(a, b)| a != b);
            TrialResult {
                seed,
                pass: first_diff.is_none(),
                cycles: Some(r.stats.total_cycles),
                detail: first_diff.map_or(String::new(), |i| {
                    format!("element {i}: expected {}, got {}", want.data[i], got.data[i])
                }),
            }
        }
        Err(e) => TrialResult {
            seed,
            pass: false,
            cycles: None,
            detail: e.to_string(),
        },
    }
}
