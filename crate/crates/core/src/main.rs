use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vivt_rlut::mmu::{load_page_table, PageTable};
use vivt_rlut::rlut::bytes_needed;
use vivt_rlut::sim::config::{parse_config, SimConfig};
use vivt_rlut::sim::gen::{generate_trace, GenParams};
use vivt_rlut::sim::trace::{format_trace, parse_trace};
use vivt_rlut::sim::{run_trace, SimError};

#[derive(Parser)]
#[command(
    name = "vivt-sim",
    version,
    about = "Synonym-safe VIVT cache simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trace and print statistics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Overrides the config's `page_table` entry.
        #[arg(long)]
        page_table: Option<PathBuf>,
        /// Check invariants and the oracle after every event.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Run a trace in check mode.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        page_table: Option<PathBuf>,
    },
    /// Generate a random trace bundle (config, page table, trace) into a directory.
    GenTrace {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        events: usize,
        #[arg(long, default_value_t = 1)]
        cores: usize,
        #[arg(long, default_value_t = 4)]
        synonym_groups: usize,
        #[arg(long, default_value_t = 0.3)]
        write_ratio: f64,
        #[arg(long, default_value_t = 0.001)]
        ctx_switch_ratio: f64,
        /// Cache configuration the bundle is generated for.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Print RLUT storage in bytes by cache size and synonym limit.
    RlutSize {
        #[arg(long = "s")]
        s: Option<u64>,
    },
}

fn read(path: &Path) -> Result<String, SimError> {
    fs::read_to_string(path).map_err(|e| {
        SimError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_config(path: &Path) -> Result<SimConfig, SimError> {
    parse_config(&read(path)?)
}

fn resolve_page_table(
    config_path: &Path,
    config: &SimConfig,
    flag: Option<PathBuf>,
) -> Result<PageTable, SimError> {
    let path = match (flag, &config.page_table) {
        (Some(p), _) => p,
        (None, Some(rel)) => config_path.parent().unwrap_or(Path::new(".")).join(rel),
        (None, None) => return Ok(PageTable::identity()),
    };
    Ok(load_page_table(&read(&path)?)?)
}

fn run(
    config: &Path,
    trace: &Path,
    page_table: Option<PathBuf>,
    check: bool,
    csv: bool,
) -> Result<(), SimError> {
    let cfg = load_config(config)?;
    let pt = resolve_page_table(config, &cfg, page_table)?;
    let events = parse_trace(&read(trace)?, cfg.cores)?;
    let stats = run_trace(&events, &cfg, &pt, check)?;
    if csv {
        print!("{}", stats.to_csv());
    } else {
        print!("{}", stats.to_text());
    }
    Ok(())
}

fn gen(params: GenParams, config: Option<PathBuf>, out: &Path) -> Result<(), SimError> {
    let mut cfg = match &config {
        Some(p) => load_config(p)?,
        None => SimConfig::default(),
    };
    cfg.cores = params.cores;
    let g = cfg.cache.geometry()?;
    let t = generate_trace(&params, &g)?;
    fs::create_dir_all(out)?;
    cfg.page_table = Some("pagetable.txt".into());
    fs::write(out.join("config.txt"), cfg.to_string())?;
    fs::write(out.join("pagetable.txt"), t.page_table.to_string())?;
    let header = format!(
        "# seed={} cores={} events={} synonym_groups={} write_ratio={} ctx_switch_ratio={}\n",
        params.seed,
        params.cores,
        params.events,
        params.synonym_page_groups,
        params.write_ratio,
        params.context_switch_ratio
    );
    fs::write(out.join("trace.txt"), header + &format_trace(&t.events))?;
    eprintln!("wrote {} events to {}", t.events.len(), out.display());
    Ok(())
}

fn rlut_size(s: Option<u64>) {
    let limits = match s {
        Some(s) => vec![s],
        None => vec![1, 2],
    };
    println!("cache_size,s,bytes_needed");
    for s in limits {
        for kb in [4u64, 8, 16, 32] {
            println!("{}KB,{},{}", kb, s, bytes_needed(kb * 1024, s));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            trace,
            page_table,
            check,
            csv,
        } => run(&config, &trace, page_table, check, csv),
        Command::Check {
            config,
            trace,
            page_table,
        } => run(&config, &trace, page_table, true, false),
        Command::GenTrace {
            seed,
            events,
            cores,
            synonym_groups,
            write_ratio,
            ctx_switch_ratio,
            config,
            out,
        } => {
            let params = GenParams {
                seed,
                cores,
                events,
                synonym_page_groups: synonym_groups,
                write_ratio,
                context_switch_ratio: ctx_switch_ratio,
                ..GenParams::default()
            };
            gen(params, config, &out)
        }
        Command::RlutSize { s } => {
            rlut_size(s);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_violation() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
