//! Thin command-line front end over [`ulamcert::sweep`].

use std::path::PathBuf;

use clap::Parser;

use ulamcert::sweep::{emit, run_sweep, EmitFormat, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ulamcert",
    about = "Certified stationary measures and Lyapunov exponents for interval maps with additive noise"
)]
struct Cli {
    /// Configuration file (TOML, or JSON with a .json extension). Flags
    /// override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in map name (bz, doubling, tent, toy, toy:<eps>) or a map
    /// definition JSON path.
    #[arg(long)]
    map: Option<String>,
    /// Noise amplitude; repeatable.
    #[arg(long = "xi")]
    xi: Vec<f64>,
    /// log2 of the approximation grid size.
    #[arg(long = "log2-delta")]
    log2_delta: Option<u32>,
    /// log2 of the contraction grid size (coarser than the approximation).
    #[arg(long = "log2-delta-contr")]
    log2_delta_contr: Option<u32>,
    /// log2 of the error-estimation partition size.
    #[arg(long = "log2-delta-est")]
    log2_delta_est: Option<u32>,
    #[arg(long = "target-alpha")]
    target_alpha: Option<f64>,
    /// Fixed-point residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Operator cache directory.
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    /// Iterate-norm horizon for the contraction run.
    #[arg(long = "contraction-steps")]
    contraction_steps: Option<usize>,
    /// Also emit per-amplitude stability reports.
    #[arg(long)]
    stability: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ulamcert::Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            map: String::new(),
            params: Default::default(),
            xi: Vec::new(),
            log2_delta: 0,
            log2_delta_contr: 0,
            log2_delta_est: 0,
            target_alpha: 0.5,
            tol: 1e-9,
            e_ladder: None,
            out_dir: None,
            workers: None,
            cache_dir: None,
            contraction_steps: 90,
            stability: false,
        },
    };
    if let Some(map) = &cli.map {
        cfg.map = map.clone();
    }
    if !cli.xi.is_empty() {
        cfg.xi = cli.xi.clone();
    }
    if let Some(v) = cli.log2_delta {
        cfg.log2_delta = v;
    }
    if let Some(v) = cli.log2_delta_contr {
        cfg.log2_delta_contr = v;
    }
    if let Some(v) = cli.log2_delta_est {
        cfg.log2_delta_est = v;
    }
    if let Some(v) = cli.target_alpha {
        cfg.target_alpha = v;
    }
    if let Some(v) = cli.tol {
        cfg.tol = v;
    }
    if cli.out_dir.is_some() {
        cfg.out_dir = cli.out_dir.clone();
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cli.cache_dir.is_some() {
        cfg.cache_dir = cli.cache_dir.clone();
    }
    if let Some(v) = cli.contraction_steps {
        cfg.contraction_steps = v;
    }
    if cli.stability {
        cfg.stability = true;
    }
    if cfg.map.is_empty() {
        return Err(ulamcert::Error::Config(
            "no map selected (use --map or a config file)".into(),
        ));
    }
    if cfg.log2_delta == 0 {
        return Err(ulamcert::Error::Config(
            "no grid size selected (use --log2-delta)".into(),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    if let Some(workers) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: cannot configure {workers} workers: {e}");
            std::process::exit(2);
        }
    }
    let rows = match run_sweep(&cfg) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    println!("{}", ulamcert::sweep::ResultRow::CSV_HEADER);
    for row in &rows {
        println!("{}", row.to_csv_line());
        if let Some(d) = &row.diagnostic {
            eprintln!("  xi={}: {d}", row.xi);
        }
    }
    if let Some(dir) = &cfg.out_dir {
        for format in [EmitFormat::Csv, EmitFormat::Json, EmitFormat::PlotData] {
            if let Err(e) = emit(&rows, format, dir) {
                eprintln!("error writing output: {e}");
                std::process::exit(2);
            }
        }
    }
    let all_ok = rows
        .iter()
        .all(|r| r.verdict != ulamcert::observable::Verdict::Failed);
    std::process::exit(if all_ok { 0 } else { 1 });
}
