use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use normalview::config::PipelineConfig;
use normalview::pipeline::{self, Outcome, RunOptions};
use normalview::projection::{Coloring, DepthRule};
use normalview::Result;

#[derive(Parser)]
#[command(name = "normalview", version, about = "Tree point-cloud projection pipeline")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    /// Print the work plan and write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct PreprocessFlags {
    #[arg(long)]
    sor_k: Option<usize>,
    #[arg(long)]
    sor_sigma: Option<f64>,
    /// Minimum point spacing in metres; 0 disables subsampling.
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Args, Default)]
struct RenderFlags {
    #[arg(long)]
    size: Option<usize>,
    /// WOP, OP or NV.
    #[arg(long)]
    coloring: Option<Coloring>,
    /// Comma-separated view angles in degrees.
    #[arg(long, value_delimiter = ',')]
    angles: Option<Vec<f64>>,
    /// Use N evenly spaced angles instead of the configured list.
    #[arg(long, conflicts_with = "angles")]
    uniform_angles: Option<usize>,
    /// Comma-separated 1-based intensity channels for OP images.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<u8>>,
    #[arg(long)]
    slice_offset: Option<f64>,
    #[arg(long)]
    no_smoothing: bool,
    /// nearest-viewer, last-write or max-intensity.
    #[arg(long, value_parser = parse_depth_rule)]
    depth_rule: Option<DepthRule>,
    /// Neighbours for normal estimation when NV images need normals.
    #[arg(long)]
    neighbors: Option<usize>,
}

fn parse_depth_rule(s: &str) -> std::result::Result<DepthRule, String> {
    match s {
        "nearest-viewer" => Ok(DepthRule::NearestViewer),
        "last-write" => Ok(DepthRule::LastWrite),
        "max-intensity" => Ok(DepthRule::MaxIntensity),
        _ => Err(format!("unknown depth rule `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Outlier removal and subsampling of every segment under a root.
    Preprocess {
        #[arg(long = "in")]
        in_root: PathBuf,
        #[arg(long = "out")]
        out_root: PathBuf,
        #[command(flatten)]
        flags: PreprocessFlags,
    },
    /// Outward-oriented normals, written as PLY.
    Normals {
        #[arg(long = "in")]
        in_root: PathBuf,
        #[arg(long = "out")]
        out_root: PathBuf,
        #[arg(long)]
        neighbors: Option<usize>,
    },
    /// Multi-view projection images for a manifest CSV or segment root.
    Render {
        #[arg(long = "in")]
        source: PathBuf,
        #[arg(long = "out")]
        out_root: PathBuf,
        #[command(flatten)]
        flags: RenderFlags,
    },
    /// Rigid local-to-global fit from anchor pairs.
    Register {
        /// CSV with header xl,yl,zl,xg,yg,zg.
        #[arg(long)]
        anchors: PathBuf,
        /// Segment root to transform.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long = "out")]
        out_root: PathBuf,
    },
    /// Mutual-nearest-neighbour matching of two position lists.
    Match {
        /// CSV with header id,x,y[,z].
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        /// Match in 3D instead of the horizontal plane.
        #[arg(long = "3d")]
        three_d: bool,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Species-stratified train/test split, written as a manifest CSV.
    Split {
        #[arg(long = "in")]
        source: PathBuf,
        #[arg(long = "out")]
        out: PathBuf,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Nearest-centroid baseline over rendered images.
    ClassifyBaseline {
        /// Directory of <species>/*.png training images.
        #[arg(long)]
        train: PathBuf,
        /// Directory searched recursively for images to score.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        coloring: Option<Coloring>,
        #[arg(long)]
        feature_size: Option<usize>,
        /// Probability CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-tree metrics from a probability CSV and a truth CSV.
    Evaluate {
        #[arg(long)]
        probabilities: PathBuf,
        /// CSV with header tree_id,scan_id,species.
        #[arg(long)]
        truth: PathBuf,
        /// Report JSON; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pixel ground size and empty-pixel ratio per segment, as CSV on stdout.
    Stats {
        #[arg(long = "in")]
        source: PathBuf,
        /// Comma-separated image sizes; defaults to the configured size.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[command(flatten)]
        flags: RenderFlags,
    },
}

fn apply_render_flags(cfg: &mut PipelineConfig, f: &RenderFlags) {
    let r = &mut cfg.render;
    if let Some(v) = f.size {
        r.image_size = v;
    }
    if let Some(v) = f.coloring {
        r.coloring = v;
    }
    if let Some(v) = &f.angles {
        r.angles_deg = v.clone();
    }
    if let Some(n) = f.uniform_angles {
        r.angles_deg = normalview::projection::uniform_angles(n);
    }
    if let Some(v) = &f.channels {
        r.channel_selection = v.clone();
    }
    if let Some(v) = f.slice_offset {
        r.slice_offset = v;
    }
    if f.no_smoothing {
        r.smoothing = false;
    }
    if let Some(v) = f.depth_rule {
        r.depth_rule = v;
    }
    if let Some(v) = f.neighbors {
        cfg.normals.neighbor_count = v;
    }
}

fn print_plan(plan: &[String]) {
    for line in plan {
        println!("{line}");
    }
}

fn report_batch<T>(report: &pipeline::BatchReport<T>, line: impl Fn(&T) -> String) -> ExitCode {
    for s in &report.segments {
        println!("{}", line(s));
    }
    for f in &report.failures {
        eprintln!("error: {f}");
    }
    if report.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions {
        jobs: cli.jobs,
        dry_run: cli.dry_run,
    };
    let planned = |plan: Vec<String>| {
        print_plan(&plan);
        ExitCode::SUCCESS
    };

    Ok(match cli.command {
        Command::Preprocess { in_root, out_root, flags } => {
            if let Some(v) = flags.sor_k {
                cfg.sor.k_neighbors = v;
            }
            if let Some(v) = flags.sor_sigma {
                cfg.sor.n_sigma = v;
            }
            if let Some(v) = flags.spacing {
                cfg.subsample.spacing = v;
            }
            match pipeline::cmd_preprocess(&in_root, &out_root, &cfg, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(report) => {
                    println!("input,before,after_sor,after_subsample");
                    report_batch(&report, |s| {
                        format!("{},{},{},{}", s.input.display(), s.before, s.after_sor, s.after_subsample)
                    })
                }
            }
        }
        Command::Normals { in_root, out_root, neighbors } => {
            if let Some(v) = neighbors {
                cfg.normals.neighbor_count = v;
            }
            match pipeline::cmd_normals(&in_root, &out_root, &cfg, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(report) => {
                    println!("input,points,degenerate");
                    report_batch(&report, |s| format!("{},{},{}", s.input.display(), s.points, s.degenerate))
                }
            }
        }
        Command::Render { source, out_root, flags } => {
            apply_render_flags(&mut cfg, &flags);
            match pipeline::cmd_render(&source, &cfg, &out_root, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(summary) => {
                    println!("{}", serde_json::to_string_pretty(&summary)?);
                    for f in &summary.failures {
                        eprintln!("error: {f}");
                    }
                    if summary.segments_failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
            }
        }
        Command::Register { anchors, segments, out_root } => {
            match pipeline::cmd_register(&anchors, segments.as_deref(), &out_root, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(report) => {
                    println!("{}", serde_json::to_string_pretty(&report.fit)?);
                    report_batch(&report.segments, |p| format!("wrote {}", p.display()))
                }
            }
        }
        Command::Match { a, b, threshold, three_d, out } => {
            match pipeline::cmd_match(&a, &b, threshold, three_d, out.as_deref(), opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(report) => {
                    if out.is_none() {
                        print!("{}", report.csv);
                    } else {
                        log::info!(
                            "{} pairs, {} + {} unmatched",
                            report.result.pairs.len(),
                            report.result.unmatched_a.len(),
                            report.result.unmatched_b.len()
                        );
                    }
                    ExitCode::SUCCESS
                }
            }
        }
        Command::Split { source, out, test_fraction } => {
            if let Some(v) = test_fraction {
                cfg.split.test_fraction = v;
            }
            match pipeline::cmd_split(&source, &cfg, &out, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(outcome) => {
                    for w in &outcome.warnings {
                        eprintln!("warning: {w}");
                    }
                    let tags = outcome.manifest.entries.iter().map(|e| e.split);
                    let n_test = tags.filter(|t| *t == normalview::cloud_io::SplitTag::Test).count();
                    println!("{} train, {} test", outcome.manifest.len() - n_test, n_test);
                    ExitCode::SUCCESS
                }
            }
        }
        Command::ClassifyBaseline { train, test, coloring, feature_size, out } => {
            let coloring = coloring.unwrap_or(cfg.render.coloring);
            let size = feature_size.unwrap_or(cfg.baseline.feature_size);
            match pipeline::cmd_classify_baseline(&train, &test, coloring, size, &out, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(table) => {
                    println!("{} images scored over {} classes", table.records.len(), table.species.len());
                    ExitCode::SUCCESS
                }
            }
        }
        Command::Evaluate { probabilities, truth, out } => {
            match pipeline::cmd_evaluate(&probabilities, &truth, out.as_deref(), opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(eval) => {
                    print!("{}", eval.report.to_table());
                    ExitCode::SUCCESS
                }
            }
        }
        Command::Stats { source, sizes, flags } => {
            apply_render_flags(&mut cfg, &flags);
            match pipeline::cmd_stats(&source, &cfg, &sizes, opts)? {
                Outcome::Planned(p) => planned(p),
                Outcome::Done(report) => {
                    let rows: Vec<_> = report.segments.iter().flatten().cloned().collect();
                    pipeline::write_stats_csv(std::io::stdout().lock(), &rows)?;
                    for f in &report.failures {
                        eprintln!("error: {f}");
                    }
                    if report.success() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
            }
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
