//! Command-line surface of the `deepfea` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Profile, RunConfig};
use crate::error::{Error, Result};
use crate::fem::SimulationRecord;
use crate::mesh::{LoadSpec, NormalizationStats};
use crate::metrics::{evaluate, timing_report, MetricsReport, Parameter};
use crate::nelo::{train, EpochRecord};
use crate::plot::{heatmap, line_chart, FrameAverages, Series};
use crate::predict::NepModel;
use crate::store::{read_dataset, read_model, split, write_dataset, write_model, ModelArchive};
use crate::surrogate::Surrogate;

#[derive(Debug, Parser)]
#[command(
    name = "deepfea",
    version,
    about = "ConvLSTM surrogate for transient FE simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration (exclusive with --profile).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration; desk when neither this nor --config is given.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Overrides the training seed (also drives the split and load draws).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the FE oracle over the configured load grid.
    Gen,
    /// Train on a dataset and write the model archive and history.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Roll out a trained model for one load case.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        node: usize,
        #[arg(long)]
        angle: f64,
        #[arg(long)]
        magnitude: f64,
    },
    /// Autoregressive metrics on the test split plus the timing comparison.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluate an all-zero network instead of a trained archive.
        #[arg(long)]
        untrained: bool,
        #[arg(long)]
        no_timing: bool,
    },
    /// Train and evaluate several hidden-channel layouts, e.g. `16,32 32,64`.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        archs: Vec<String>,
    },
    /// Average-curve CSV, line charts and stress heatmaps for one simulation.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sim: usize,
        /// Overlay this model's rollout.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.profile) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("--config and --profile are exclusive".into()))
            }
            (Some(path), None) => RunConfig::from_file(path)?,
            (None, p) => RunConfig::profile(p.unwrap_or(Profile::Desk)),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data_dir(&self, data: &Option<PathBuf>) -> PathBuf {
        data.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    fn model_dir(&self, model: &Option<PathBuf>) -> PathBuf {
        model.clone().unwrap_or_else(|| self.out.join("model"))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cfg = cli.resolve_config()?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match &cli.command {
        Command::Gen => gen(cli, &cfg),
        Command::Train { data } => train_cmd(cli, &cfg, &cli.data_dir(data)),
        Command::Predict {
            model,
            node,
            angle,
            magnitude,
        } => predict_cmd(
            cli,
            &cfg,
            &cli.model_dir(model),
            LoadSpec::new(*node, *angle, *magnitude),
        ),
        Command::Eval {
            model,
            data,
            untrained,
            no_timing,
        } => eval_cmd(
            cli,
            &cfg,
            &cli.model_dir(model),
            &cli.data_dir(data),
            *untrained,
            !*no_timing,
        ),
        Command::Sweep { data, archs } => sweep_cmd(cli, &cfg, &cli.data_dir(data), archs),
        Command::Plot { data, sim, model } => {
            plot_cmd(cli, &cli.data_dir(data), *sim, model.as_deref())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let seed = cfg.train.seed;
    let records = cfg.generate(seed)?;
    let manifest = write_dataset(&records, &cli.out.join("dataset"), seed)?;
    write_text(&cli.out.join("config.toml"), &cfg.to_toml())?;
    log::info!(
        "wrote {} simulations to {}",
        manifest.sims.len(),
        cli.out.join("dataset").display()
    );
    Ok(())
}

pub const HISTORY_HEADER: &str = "epoch,loss,ps,lr,replaced,draws";

/// Training history without wall-clock times, so reruns compare bitwise.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.loss, r.ps, r.lr, r.replaced, r.draws
        );
    }
    s
}

/// `(train, test, normalization fitted on train)` for a dataset directory.
pub fn load_split(
    cfg: &RunConfig,
    data: &Path,
) -> Result<(
    Vec<SimulationRecord>,
    Vec<SimulationRecord>,
    NormalizationStats,
)> {
    let (_, records) = read_dataset(data)?;
    let (tr, te) = split(&records, cfg.split_ratio, cfg.train.seed)?;
    let stats = NormalizationStats::fit(&tr)?;
    Ok((tr, te, stats))
}

fn write_metrics(out: &Path, report: &MetricsReport) -> Result<()> {
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    write_text(&out.join("metrics.txt"), &report.to_text())
}

fn train_cmd(cli: &Cli, cfg: &RunConfig, data: &Path) -> Result<()> {
    let (tr, te, stats) = load_split(cfg, data)?;
    log::info!(
        "training on {} simulations, testing on {}",
        tr.len(),
        te.len()
    );
    let (model, history) = train(&tr, &stats, cfg.architecture(), &cfg.train, |_| {})?;
    log::info!(
        "training took {:.1} s",
        history.last().map_or(0.0, |r| r.wall_time)
    );
    let surrogate = Surrogate::new(model, stats)?;
    let report = evaluate(&surrogate, &te)?;
    log::info!("test metrics:\n{}", report.to_text());
    write_text(&cli.out.join("history.csv"), &history_csv(&history))?;
    write_metrics(&cli.out, &report)?;
    write_model(
        &ModelArchive {
            surrogate,
            training: Some(cfg.train.clone()),
            metrics: Some(report),
        },
        &cli.out.join("model"),
    )
}

fn predict_cmd(cli: &Cli, cfg: &RunConfig, model: &Path, load: LoadSpec) -> Result<()> {
    let archive = read_model(model)?;
    let topo = cfg.topology()?;
    load.validate(&topo)?;
    let rec = archive.surrogate.predict_load(
        &topo,
        &cfg.material,
        &load,
        cfg.sim.steps,
        cfg.sim.record_dt(),
    )?;
    let dir = cli.out.join("prediction");
    write_dataset(std::slice::from_ref(&rec), &dir, cfg.train.seed)?;
    write_text(&dir.join("averages.csv"), &FrameAverages::of(&rec).to_csv())?;
    log::info!("wrote prediction to {}", dir.display());
    Ok(())
}

fn zero_surrogate(cfg: &RunConfig, stats: NormalizationStats) -> Result<Surrogate> {
    let mut model = NepModel::init(cfg.architecture(), cfg.train.seed)?;
    for t in model.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    Surrogate::new(model, stats)
}

fn eval_cmd(
    cli: &Cli,
    cfg: &RunConfig,
    model: &Path,
    data: &Path,
    untrained: bool,
    timing: bool,
) -> Result<()> {
    let (_, te, stats) = load_split(cfg, data)?;
    let surrogate = if untrained {
        zero_surrogate(cfg, stats)?
    } else {
        read_model(model)?.surrogate
    };
    let report = evaluate(&surrogate, &te)?;
    print!("{}", report.to_text());
    write_metrics(&cli.out, &report)?;
    if timing {
        let n = cfg.timing_sims.min(te.len());
        let t = timing_report(&surrogate, &te[..n], &cfg.sim)?;
        log::info!(
            "surrogate {:.4} s, oracle {:.4} s per simulation, speedup {:.2}x",
            t.surrogate_mean_s,
            t.oracle_mean_s,
            t.speedup
        );
        write_text(&cli.out.join("timing.csv"), &t.to_csv())?;
    }
    Ok(())
}

fn parse_arch(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|c| {
            c.trim().parse().map_err(|_| {
                Error::Config(format!("bad architecture {text:?}: expected e.g. 16,32"))
            })
        })
        .collect()
}

fn sweep_cmd(cli: &Cli, cfg: &RunConfig, data: &Path, archs: &[String]) -> Result<()> {
    let (tr, te, stats) = load_split(cfg, data)?;
    let params = Parameter::for_dim(cfg.mesh.node_dims.len());
    let mut table = String::from("layers,channels,parameters");
    for p in &params {
        let _ = write!(table, ",{0}_r2,{0}_nmae_pct,{0}_nrmse_pct", p.name());
    }
    table.push('\n');
    for text in archs {
        let hidden = parse_arch(text)?;
        let mut run = cfg.clone();
        run.model.hidden = hidden.clone();
        run.validate()?;
        log::info!("sweep: training hidden {hidden:?}");
        let (model, _) = train(&tr, &stats, run.architecture(), &run.train, |_| {})?;
        let surrogate = Surrogate::new(model, stats.clone())?;
        let report = evaluate(&surrogate, &te)?;
        let channels: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
        let _ = write!(
            table,
            "{},{},{}",
            hidden.len(),
            channels.join("-"),
            surrogate.model.num_parameters()
        );
        for p in &params {
            let r = report.row(*p).expect("every parameter is reported");
            let _ = write!(table, ",{:.6},{:.4},{:.4}", r.r2, r.nmae, r.nrmse);
        }
        table.push('\n');
        write_model(
            &ModelArchive {
                surrogate,
                training: Some(run.train.clone()),
                metrics: Some(report),
            },
            &cli.out
                .join("sweep")
                .join(format!("h{}", channels.join("-"))),
        )?;
    }
    print!("{table}");
    write_text(&cli.out.join("sweep.csv"), &table)
}

fn plot_cmd(cli: &Cli, data: &Path, index: usize, model: Option<&Path>) -> Result<()> {
    let (_, records) = read_dataset(data)?;
    let sim = records.get(index).ok_or_else(|| {
        Error::Config(format!(
            "simulation {index} not in dataset ({} sims)",
            records.len()
        ))
    })?;
    let gt = FrameAverages::of(sim);
    let pred = match model {
        Some(m) => Some(FrameAverages::of(
            &read_model(m)?.surrogate.predict_record(sim)?,
        )),
        None => None,
    };
    let dir = cli.out.join("plot");
    let stem = format!("sim_{index:04}");
    write_text(&dir.join(format!("{stem}.csv")), &gt.to_csv())?;
    if let Some(p) = &pred {
        write_text(&dir.join(format!("{stem}_predicted.csv")), &p.to_csv())?;
    }
    let charts: [(&str, &str, fn(&FrameAverages) -> &[f64]); 3] = [
        ("displacement", "mean resultant displacement (m)", |a| {
            &a.displacement
        }),
        ("strain", "mean effective strain", |a| &a.strain),
        ("stress", "mean effective stress (Pa)", |a| &a.stress),
    ];
    for (name, label, pick) in charts {
        let mut series = vec![Series {
            name: "oracle",
            x: &gt.time,
            y: pick(&gt),
        }];
        if let Some(p) = &pred {
            series.push(Series {
                name: "surrogate",
                x: &p.time,
                y: pick(p),
            });
        }
        let svg = line_chart(
            &format!("simulation {index}: {name}"),
            "time (s)",
            label,
            &series,
        );
        write_text(&dir.join(format!("{stem}_{name}.svg")), &svg)?;
    }
    let ed = sim.topology.element_dims();
    let t_max = sim.steps();
    let hi = sim
        .frames
        .iter()
        .flat_map(|f| f.stress.iter().copied())
        .fold(0.0, f64::max);
    for t in [t_max / 4, t_max / 2, 3 * t_max / 4, t_max] {
        let f = &sim.frames[t];
        let svg = heatmap(
            &format!("effective stress, frame {t}"),
            ed[0],
            ed[1],
            &f.stress,
            (0.0, hi),
        );
        write_text(&dir.join(format!("{stem}_stress_{t:04}.svg")), &svg)?;
    }
    log::info!("wrote plots to {}", dir.display());
    Ok(())
}
