use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use perp_core::config::RunConfig;
use perp_core::dti::DtiModel;
use perp_core::error::{PerpError, Result};
use perp_core::eval::{
    cell_seed, equilibrium_gap, evaluate_with_traces, grid_search_best_speed, optimal_uniform_speed, write_traces,
    ArtifactLayout, PolicyBundle, PolicyKind,
};
use perp_core::pcp::PcpPolicy;
use perp_core::perp::{PerpPolicy, Variant};
use perp_core::pipeline::{self, require, stage_seed, Stage};
use perp_core::ring::{mean, std_dev, RingEnv, TrajectoryRecord, TrajectoryWriter};

#[derive(Parser, Debug)]
#[command(name = "perp", version, about = "Speed-advisory training and evaluation on a congested ring road")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config layered over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set pcp.ppo.learning_rate=3e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Hold length in simulation steps, applied to every stage.
    #[arg(long, global = true)]
    delta: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, value_name = "DIR")]
    artifacts: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the ring without training and optionally dump the trajectory.
    Simulate {
        #[arg(long, default_value_t = 600)]
        steps: usize,
        /// Hold the ego at this speed instead of letting it follow IDM.
        #[arg(long)]
        ego_speed: Option<f64>,
        /// JSON-lines trajectory dump.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the piecewise-constant speed policy.
    TrainPcp {
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Roll out the speed policy with trait drivers and save state windows.
    CollectDtiData {
        #[arg(long)]
        pcp: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        windows_per_trait: Option<usize>,
    },
    /// Train the trait-inference autoencoder.
    TrainDti {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Held-out latent points as CSV.
        #[arg(long)]
        latents: Option<PathBuf>,
    },
    /// Cluster statistics and nearest-centroid accuracy of a trained trait model.
    EvalDti {
        #[arg(long, visible_alias = "checkpoint")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        latents: Option<PathBuf>,
    },
    /// Train a residual policy (perp, vrp or tarp) on top of a frozen speed policy.
    TrainPerp {
        #[arg(long, default_value = "perp")]
        variant: Variant,
        #[arg(long)]
        pcp: Option<PathBuf>,
        #[arg(long)]
        dti: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate one policy with uniformly drawn driver traits.
    Evaluate {
        /// idm, osl, pcp, vrp, tarp or perp.
        #[arg(long, default_value = "perp")]
        policy: String,
        #[arg(long)]
        pcp: Option<PathBuf>,
        #[arg(long)]
        dti: Option<PathBuf>,
        #[arg(long)]
        residual: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Per-episode JSON-lines trace dump.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Evaluate every configured policy, hold length and seed into one CSV.
    Compare {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium gap and speed of the uniform ring, with a simulated cross-check.
    Equilibrium {
        /// Steps per grid-search candidate.
        #[arg(long, default_value_t = 3000)]
        steps: usize,
    },
    /// train-pcp, collect-dti-data, train-dti, train-perp and compare for every
    /// configured seed, starting from the reduced desk-scale budget.
    Pipeline {
        /// Start from the full-scale defaults instead.
        #[arg(long)]
        full: bool,
    },
}

fn build_config(common: &Common, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, &base)?,
        None => base,
    };
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(delta) = common.delta {
        if delta == 0 {
            return Err(PerpError::Config("--delta must be positive".into()));
        }
        cfg.set_delta(delta);
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(dir) = &common.artifacts {
        cfg.paths.artifacts = dir.clone();
    }
    Ok(cfg)
}

fn or_default(p: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    p.clone().unwrap_or(default)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn run(cli: Cli) -> Result<()> {
    let base = match cli.command {
        Command::Pipeline { full: false } => RunConfig::desk_scale(),
        _ => RunConfig::default(),
    };
    let cfg = build_config(&cli.common, base)?;
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let layout = ArtifactLayout::new(&cfg.paths.artifacts);
    let seed = cfg.seed;
    match cli.command {
        Command::Simulate { steps, ego_speed, out } => {
            let mut env = RingEnv::reset(&cfg.env, &cfg.idm, seed)?;
            let mut writer = out.as_deref().map(TrajectoryWriter::create).transpose()?;
            let mut speeds = Vec::with_capacity(steps);
            let mut stds = Vec::with_capacity(steps);
            let mut collided = false;
            for _ in 0..steps {
                let outcome = match ego_speed {
                    Some(v) => env.step(v),
                    None => env.step_idm(),
                };
                speeds.push(mean(env.speeds()));
                stds.push(std_dev(env.speeds()));
                if let Some(w) = writer.as_mut() {
                    w.write(&TrajectoryRecord::capture(&env, ego_speed))?;
                }
                if outcome.collided {
                    collided = true;
                    break;
                }
            }
            if let Some(w) = writer {
                w.finish()?;
            }
            println!(
                "simulate: steps={} avg_speed={:.4} final_std={:.4} collided={collided}",
                speeds.len(),
                mean(&speeds),
                stds.last().copied().unwrap_or(0.0)
            );
        }
        Command::TrainPcp { iters, out, log } => {
            let mut cfg = cfg;
            if let Some(n) = iters {
                cfg.pcp.iterations = n;
            }
            let delta = cfg.pcp.delta;
            let out = or_default(&out, layout.pcp(delta, seed));
            let log = or_default(&log, layout.pcp_log(delta, seed));
            let res = pipeline::pcp_stage(&cfg, stage_seed(seed, Stage::Pcp, delta), &out, Some(&log))?;
            println!(
                "train-pcp: delta={delta} iterations={} best_iteration={} eval_avg_speed={} out={}",
                cfg.pcp.iterations,
                res.best_iteration,
                fmt_opt(res.best_score),
                out.display()
            );
        }
        Command::CollectDtiData { pcp, out, windows_per_trait } => {
            let mut cfg = cfg;
            if let Some(n) = windows_per_trait {
                cfg.dti.collect.windows_per_trait = n;
            }
            let delta = cfg.dti.collect.delta;
            let pcp = or_default(&pcp, layout.pcp(delta, seed));
            let out = or_default(&out, layout.dataset(delta, seed));
            let data = pipeline::collect_stage(&cfg, &pcp, stage_seed(seed, Stage::Collect, delta), &out)?;
            println!("collect-dti-data: windows={} out={}", data.len(), out.display());
        }
        Command::TrainDti { data, out, epochs, log, latents } => {
            let mut cfg = cfg;
            if let Some(n) = epochs {
                cfg.dti.train.epochs = n;
            }
            let delta = cfg.dti.collect.delta;
            let data = or_default(&data, layout.dataset(delta, seed));
            let out = or_default(&out, layout.dti(delta, seed));
            let log = or_default(&log, layout.dti_log(delta, seed));
            let latents = or_default(&latents, layout.latents(delta, seed));
            let ev = pipeline::dti_stage(&cfg, &data, stage_seed(seed, Stage::Dti, delta), &out, Some(&log), Some(&latents))?;
            println!(
                "train-dti: accuracy={:.4} separation={:.3} eval_recon={:.6} out={}",
                ev.accuracy,
                ev.extreme_separation,
                ev.eval_recon,
                out.display()
            );
        }
        Command::EvalDti { model, data, latents } => {
            let delta = cfg.dti.collect.delta;
            let model = or_default(&model, layout.dti(delta, seed));
            let data = or_default(&data, layout.dataset(delta, seed));
            let ev = pipeline::dti_eval_stage(&cfg, &model, &data, stage_seed(seed, Stage::Dti, delta), latents.as_deref())?;
            for c in &ev.clusters {
                println!(
                    "trait {:+.1}: n={} centroid=({:.3}, {:.3}) spread={:.3}",
                    c.trait_mean,
                    c.count,
                    c.centroid.first().copied().unwrap_or(0.0),
                    c.centroid.get(1).copied().unwrap_or(0.0),
                    c.spread
                );
            }
            println!("eval-dti: accuracy={:.4} separation={:.3}", ev.accuracy, ev.extreme_separation);
        }
        Command::TrainPerp { variant, pcp, dti, iters, out, log } => {
            if variant == Variant::Osl {
                return Err(PerpError::Config("osl is a constant baseline, not a trainable residual".into()));
            }
            let mut cfg = cfg;
            if let Some(n) = iters {
                cfg.perp.iterations = n;
            }
            let delta = cfg.perp.delta;
            let pcp = or_default(&pcp, layout.pcp(delta, seed));
            let dti = (variant == Variant::Perp).then(|| or_default(&dti, layout.dti(delta, seed)));
            let out = or_default(&out, layout.residual(variant, delta, seed));
            let log = or_default(&log, layout.residual_log(variant, delta, seed));
            let res = pipeline::residual_stage(
                &cfg,
                variant,
                &pcp,
                dti.as_deref(),
                stage_seed(seed, Stage::Residual(variant), delta),
                &out,
                Some(&log),
            )?;
            println!(
                "train-perp: variant={} best_iteration={} eval_avg_speed={} out={}",
                variant.name(),
                res.best_iteration,
                fmt_opt(res.best_score),
                out.display()
            );
        }
        Command::Evaluate {
            policy,
            pcp,
            dti,
            residual,
            episodes,
            traces,
        } => {
            let mut cfg = cfg;
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            let kind = PolicyKind::parse(&policy)?;
            let delta = cfg.compare.deltas.first().copied().unwrap_or(cfg.perp.delta);
            let load_pcp = |p: &Option<PathBuf>| -> Result<PcpPolicy> {
                let path = or_default(p, layout.pcp(delta, seed));
                require(&path)?;
                PcpPolicy::load(&path)
            };
            let osl = optimal_uniform_speed(&cfg.env, &cfg.idm)?;
            let pcp_policy = match kind {
                PolicyKind::Idm | PolicyKind::Osl => None,
                _ => Some(load_pcp(&pcp)?),
            };
            let dti_model = if kind == PolicyKind::Perp {
                let path = or_default(&dti, layout.dti(delta, seed));
                require(&path)?;
                Some(DtiModel::load(&path)?)
            } else {
                None
            };
            let res_policy = match kind.residual_variant() {
                Some(v) => {
                    let path = or_default(&residual, layout.residual(v, delta, seed));
                    require(&path)?;
                    Some(PerpPolicy::load(&path)?)
                }
                None => None,
            };
            let bundle = match kind {
                PolicyKind::Idm => PolicyBundle::idm(),
                PolicyKind::Osl => PolicyBundle::osl(osl),
                PolicyKind::Pcp => PolicyBundle::pcp(pcp_policy.as_ref().expect("loaded")),
                _ => PolicyBundle::residual(
                    pcp_policy.as_ref().expect("loaded"),
                    dti_model.as_ref(),
                    res_policy.as_ref().expect("loaded"),
                ),
            };
            let traces = traces.or_else(|| cfg.traces_path().map(Path::to_path_buf));
            let (report, recs) = evaluate_with_traces(
                &bundle,
                &cfg.env,
                &cfg.idm,
                &cfg.eval,
                delta,
                cell_seed(seed, delta),
                traces.is_some(),
            )?;
            if let Some(path) = traces {
                write_traces(&path, &recs)?;
            }
            println!(
                "evaluate: policy={} delta={delta} episodes={} avg_speed={} avg_std={} collisions={} hold_violations={}",
                kind.name(),
                report.episodes.len(),
                fmt_opt(report.avg_speed),
                fmt_opt(report.avg_std),
                report.collisions,
                report.hold_violations
            );
        }
        Command::Compare { out } => {
            let mut cfg = cfg;
            if let Some(out) = out {
                cfg.paths.report = out;
            }
            let report = pipeline::compare_stage(&cfg)?;
            if report.rows.is_empty() {
                for p in &report.missing {
                    eprintln!("missing artifact: {}", p.display());
                }
                return Err(PerpError::MissingArtifact(
                    report.missing.first().cloned().unwrap_or_else(|| cfg.paths.artifacts.clone()),
                ));
            }
            for r in &report.summary {
                if r.seed == "mean" {
                    println!(
                        "{:>5} delta={:<3} avg_speed={} avg_std={} collisions/100={:.1}",
                        r.policy,
                        r.delta,
                        fmt_opt(r.avg_speed),
                        fmt_opt(r.avg_std),
                        r.collisions
                    );
                }
            }
            println!(
                "compare: rows={} skipped={} out={}",
                report.rows.len(),
                report.missing.len(),
                cfg.report_path().display()
            );
        }
        Command::Equilibrium { steps } => {
            let gap = equilibrium_gap(&cfg.env);
            let v = optimal_uniform_speed(&cfg.env, &cfg.idm)?;
            let candidates: Vec<f64> = (0..=80).map(|i| (v - 2.0 + 0.05 * i as f64).max(0.0)).collect();
            let (best, _) = grid_search_best_speed(&cfg.env, &cfg.idm, &candidates, steps, seed)?;
            println!(
                "equilibrium: gap_eq={gap} m v_eq={v:.6} m/s grid_best={} m/s",
                fmt_opt(best)
            );
        }
        Command::Pipeline { .. } => {
            let out = pipeline::run_pipeline(&cfg)?;
            for c in &out.cells {
                println!(
                    "cell delta={} seed={}: pcp={} dti_accuracy={} residuals={:?}",
                    c.delta,
                    c.seed,
                    fmt_opt(c.pcp_best_score),
                    fmt_opt(c.dti_accuracy),
                    c.residual_best_scores
                );
            }
            println!("pipeline: report={}", cfg.report_path().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PERP_LOG", "warn")).init();
    let listing = format!(
        "Config keys and defaults (override with --set KEY=VALUE or a --config file; \
         the pipeline starts from a reduced desk-scale budget):\n  {}\n\n\
         Exit codes: 0 success, 2 configuration error, 3 missing artifact, 4 numeric failure.\n\
         Log verbosity: PERP_LOG=info|debug.",
        RunConfig::default().key_listing().join("\n  ")
    );
    let matches = Cli::command()
        .mut_subcommands(|c| c.after_long_help(listing.clone()))
        .after_long_help(listing)
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
