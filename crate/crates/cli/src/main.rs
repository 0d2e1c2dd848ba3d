use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use obsdesign_core::design::{
    even_design, optimize_fim_design, optimize_global_design, CandidateGrid, Constraints, DesignRecord,
};
use obsdesign_core::harness::{run_phi_sweep, run_s3_perturbation, run_scenario, Axis, Scenario};
use obsdesign_core::information::GlobalWeighting;
use obsdesign_core::likelihood::{family_of, fit_mle, FitSettings, Likelihood, NoiseSpec, ScaleMode};
use obsdesign_core::model::{LogisticParams, ParamRanges, TimeGrid};
use obsdesign_core::noise::{synthesize, NoiseModel, Observations};
use obsdesign_core::profile::{prediction_band, profile_all, ParamBox, ProfileSettings};
use obsdesign_core::seed::rng_from_seed;
use obsdesign_core::sobol::{total_effect_indices, Sampling, SobolProfile};
use obsdesign_core::{Error, Result};

#[derive(Parser)]
#[command(name = "obsdesign", version, about = "Observation-time design for logistic growth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observations as `time,value` CSV.
    Simulate {
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        times: TimesArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood fit of observations; prints JSON.
    Fit {
        /// `time,value` CSV.
        data: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, value_enum, default_value_t = Scale::Fixed)]
        scale: Scale,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Profile likelihoods and 95% intervals for all parameters.
    Profile {
        data: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, value_enum, default_value_t = Scale::Fixed)]
        scale: Scale,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also compute a prediction band from this many samples.
        #[arg(long)]
        band: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Fisher-information optimal design; prints a JSON record.
    DesignFim {
        #[arg(long)]
        n_s: usize,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        constraints: ConstraintArgs,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the times as one CSV line instead of JSON.
        #[arg(long)]
        csv: bool,
    },
    /// Global (Sobol') information design on the candidate grid.
    DesignGlobal {
        #[arg(long)]
        n_s: usize,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        constraints: ConstraintArgs,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, default_value_t = 8192)]
        n_base: usize,
        /// Reuse indices written by `sobol-cache`.
        #[arg(long)]
        sobol_cache: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Weighting::Covariance)]
        weighting: Weighting,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Compute total-effect Sobol' indices on the candidate grid and cache them.
    SobolCache {
        #[command(flatten)]
        constraints: ConstraintArgs,
        #[arg(long, default_value_t = 8192)]
        n_base: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sobol_cache.txt")]
        out: PathBuf,
    },
    /// Scenario files.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Run a scenario TOML and write its tables.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the replicate count.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Iid,
    Ou,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Fixed,
    Profiled,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Covariance,
    Correlation,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, value_enum, default_value_t = Kind::Iid)]
    noise: Kind,
    /// IID variance, or OU stationary variance.
    #[arg(long, default_value_t = 9.0)]
    variance: f64,
    #[arg(long, default_value_t = 0.02)]
    phi: f64,
    /// OU squared volatility; overrides --variance.
    #[arg(long)]
    volatility_sq: Option<f64>,
}

impl NoiseArgs {
    fn model(&self) -> Result<NoiseModel> {
        match (self.noise, self.volatility_sq) {
            (Kind::Iid, _) => NoiseModel::iid(self.variance),
            (Kind::Ou, Some(s)) => NoiseModel::ou(self.phi, s),
            (Kind::Ou, None) => NoiseModel::ou_stationary(self.phi, self.variance),
        }
    }
}

#[derive(Args)]
struct TimesArgs {
    /// Comma-separated observation times.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_s")]
    times: Option<Vec<f64>>,
    /// Number of evenly spaced times on [0, 80].
    #[arg(long, default_value_t = 11)]
    n_s: usize,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.2)]
    r: f64,
    #[arg(long = "K", default_value_t = 50.0)]
    k: f64,
    #[arg(long = "C0", default_value_t = 4.5)]
    c0: f64,
}

#[derive(Args)]
struct ConstraintArgs {
    #[arg(long, default_value_t = 0.0)]
    t_min: f64,
    #[arg(long, default_value_t = 80.0)]
    t_final: f64,
    #[arg(long, default_value_t = 2.0)]
    min_spacing: f64,
}

impl ConstraintArgs {
    fn get(&self) -> Constraints {
        Constraints {
            t_min: self.t_min,
            t_final: self.t_final,
            min_spacing: self.min_spacing,
        }
    }
}

fn spec_for(noise: &NoiseModel, scale: Scale) -> NoiseSpec {
    match scale {
        Scale::Fixed => NoiseSpec::known(noise),
        Scale::Profiled => NoiseSpec {
            family: family_of(noise),
            scale: ScaleMode::Profiled,
        },
    }
}

fn read_obs(path: &Path) -> Result<Observations> {
    Observations::from_csv(&std::fs::read_to_string(path)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_profile(cache: &Option<PathBuf>, grid: &CandidateGrid, n_base: usize, seed: u64) -> Result<SobolProfile> {
    match cache {
        Some(p) => SobolProfile::from_cache_str(&std::fs::read_to_string(p)?),
        None => total_effect_indices(&ParamRanges::PAPER, &grid.to_time_grid(), n_base, Sampling::default(), seed),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            noise,
            times,
            params,
            seed,
            out,
        } => {
            let p = LogisticParams::new(params.r, params.k, params.c0)?;
            let grid = match times.times {
                Some(t) => TimeGrid::new(t)?,
                None => even_design(times.n_s, &Constraints::default())?.to_grid(),
            };
            let obs = synthesize(&p, &noise.model()?, &grid, &mut rng_from_seed(seed));
            emit(&out, &obs.to_csv())
        }
        Command::Fit {
            data,
            noise,
            scale,
            restarts,
            seed,
        } => {
            let lik = Likelihood::new(read_obs(&data)?, spec_for(&noise.model()?, scale))?;
            let settings = FitSettings {
                restarts,
                ..FitSettings::default()
            };
            let fit = fit_mle(&lik, &settings, &mut rng_from_seed(seed))?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(())
        }
        Command::Profile {
            data,
            noise,
            scale,
            restarts,
            seed,
            band,
            out_dir,
        } => {
            let lik = Likelihood::new(read_obs(&data)?, spec_for(&noise.model()?, scale))?;
            let settings = FitSettings {
                restarts,
                ..FitSettings::default()
            };
            let mut rng = rng_from_seed(seed);
            let fit = fit_mle(&lik, &settings, &mut rng)?;
            let (fit, profiles) = profile_all(&lik, &fit, &ProfileSettings::default(), &mut rng)?;
            std::fs::create_dir_all(&out_dir)?;
            for p in &profiles {
                std::fs::write(out_dir.join(format!("profile_{}.csv", p.param)), p.to_csv())?;
            }
            let cis: Vec<_> = profiles.iter().map(|p| p.ci).collect();
            std::fs::write(out_dir.join("intervals.json"), serde_json::to_string_pretty(&cis)? + "\n")?;
            if let Some(m) = band {
                let b = prediction_band(&lik, &fit, &ParamBox::from_profiles(&profiles)?, m, &mut rng)?;
                std::fs::write(out_dir.join("band.csv"), b.to_csv())?;
            }
            for ci in &cis {
                let fmt = |v: f64, open: bool| if open { format!("open ({v:.4})") } else { format!("{v:.4}") };
                println!(
                    "{} mle {:.4} ci [{}, {}]",
                    ci.param,
                    fit.mle.get(ci.param),
                    fmt(ci.lower, ci.open_lower),
                    fmt(ci.upper, ci.open_upper)
                );
            }
            Ok(())
        }
        Command::DesignFim {
            n_s,
            noise,
            params,
            constraints,
            restarts,
            seed,
            csv,
        } => {
            let p = LogisticParams::new(params.r, params.k, params.c0)?;
            let model = noise.model()?;
            let res = optimize_fim_design(&p, &model, n_s, &constraints.get(), restarts, seed)?;
            if csv {
                println!("{}", res.design.to_csv_line());
            } else {
                println!("{}", serde_json::to_string_pretty(&DesignRecord::new("fim", model, &res, seed))?);
            }
            Ok(())
        }
        Command::DesignGlobal {
            n_s,
            noise,
            constraints,
            budget,
            n_base,
            sobol_cache,
            weighting,
            seed,
            csv,
        } => {
            let c = constraints.get();
            let grid = CandidateGrid::new(&c)?;
            let profile = load_profile(&sobol_cache, &grid, n_base, seed)?;
            let model = noise.model()?;
            let w = match weighting {
                Weighting::Covariance => GlobalWeighting::Covariance,
                Weighting::Correlation => GlobalWeighting::Correlation,
            };
            let res = optimize_global_design(&profile, &model, n_s, &grid, &c, w, budget, seed)?;
            if csv {
                println!("{}", res.design.to_csv_line());
            } else {
                println!("{}", serde_json::to_string_pretty(&DesignRecord::new("global", model, &res, seed))?);
            }
            Ok(())
        }
        Command::SobolCache {
            constraints,
            n_base,
            seed,
            out,
        } => {
            let grid = CandidateGrid::new(&constraints.get())?;
            let profile = load_profile(&None, &grid, n_base, seed)?;
            std::fs::write(&out, profile.to_cache_string())?;
            eprintln!("wrote {} ({} times)", out.display(), grid.len());
            Ok(())
        }
        Command::Scenario {
            action:
                ScenarioAction::Run {
                    file,
                    out_dir,
                    replicates,
                    seed,
                },
        } => {
            let mut s = Scenario::from_file(&file)?;
            if let Some(n) = replicates {
                s.replicates = n;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s.validate()?;
            let out = match s.sweep.axis {
                Axis::Phi => run_phi_sweep(&s)?,
                Axis::Designs => run_s3_perturbation(&s)?,
                _ => run_scenario(&s)?,
            };
            for path in out.write(&out_dir)? {
                eprintln!("wrote {}", path.display());
            }
            print!("{}", out.summary.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
