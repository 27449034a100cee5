use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kam_core::approx::{certify_diophantine, max_certification_order, ApproxFn, FrequencyDomain};
use kam_core::config::{OmegaPreset, OmegaSpec, RunConfig};
use kam_core::pipeline::{run_pipeline, step_once, ConjugacyArtifact, PipelineOutput};

#[derive(Parser)]
#[command(name = "kam", version, about = "Spectral KAM iteration for perturbed rotations on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full run: certify, iterate, verify, and write steps.csv, report.json, config.json, conjugacy.json.
    Run(RunArgs),
    /// Scan small divisors and print the admissible alpha against the order K.
    Certify(CertifyArgs),
    /// Tabulate the tail integral of log Lambda(t)/t^2 over tau.
    IntegralTable(IntegralArgs),
    /// Execute one step at nu = 0 and print its ledger.
    StepOnce(ConfigArgs),
    /// Re-run verification on a conjugacy.json artifact.
    VerifyOnly(VerifyArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of a random perturbation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CertifyArgs {
    /// `golden2` or a comma-separated frequency vector.
    #[arg(long, default_value = "golden2")]
    omega: String,
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long, short = 'k', default_value_t = 50)]
    k: u32,
    /// Print every order instead of only those where the minimum changes.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct IntegralArgs {
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 100.0, 1000.0])]
    tau: Vec<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    conjugacy: PathBuf,
    /// Writes the verification block here in addition to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn parse_omega(s: &str) -> Result<Vec<f64>> {
    if s == "golden2" {
        return Ok(OmegaSpec::Preset(OmegaPreset::Golden2).resolve());
    }
    s.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("bad frequency component {x:?}"))).collect()
}

fn write_outputs(dir: &Path, out: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv::Writer::from_path(dir.join("steps.csv"))?;
    if out.rows.is_empty() {
        w.write_record(["nu", "s_nu", "sigma_nu", "tau_nu", "Lambda_nu", "eps_budget", "eps_measured", "p0_norm", "F_norm", "tail_charge", "q_eff"])?;
    }
    for row in &out.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(dir.join("config.json"), out.report.config.to_json_pretty() + "\n")?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    let conj = dir.join("conjugacy.json");
    match &out.artifact {
        Some(a) => fs::write(&conj, serde_json::to_string_pretty(a)? + "\n")?,
        None if conj.exists() => fs::remove_file(&conj)?,
        None => {}
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = load_config(&args.input)?;
    let out = run_pipeline(&cfg)?;
    write_outputs(&args.out, &out)?;
    if !args.quiet {
        let st = &out.report.status;
        println!("status: {} (exit {})", st.outcome, st.exit_code);
        if let Some(m) = &st.margin {
            println!("failing condition: {m}");
        }
        if let Some(m) = &st.message {
            println!("{m}");
        }
        if let Some(r) = &out.report.run {
            println!("steps: {}, final eps (original units): {:e}", r.steps, r.eps_final_original);
        }
        if let Some(v) = &out.report.verification {
            println!("defect_max: {:e}, orbit_dev: {:e}", v.defect_max, v.orbit_dev);
        }
        println!("wrote {}", args.out.display());
    }
    Ok(out.exit_code())
}

fn cmd_certify(args: &CertifyArgs) -> Result<i32> {
    let omega = parse_omega(&args.omega)?;
    let delta = ApproxFn::power(args.rho)?;
    let cap = max_certification_order(omega.len());
    if args.k > cap {
        bail!("K = {} exceeds the scan limit {cap} for n = {}", args.k, omega.len());
    }
    let fd = FrequencyDomain::new(omega, 1.0, f64::MIN_POSITIVE)?;
    println!("{:>5}  {:>24}  {:>14}  {:>24}  {:>14}", "K", "min |<k,w>|", "at", "alpha_max", "at");
    let mut last = None;
    for k in 1..=args.k {
        let rep = certify_diophantine(&fd, &delta, k)?;
        let key = (rep.min_divisor, rep.alpha_max);
        if args.all || last != Some(key) || k == args.k {
            println!(
                "{:>5}  {:>24.17e}  {:>14}  {:>24.17e}  {:>14}",
                k,
                rep.min_divisor,
                rep.min_divisor_at.to_string(),
                rep.alpha_max,
                rep.alpha_max_at.to_string()
            );
        }
        last = Some(key);
    }
    Ok(0)
}

fn cmd_integral_table(args: &IntegralArgs) -> Result<i32> {
    let delta = ApproxFn::power(args.rho)?;
    println!("{:>12}  {:>24}  {:>10}", "tau", "integral", "error");
    for &tau in &args.tau {
        let t = delta.russmann_integral(tau)?;
        println!("{:>12}  {:>24.17e}  {:>10.2e}", tau, t.value, t.error_bound);
    }
    Ok(0)
}

fn cmd_step_once(args: &ConfigArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let s = step_once(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(if s.error.is_some() { 3 } else { 0 })
}

fn cmd_verify_only(args: &VerifyArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.conjugacy).with_context(|| format!("reading {}", args.conjugacy.display()))?;
    let artifact: ConjugacyArtifact = serde_json::from_str(&text)?;
    let v = artifact.verify()?;
    let json = serde_json::to_string_pretty(&v)?;
    if let Some(p) = &args.out {
        fs::write(p, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Certify(a) => cmd_certify(a),
        Command::IntegralTable(a) => cmd_integral_table(a),
        Command::StepOnce(a) => cmd_step_once(a),
        Command::VerifyOnly(a) => cmd_verify_only(a),
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
