//! Command-line front end for the exclusion-process experiment pipelines.
//!
//! Subcommands:
//!
//! - `ssep run <config.json>` — run the experiment the config describes,
//!   write its rate-table CSV and JSON summary, and print the fitted decay
//!   exponents.
//! - `ssep verify-identity <config.json>` — run the exact two-sided
//!   correlation-identity sweep with its Monte Carlo agreement legs.
//! - `ssep kernel-check <config.json>` — validate the config's kernel and
//!   print its derived constants.
//! - `ssep fit <table.csv>` — fit a decay exponent to an existing rate
//!   table.
//!
//! Exit codes: 0 on success, 2 when a requested acceptance check fails
//! (a fitted slope misses the config's `band`, or the identity sweep does
//! not certify), 3 on precondition or environmental errors.
//!
//! All output — files and stdout — is a pure function of `(config, seed)`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ssep::experiments::{self, ExperimentKind, ExperimentSpec, RateTable};
use ssep::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ssep",
    version,
    about = "Exclusion-process simulators, exact oracles, and decay-rate experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config; write its rate table(s) and JSON summary.
    Run {
        /// Path to the experiment JSON.
        config: PathBuf,
    },
    /// Run the exact identity sweep with Monte Carlo agreement legs.
    VerifyIdentity {
        /// Path to a `basic_identity_sweep` experiment JSON.
        config: PathBuf,
    },
    /// Validate the config's kernel and print its derived constants.
    KernelCheck {
        /// Path to any JSON object with a `kernel` field.
        config: PathBuf,
    },
    /// Fit a decay exponent to an existing `t,value,stderr` table.
    Fit {
        /// Path to the CSV rate table.
        table: PathBuf,
    },
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: ExperimentSpec = serde_json::from_str(&text)?;
    Ok(spec)
}

/// Default output next to the config: `<stem>_rates.csv` (the `_rates`
/// suffix keeps the JSON summary from landing on the config itself).
fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    config.with_file_name(format!("{stem}_rates.csv"))
}

/// Refuse output paths whose CSV or JSON summary would clobber the config.
fn guard_overwrite(config: &Path, out: &Path) -> Result<()> {
    let cfg = std::path::absolute(config)?;
    for candidate in [out.to_path_buf(), out.with_extension("json")] {
        if std::path::absolute(&candidate)? == cfg {
            return Err(Error::InvalidConfig(format!(
                "output {} would overwrite the config; choose a different \"out\"",
                candidate.display()
            )));
        }
    }
    Ok(())
}

fn print_series(outcome: &experiments::RunOutcome) {
    for s in &outcome.series {
        match (&s.fit, &s.fit_error) {
            (Some(f), _) => println!(
                "{}: slope {:.6} +- {:.6} over t in [{}, {}] ({} points)",
                s.name, f.slope, f.half_width, f.window.0, f.window.1, f.points
            ),
            (None, Some(e)) => println!("{}: no fit ({e})", s.name),
            (None, None) => {}
        }
        if let Some(aux) = s.aux_slope {
            println!("{}: log-correction exponent {:.6}", s.name, aux);
        }
        if let Some(regime) = &s.regime {
            println!("{}: {regime}", s.name);
        }
    }
}

fn print_identity(report: &experiments::IdentitySweepReport) {
    println!("identity sweep: {} exact cases, max gap {:e}", report.cases.len(), report.max_gap);
    if let Some(worst) = report.cases.iter().max_by(|a, b| a.gap.total_cmp(&b.gap)) {
        println!("worst case: {} (gap {:e}, certified budget {:e})", worst.label, worst.gap, worst.budget);
    }
    for leg in &report.legs {
        println!(
            "monte carlo {}: {:e} +- {:e} vs exact {:e} (z = {:.3})",
            leg.name, leg.value, leg.stderr, leg.exact, leg.z
        );
    }
}

fn verdict(pass: bool, what: &str) -> ExitCode {
    if pass {
        println!("{what}: PASS");
        ExitCode::SUCCESS
    } else {
        println!("{what}: FAIL");
        ExitCode::from(2)
    }
}

fn cmd_run(config: &Path) -> Result<ExitCode> {
    let spec = load_spec(config)?;
    let out = spec.out.as_ref().map_or_else(|| default_out(config), PathBuf::from);
    guard_overwrite(config, &out)?;
    let outcome = experiments::run(&spec)?;
    let written = experiments::write_outputs(&spec, &outcome, &out)?;
    print_series(&outcome);
    if let Some(report) = &outcome.identity {
        print_identity(report);
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(match outcome.band_pass {
        Some(pass) => verdict(pass, "acceptance check"),
        None => ExitCode::SUCCESS,
    })
}

fn cmd_verify_identity(config: &Path) -> Result<ExitCode> {
    let spec = load_spec(config)?;
    if spec.kind != ExperimentKind::BasicIdentitySweep {
        return Err(Error::InvalidConfig(format!(
            "verify-identity needs kind \"basic_identity_sweep\", got \"{}\"",
            spec.kind.as_str()
        )));
    }
    if let Some(out) = &spec.out {
        guard_overwrite(config, Path::new(out))?;
    }
    let outcome = experiments::run(&spec)?;
    let report = outcome.identity.as_ref().expect("sweep outcome carries its report");
    print_identity(report);
    if let Some(out) = &spec.out {
        for path in experiments::write_outputs(&spec, &outcome, Path::new(out))? {
            println!("wrote {}", path.display());
        }
    }
    Ok(verdict(report.pass, "identity check"))
}

fn cmd_kernel_check(config: &Path) -> Result<ExitCode> {
    /// Lenient view of a config: only the kernel matters here.
    #[derive(serde::Deserialize)]
    struct KernelOnly {
        kernel: experiments::KernelSpec,
    }
    let text = std::fs::read_to_string(config)?;
    let parsed: KernelOnly = serde_json::from_str(&text)?;
    let kernel = parsed.kernel.build()?;
    println!(
        "kernel ok: d = {}, support entries = {}, radius = {}, second moment = {:e}",
        kernel.d(),
        kernel.support().len(),
        kernel.radius(),
        kernel.second_moment()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(table: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(table)?;
    let parsed = RateTable::from_csv(&text)?;
    let fit = experiments::fit_rate(&parsed)?;
    println!("slope {:e} +- {:e}", fit.slope, fit.half_width);
    println!(
        "intercept {:e}, window [{}, {}], {} points",
        fit.intercept, fit.window.0, fit.window.1, fit.points
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { config } => cmd_run(config),
        Cmd::VerifyIdentity { config } => cmd_verify_identity(config),
        Cmd::KernelCheck { config } => cmd_kernel_check(config),
        Cmd::Fit { table } => cmd_fit(table),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(3))
        }
    }
}
