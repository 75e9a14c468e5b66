use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use pathctl_cli::config::{CliLayer, Subcommand};
use pathctl_cli::{presets, Status};

fn about(sub: Subcommand) -> &'static str {
    match sub {
        Subcommand::GaugeSuite => "Two-sided norm bound and subadditivity of the gauge over random path pairs",
        Subcommand::ItoCheck => "Functional Itô residual along Euler paths at successively halved dt",
        Subcommand::BpDemo => "Borwein–Preiss construction over a random candidate set, verified by exhaustive scan",
        Subcommand::Value => "Tree value functional at a start path, against the best open-loop control",
        Subcommand::Dpp => "Dynamic programming identity V = sup G[V] at one intermediate time",
        Subcommand::MarkovCompare => "Tree value against an explicit finite-difference HJB solver on a refinement ladder",
        Subcommand::ViscosityProbe => "Equation residual and subsolution touch test for a classical solution",
        Subcommand::BshjbCheck => "Backward stochastic HJB value against the reduced BSDE on random noise-only instances",
        Subcommand::ComparisonDemo => "Doubled-variable penalty at BP maximizers of the comparison functional along a β ladder",
    }
}

fn cli() -> Command {
    let common_args = [
        Arg::new("config").long("config").value_name("FILE").required(true).value_parser(value_parser!(PathBuf)).help("TOML config; must set `subcommand`"),
        Arg::new("seed").long("seed").value_name("N").value_parser(value_parser!(u64)).help("Replaces the config seed"),
        Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf)).help("Replaces the config output directory"),
        Arg::new("override")
            .long("override")
            .value_name("KEY=VALUE")
            .action(ArgAction::Append)
            .help("Set a dotted config key, e.g. grid.steps=6; applied after the file"),
    ];
    let subcommands = Subcommand::ALL.map(|sub| {
        Command::new(sub.name())
            .about(about(sub))
            .args(common_args.clone())
            .after_help(format!("Preset (layered over the shared defaults):\n{}", presets::text(sub)))
    });
    Command::new("pathctl")
        .about("Path-dependent stochastic control experiments")
        .long_about(
            "Path-dependent stochastic control experiments.\n\n\
             Every run reads a TOML config whose `subcommand` key names the experiment. The file is \
             layered over the shared defaults and the subcommand preset (see `pathctl <subcommand> --help`), \
             then --override values apply. Results go to <out>/<subcommand>.csv and <out>/<subcommand>.summary.txt.\n\n\
             Exit status: 0 success, 1 output error, 2 config error, 3 cap or contract violation, 4 property failure.",
        )
        .after_long_help(format!("Shared defaults:\n{}", presets::common_text()))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(subcommands)
}

fn layer(sub: Subcommand, m: &ArgMatches) -> CliLayer {
    CliLayer {
        subcommand: Some(sub),
        seed: m.get_one::<u64>("seed").copied(),
        out: m.get_one::<PathBuf>("out").cloned(),
        overrides: m.get_many::<String>("override").map(|v| v.cloned().collect()).unwrap_or_default(),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, m) = matches.subcommand().expect("a subcommand is required");
    let sub: Subcommand = name.parse().expect("clap only accepts known subcommands");
    let path = m.get_one::<PathBuf>("config").expect("--config is required");
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(Status::Config as u8);
        }
    };
    match pathctl_cli::run(&text, &layer(sub, m)) {
        Ok(outcome) => {
            println!("wrote {} and {}", outcome.csv.display(), outcome.summary.display());
            for f in &outcome.failures {
                eprintln!("property failure: {f}");
            }
            ExitCode::from(outcome.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
