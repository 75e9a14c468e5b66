//! Built-in base configurations, one per subcommand, and the named
//! coefficient sets a config may refer to.

use toml::Table;

use crate::config::Subcommand;

const COMMON: &str = r#"
seed = 0
out = "out"

[grid]
steps = 4
horizon = 1.0
dim = 1
noise_dim = 1

[coefficients]
preset = "lq"

[gauge]
m = 3
big_m = 3.0

[bp]
eps = 0.1
delta_base = 1.0
selection = "argmax"

[caps]
node_cap = 262144
"#;

const GAUGE_SUITE: &str = r#"
[grid]
steps = 16
dim = 2

[run]
pairs = 1000
ms = [1, 2, 3]
big_ms = [3.0, 5.0]
tolerance = 1e-12
"#;

const ITO_CHECK: &str = r#"
[grid]
steps = 16

[coefficients]
preset = "heat"

[run]
functional = "x^2"
paths = 10000
levels = 3
start = [0.0]
h_vertical = 1e-4
richardson = false
"#;

const BP_DEMO: &str = r#"
[grid]
steps = 8

[gauge]
m = 2
big_m = 4.0

[run]
candidates = 200
objective = "sin(2*x) - m^2 + t"
scale = 1.0
"#;

const VALUE: &str = r#"
[run]
start = [0.3]
start_index = 0
enumerate_open_loop = true
"#;

const DPP: &str = r#"
[run]
start = [0.3]
start_index = 0
delta = 2
tolerance = 1e-10
"#;

const MARKOV_COMPARE: &str = r#"
[coefficients]
preset = "heat"

[run]
ladder = [[4, 0.25], [8, 0.125], [16, 0.0625]]
endpoint = 0.3
half_width = 6.0
safety = 0.9
history_samples = 64
"#;

const VISCOSITY_PROBE: &str = r#"
[grid]
steps = 8

[coefficients]
preset = "heat"

[run]
samples = 100
cloud = 1000
tolerance = 1e-8

[run.solution]
value = "x^2 + 1 - t"
dt = "-1"
dx = "2*x"
dxx = "2"
"#;

const BSHJB_CHECK: &str = r#"
[run]
instances = 20
tolerance = 1e-10
"#;

const COMPARISON_DEMO: &str = r#"
[run]
pairs = 500
betas = [10.0, 100.0, 1000.0]
psi_eps = 0.05
nu = 2.0
"#;

/// Base table for `sub`: the shared defaults with the subcommand's own
/// settings layered on top.
pub fn table(sub: Subcommand) -> Table {
    let mut base: Table = COMMON.parse().expect("built-in preset is valid TOML");
    let own: Table = text(sub).parse().expect("built-in preset is valid TOML");
    // preset tables merge key by key, including [coefficients]
    for (key, value) in own {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => b.extend(t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
    base.insert("subcommand".into(), toml::Value::String(sub.name().into()));
    base
}

/// The subcommand's own preset text, shown in `--help`.
pub fn text(sub: Subcommand) -> &'static str {
    match sub {
        Subcommand::GaugeSuite => GAUGE_SUITE,
        Subcommand::ItoCheck => ITO_CHECK,
        Subcommand::BpDemo => BP_DEMO,
        Subcommand::Value => VALUE,
        Subcommand::Dpp => DPP,
        Subcommand::MarkovCompare => MARKOV_COMPARE,
        Subcommand::ViscosityProbe => VISCOSITY_PROBE,
        Subcommand::BshjbCheck => BSHJB_CHECK,
        Subcommand::ComparisonDemo => COMPARISON_DEMO,
    }
}

/// Shared defaults, shown once in the top-level help.
pub fn common_text() -> &'static str {
    COMMON
}

/// A named coefficient set in inline form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientPreset {
    pub name: &'static str,
    pub controls: &'static [f64],
    pub drift: &'static str,
    pub diffusion: &'static str,
    pub generator: &'static str,
    pub terminal: &'static str,
}

pub const COEFFICIENT_PRESETS: [CoefficientPreset; 3] = [
    CoefficientPreset {
        name: "lq",
        controls: &[0.0, 0.5, 1.0],
        drift: "u",
        diffusion: "1",
        generator: "-u^2",
        terminal: "x",
    },
    CoefficientPreset { name: "heat", controls: &[0.0], drift: "0", diffusion: "1", generator: "0", terminal: "x^2" },
    CoefficientPreset {
        name: "path-dependent",
        controls: &[-0.5, 0.5],
        drift: "u + 0.3*tanh(m)",
        diffusion: "0.8 + 0.2*sin(x + u)",
        generator: "0.3*sin(y) + 0.2*tanh(z) - u^2 + 0.1*cos(int)",
        terminal: "m + 0.5*sin(x)",
    },
];

pub fn coefficient_preset(name: &str) -> Option<&'static CoefficientPreset> {
    COEFFICIENT_PRESETS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for sub in Subcommand::ALL {
            let t = table(sub);
            assert_eq!(t["subcommand"].as_str(), Some(sub.name()));
            assert!(t.contains_key("run"), "{sub}");
        }
    }
}
