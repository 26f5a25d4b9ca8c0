//! Figure presets. Each preset is a list of labelled runs; grids of swept
//! values and shaping magnitudes are defaults, not fixed facts.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::Command;

pub const PRESET_NAMES: [&str; 4] = ["fig1", "fig2", "fig3", "fig4"];

#[derive(Clone, Debug, Serialize)]
pub struct PresetRun {
    pub label: String,
    pub command: Command,
    pub config: ExperimentConfig,
}

impl PresetRun {
    pub fn is_sweep(&self) -> bool {
        self.config.sweep.is_some()
    }
}

const GRID: &str = r#"
[ensemble]
kind = "gridworld"
side = 17
bandwidth = 0.75
horizon = 50
estimation_trajectories = 5000
"#;

const POWERLAW: &str = r#"
[ensemble]
kind = "powerlaw"
n = 300
horizon = 50
a = 1.2
b = 1.1
"#;

fn run(label: &str, command: Command, body: &str, overrides: &[String]) -> Result<PresetRun, CliError> {
    let text = format!("name = \"{label}\"\n{body}");
    Ok(PresetRun { label: label.into(), command, config: ExperimentConfig::parse(&text, overrides)? })
}

fn fig1(o: &[String]) -> Result<Vec<PresetRun>, CliError> {
    let base = format!(
        "variants = [\"sim\", \"surrogate\", \"dmft\"]\n{GRID}\n[learner]\ngamma = 0.9\nbatch = 30\neta0 = 10.0\nn_steps = 200\nseeds = 20\n"
    );
    let small_batch = base.replace("batch = 30", "batch = 3");
    let sweep = "\n[sweep]\nparameter = \"ensemble.bandwidth\"\nvalues = [0.5, 0.75, 1.0, 1.5]\n";
    Ok(vec![
        run("fig1_b30", Command::Compare, &base, o)?,
        run("fig1_b3", Command::Compare, &small_batch, o)?,
        run("fig1_bandwidth_b30", Command::Compare, &format!("{base}{sweep}"), o)?,
        run("fig1_bandwidth_b3", Command::Compare, &format!("{small_batch}{sweep}"), o)?,
    ])
}

fn fig2(o: &[String]) -> Result<Vec<PresetRun>, CliError> {
    let learner = "[learner]\ngamma = 0.9\nbatch = 20\neta0 = 10.0\nn_steps = 150\nseeds = 10\n";
    let body = |reward: &str| format!("variants = [\"sim\", \"dmft\"]\n{GRID}\n{reward}\n{learner}");
    let sparse = body("[ensemble.reward]\nshape = \"sparse\"\ngoal = [12, 12]\n");
    let dense = body("[ensemble.reward]\nshape = \"gaussian\"\ncenter = [12.0, 12.0]\nwidth = 4.0\n");
    Ok(vec![
        run("fig2_sparse_spectral", Command::Spectral, &sparse, o)?,
        run("fig2_dense_spectral", Command::Spectral, &dense, o)?,
        run("fig2_sparse", Command::Compare, &sparse, o)?,
        run("fig2_dense", Command::Compare, &dense, o)?,
    ])
}

fn fig3(o: &[String]) -> Result<Vec<PresetRun>, CliError> {
    let base = format!(
        "variants = [\"sim\", \"dmft\"]\n{POWERLAW}\n[learner]\ngamma = 0.9\nbatch = 10\neta0 = 0.5\nn_steps = 1000\nseeds = 5\n"
    );
    let sweep = |param: &str, values: &str| format!("{base}\n[sweep]\nparameter = \"{param}\"\nvalues = {values}\n");
    Ok(vec![
        run("fig3_baseline", Command::Compare, &base, o)?,
        run("fig3_batch", Command::Compare, &sweep("learner.batch", "[5, 10, 20, 40]"), o)?,
        run("fig3_gamma", Command::Compare, &sweep("learner.gamma", "[0.5, 0.7, 0.8, 0.9]"), o)?,
        run("fig3_eta", Command::Compare, &sweep("learner.eta0", "[0.1, 0.2, 0.3, 0.5]"), o)?,
        run(
            "fig3_chi",
            Command::Compare,
            &sweep("learner.chi", "[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]"),
            o,
        )?,
        run("fig3_plateau_batch", Command::FixedPoint, &sweep("learner.batch", "[5, 10, 20, 40]"), o)?,
        run("fig3_plateau_gamma", Command::FixedPoint, &sweep("learner.gamma", "[0.5, 0.6, 0.7, 0.8, 0.9]"), o)?,
        run("fig3_plateau_eta", Command::FixedPoint, &sweep("learner.eta0", "[0.01, 0.02, 0.04, 0.08]"), o)?,
    ])
}

fn fig4(o: &[String]) -> Result<Vec<PresetRun>, CliError> {
    let base = |shaping: &str| {
        format!(
            "variants = [\"sim\", \"dmft\"]\n{POWERLAW}\n[learner]\ngamma = 0.9\nbatch = 10\neta0 = 0.5\nn_steps = 1000\nseeds = 5\n\n[learner.shaping]\n{shaping}\n"
        )
    };
    let scale = format!(
        "{}\n[sweep]\nparameter = \"learner.shaping.beta\"\nvalues = [-0.5, 0.0, 0.5, 1.0, 2.0]\n",
        base("mode = \"scale\"\nbeta = 0.0")
    );
    let rotate = format!(
        "{}\n[sweep]\nparameter = \"learner.shaping.theta\"\nvalues = [0.0, 0.25, 0.5, 0.75, 1.0]\n",
        base("mode = \"rotate\"\ntheta = 0.0")
    );
    Ok(vec![run("fig4_scale", Command::Compare, &scale, o)?, run("fig4_rotate", Command::Compare, &rotate, o)?])
}

/// Runs making up a figure preset, with `overrides` applied to each.
pub fn figure_preset(name: &str, overrides: &[String]) -> Result<Vec<PresetRun>, CliError> {
    match name {
        "fig1" => fig1(overrides),
        "fig2" => fig2(overrides),
        "fig3" => fig3(overrides),
        "fig4" => fig4(overrides),
        other => {
            Err(CliError::config(format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EnsembleSpec, ShapingSpec};

    #[test]
    fn all_presets_parse() {
        for name in PRESET_NAMES {
            let runs = figure_preset(name, &[]).unwrap();
            assert!(!runs.is_empty());
            for r in &runs {
                assert_eq!(r.config.name, r.label);
            }
        }
        assert!(figure_preset("fig9", &[]).is_err());
    }

    #[test]
    fn shaping_sweeps_target_their_mode() {
        let runs = figure_preset("fig4", &[]).unwrap();
        assert!(matches!(runs[0].config.learner.shaping, ShapingSpec::Scale { .. }));
        assert!(matches!(runs[1].config.learner.shaping, ShapingSpec::Rotate { .. }));
        for r in &runs {
            let s = r.config.sweep.as_ref().unwrap();
            for v in &s.values {
                r.config.with_value(&s.parameter, v.clone()).unwrap();
            }
        }
    }

    #[test]
    fn grid_presets_share_the_grid() {
        for r in figure_preset("fig2", &[]).unwrap() {
            assert!(matches!(r.config.ensemble, EnsembleSpec::Gridworld { side: 17, .. }));
        }
    }
}
