//! Plain-text summary tables printed after a run.

use loadshare::compressor::{ModelOrder, STATION_SIZE};
use loadshare::sim::{Mode, RunMetrics, SweepCase, TruthMapKind, PROBE_FLOWS};

/// Comparison table across operating modes: total energy, excess over the
/// benchmark, and demand tracking.
pub fn mode_summary(runs: &[(Mode, RunMetrics)]) -> String {
    let nlp_energy = runs
        .iter()
        .find(|(mode, _)| *mode == Mode::NlpBenchmark)
        .map(|(_, m)| m.integrated_power_j);
    let mut out = String::new();
    out.push_str("\nscenario       energy_mwh   excess_vs_nlp   mae_demand_kg_s\n");
    for (mode, metrics) in runs {
        let tag = match mode {
            Mode::NlpBenchmark => "nlp",
            Mode::OfoPerfect => "ofo-perfect",
            Mode::OfoMismatchNoAdapt => "ofo-mismatch",
            Mode::OfoMismatchAdapt => "ofo-adapt",
        };
        let energy_mwh = metrics.integrated_power_j / 3.6e9;
        let excess = match nlp_energy {
            Some(base) if *mode != Mode::NlpBenchmark => {
                format!("{:+.3}%", 100.0 * (metrics.integrated_power_j / base - 1.0))
            }
            Some(_) => "-".to_string(),
            None => "n/a".to_string(),
        };
        out.push_str(&format!(
            "{tag:<14} {energy_mwh:<12.3} {excess:<15} {:.3}\n",
            metrics.mae_demand
        ));
    }
    out
}

/// Per-case learning report: one block per compressor with the prediction
/// accuracy at each probe flow, plus the demand table over all cases.
pub fn sweep_report(cases: &[SweepCase]) -> String {
    let mut out = String::new();
    out.push_str("\nmismatch sweep: GP learning accuracy by compressor and probe flow\n");
    for case in cases {
        out.push_str(&format!("\n[{}]\n", case_label(case)));
        let Some(gp) = &case.metrics.gp else {
            continue;
        };
        out.push_str("compressor  probe_kg_s  true_error   mae      delta_init  delta_fin  visited\n");
        for i in 0..STATION_SIZE {
            for (p, probe) in PROBE_FLOWS.iter().enumerate() {
                out.push_str(&format!(
                    "C{}          {probe:<11} {:<12.3} {:<8.3} {:<11.3} {:<10.3} {}\n",
                    i + 1,
                    gp.true_error[i][p],
                    gp.mae[i][p],
                    gp.delta_init[i][p],
                    gp.delta_fin[i][p],
                    if gp.visited[i][p] { "yes" } else { "no" },
                ));
            }
        }
    }
    out.push_str("\ndemand tracking (mae_demand, kg/s)\n");
    out.push_str("truth            quadratic  linear   constant\n");
    for truth in [TruthMapKind::Polynomial, TruthMapKind::Sinusoidal] {
        for noise in [0.0, 0.001] {
            let label = match (truth, noise > 0.0) {
                (TruthMapKind::Polynomial, false) => "poly",
                (TruthMapKind::Polynomial, true) => "poly + noise",
                (TruthMapKind::Sinusoidal, false) => "sin",
                (TruthMapKind::Sinusoidal, true) => "sin + noise",
            };
            let mut row = format!("{label:<16}");
            for order in [ModelOrder::Quadratic, ModelOrder::Linear, ModelOrder::Constant] {
                let case = cases.iter().find(|c| {
                    c.truth_map == truth && (c.truth_noise > 0.0) == (noise > 0.0)
                        && c.belief_order == order
                });
                match case {
                    Some(c) => row.push_str(&format!(" {:<8.2}", c.metrics.mae_demand)),
                    None => row.push_str(" n/a     "),
                }
            }
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

fn case_label(case: &SweepCase) -> String {
    let truth = match case.truth_map {
        TruthMapKind::Polynomial => "poly",
        TruthMapKind::Sinusoidal => "sin",
    };
    let noise = if case.truth_noise > 0.0 { " + noise" } else { "" };
    let order = match case.belief_order {
        ModelOrder::Quadratic => "quadratic",
        ModelOrder::Linear => "linear",
        ModelOrder::Constant => "constant",
    };
    format!("truth: {truth}{noise}, belief: {order}")
}
