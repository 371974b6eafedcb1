//! Generate one interval-censored dataset and fit the transformation cure
//! model to it.
//!
//! ```bash
//! cargo run --release -p bctm --example fit_simulated
//! ```

use bctm::em::{fit_em, EmConfig};
use bctm::simulation::{
    generate_dataset, select_cutpoints_quantile, simulation_initial_values, SimScenario,
};

fn main() -> Result<(), bctm::Error> {
    // true model: alpha = 0.5, constant baseline hazard 0.1
    let scenario = SimScenario::reference(0.5, 200, 2, 1, 42);
    let (data, diagnostics) = generate_dataset(&scenario, 0)?;
    println!(
        "generated n = {}: {} events, {} cured, {} susceptible-censored",
        data.len(),
        diagnostics.n_events,
        diagnostics.n_cured,
        diagnostics.n_susceptible_censored
    );

    let knots = select_cutpoints_quantile(&data, scenario.b_fit)?;
    println!("quantile cut-points: {:?}", knots.tau());

    let init = simulation_initial_values(&scenario, 0);
    let fit = fit_em(&data, &knots, &init, &EmConfig::default())?;

    println!(
        "converged: {} after {} EM iterations; log-likelihood {:.4}, AIC {:.4}",
        fit.converged, fit.n_em_iters, fit.loglik, fit.aic
    );
    println!("{:<8} {:>10} {:>10} {:>10}", "param", "true", "estimate", "std.err");
    let truth = [
        Some(scenario.alpha_true),
        None,
        None,
        None,
        Some(0.6),
        Some(-1.5),
        Some(0.1),
        Some(-1.2),
        Some(0.1),
    ];
    let values = fit.theta_hat.to_vec();
    for (j, name) in fit.theta_hat.names().iter().enumerate() {
        let t = truth[j].map(|v| format!("{v:>10.3}")).unwrap_or_else(|| format!("{:>10}", "-"));
        let se = fit.se[j].map(|v| format!("{v:>10.4}")).unwrap_or_else(|| format!("{:>10}", "NA"));
        println!("{name:<8} {t} {:>10.4} {se}", values[j]);
    }
    Ok(())
}
