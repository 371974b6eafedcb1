use bctm::simulation::*;

fn main() {
    let mut csv = String::from("left,right,event,age,group\n");
    let scenario = SimScenario::reference(0.5, 60, 1, 1, 1010);
    let (data, _) = generate_dataset(&scenario, 0).unwrap();
    for obs in data.observations() {
        let right = if obs.right.is_finite() { obs.right.to_string() } else { "NA".into() };
        csv.push_str(&format!(
            "{},{right},{},{},{}\n",
            obs.left,
            u8::from(obs.event),
            obs.profile.z()[2],
            obs.profile.z()[1],
        ));
    }
    std::fs::write("/tmp/c10/data.csv", csv).unwrap();
    std::fs::write("/tmp/c10/run.toml", "seed = 5\n\n[knots]\nmode = \"quantile\"\nb = 1\n\n[init]\nmode = \"simulation-rule\"\n").unwrap();
}
