// Temporary dynamics exploration. Deleted before finalizing.

use ensemble::cli::compare_grid;
use ensemble::scenario::gen_handoff;
use ensemble::Policy;

#[test]
fn measure_handoff() {
    let scenario = gen_handoff(42);
    let seeds: Vec<u64> = (1..=10).collect();
    let t0 = std::time::Instant::now();
    let summary = compare_grid(
        &scenario,
        &[Policy::Legion, Policy::Ns, Policy::Cov, Policy::Fixed, Policy::PrepFocus],
        &seeds,
        Some(10),
        Some(6),
    )
    .unwrap();
    println!("elapsed: {:?}", t0.elapsed());
    for policy in &summary.policies {
        let edges: Vec<usize> = seeds
            .iter()
            .map(|&s| {
                summary
                    .cells
                    .iter()
                    .find(|c| &c.policy == policy && c.seed == s)
                    .unwrap()
                    .edges
            })
            .collect();
        let crash_rounds: Vec<String> = seeds
            .iter()
            .map(|&s| {
                summary
                    .cells
                    .iter()
                    .find(|c| &c.policy == policy && c.seed == s)
                    .unwrap()
                    .first_crash_round
                    .map(|r| r.to_string())
                    .unwrap_or("-".into())
            })
            .collect();
        println!("{policy:>10} edges: {edges:?} crash_round: {crash_rounds:?}");
    }
    for (p, w) in &summary.wins {
        println!("legion vs {p}: {} wins {} ties {} losses", w.wins, w.ties, w.losses);
    }
}
