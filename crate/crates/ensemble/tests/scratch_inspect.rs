// Temporary inspection. Deleted before finalizing.
use ensemble::cli::simulate_once;
use ensemble::report::NullSink;
use ensemble::scenario::gen_handoff;
use ensemble::Policy;

#[test]
fn inspect_seed5() {
    let scenario = gen_handoff(42);
    let report = simulate_once(&scenario, Policy::Legion, 5, Some(12), Some(6), &mut NullSink).unwrap();
    for r in &report.rounds {
        let units: Vec<String> = r
            .fuzzers
            .iter()
            .map(|(f, l)| format!("{f}:u{}p{:.2}γ{:.1}", l.units_held, l.pulls, l.gamma_new))
            .collect();
        println!(
            "r{:02} dur={:<5} early={} reassign={} edges={} seeds={} | {}",
            r.round,
            r.duration,
            r.early_termination as u8,
            r.reassignments.len(),
            r.stats.edges,
            r.stats.global_seeds,
            units.join(" ")
        );
    }
}
