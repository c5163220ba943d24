//! Scratch diagnostic: are the stored expert labels pure functions of the
//! state, or contaminated by warm-start/convergence history?

use proxops::config::RunConfig;
use proxops::dataset;
use proxops::mpc::MpcSolver;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(std::path::Path::new(&args[1])).unwrap();
    let run_dir = std::path::Path::new(&args[2]);
    let manifest = dataset::read_manifest(run_dir).unwrap();
    let bundle = dataset::SceneBundle::from_config(&cfg).unwrap();
    let gparams = cfg.gravity_params();

    // A tighter solver for the reference answer.
    let mut tight_params = cfg.mpc_params(cfg.keep_out(&bundle.mesh));
    tight_params.tol = 1e-9;
    tight_params.max_inner_iterations = 100_000;
    tight_params.scp_iterations = 8;
    let tight = MpcSolver::new(tight_params, cfg.sim.mass, cfg.sim.dt);

    let mut worst = 0.0f64;
    let mut sum = 0.0;
    let mut n = 0;
    let mut not_converged = 0;
    for id in manifest.splits.test.iter().take(3) {
        let meta = manifest.episode(*id).unwrap();
        let ep = dataset::read_episode(run_dir, meta).unwrap();
        for r in ep.records.iter().step_by(25) {
            let stored = r.u_expert.unwrap();
            let sol = tight
                .solve(&r.state, &r.goal, &bundle.mesh, &gparams, None)
                .unwrap();
            if !sol.converged {
                not_converged += 1;
            }
            let d = (sol.controls[0].force - stored.force).norm();
            worst = worst.max(d);
            sum += d;
            n += 1;
        }
    }
    println!(
        "{n} re-solves: mean |delta u| {:.4} N, worst {:.4} N, {} not converged",
        sum / n as f64,
        worst,
        not_converged
    );
}
