//! Scratch diagnostic: per-episode policy RMSE breakdown.

use proxops::config::RunConfig;
use proxops::dataset::{self, build_policy_samples};
use proxops::nn::TrainableModel;
use proxops::pipeline;
use proxops::policy::PolicyNetwork;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(std::path::Path::new(&args[1])).unwrap();
    let run_dir = std::path::Path::new(&args[2]);

    let manifest = dataset::read_manifest(run_dir).unwrap();
    let policy = PolicyNetwork::load(&pipeline::policy_checkpoint_path(run_dir)).unwrap();
    let bundle = dataset::SceneBundle::from_config(&cfg).unwrap();
    let goal_pos_scale = cfg.goal_pos_scale(&bundle.keep_out);

    for (name, ids) in [
        ("train", &manifest.splits.train),
        ("val", &manifest.splits.val),
        ("test", &manifest.splits.test),
    ] {
        println!("== {name}");
        for id in ids {
            let meta = manifest.episode(*id).unwrap();
            let ep = dataset::read_episode(run_dir, meta).unwrap();
            let samples = build_policy_samples(
                &[&ep],
                cfg.policy.buffer_len,
                goal_pos_scale,
                cfg.policy.goal_vel_scale,
            );
            let mut rmse = 0.0;
            let mut zero = 0.0;
            for s in &samples {
                rmse += policy.eval_sample(s);
                zero += proxops::nn::rmse_loss(&[0.0; 3], &s.target);
            }
            let n = samples.len().max(1) as f64;
            println!(
                "  ep {id:>3} disturbed={} steps={:>4} outcome={:<8} rmse={:.3} zero={:.3}",
                meta.disturbed as u8,
                meta.steps,
                format!("{}", meta.outcome),
                rmse / n,
                zero / n
            );
        }
    }
}
