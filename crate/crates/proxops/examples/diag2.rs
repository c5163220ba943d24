//! Scratch diagnostic: can (position, velocity, goal) -> u_expert be
//! regressed across episodes at all? Upper-bounds what the lidar policy
//! could achieve with perfect localization.

use proxops::config::RunConfig;
use proxops::dataset;
use proxops::nn::{self, Dense, ParamStore, TrainOpts, TrainableModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct StateMlp {
    store: ParamStore,
    layers: Vec<Dense>,
    u_max: f64,
}

impl StateMlp {
    fn new(seed: u64, u_max: f64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut d = 9;
        for h in [96, 96] {
            layers.push(Dense::new(&mut store, d, h, &mut rng));
            d = h;
        }
        layers.push(Dense::new(&mut store, d, 3, &mut rng));
        Self {
            store,
            layers,
            u_max,
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, [f64; 3]) {
        let mut acts = vec![x.to_vec()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(&self.store, acts.last().unwrap());
            if i + 1 < self.layers.len() {
                nn::relu(&mut y);
            }
            acts.push(y);
        }
        let z = acts.pop().unwrap();
        let out = [
            z[0].tanh() * self.u_max,
            z[1].tanh() * self.u_max,
            z[2].tanh() * self.u_max,
        ];
        acts.push(z);
        (acts, out)
    }
}

type Sample = (Vec<f64>, [f64; 3]);

impl TrainableModel for StateMlp {
    type Sample = Sample;

    fn backward_sample(&mut self, s: &Sample) -> f64 {
        let (acts, out) = self.forward(&s.0);
        let loss = nn::rmse_loss(&out, &s.1);
        let d = nn::rmse_grad(&out, &s.1);
        let z = acts.last().unwrap();
        let mut grad: Vec<f64> = (0..3)
            .map(|i| {
                let t = z[i].tanh();
                d[i] * self.u_max * (1.0 - t * t)
            })
            .collect();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                nn::relu_backward(&acts[i + 1], &mut grad);
            }
            grad = l.backward(&mut self.store, &acts[i], &grad);
        }
        loss
    }

    fn eval_sample(&self, s: &Sample) -> f64 {
        let (_, out) = self.forward(&s.0);
        nn::rmse_loss(&out, &s.1)
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(std::path::Path::new(&args[1])).unwrap();
    let run_dir = std::path::Path::new(&args[2]);

    let manifest = dataset::read_manifest(run_dir).unwrap();
    let bundle = dataset::SceneBundle::from_config(&cfg).unwrap();
    let ps = cfg.goal_pos_scale(&bundle.keep_out);
    let vs = cfg.policy.goal_vel_scale;

    let collect = |ids: &Vec<u64>| -> Vec<Sample> {
        let mut out = Vec::new();
        for id in ids {
            let meta = manifest.episode(*id).unwrap();
            let ep = dataset::read_episode(run_dir, meta).unwrap();
            for r in &ep.records {
                let u = r.u_expert.unwrap();
                out.push((
                    vec![
                        r.state.position.x / ps,
                        r.state.position.y / ps,
                        r.state.position.z / ps,
                        r.state.velocity.x / vs,
                        r.state.velocity.y / vs,
                        r.state.velocity.z / vs,
                        r.goal.position.x / ps,
                        r.goal.position.y / ps,
                        r.goal.position.z / ps,
                    ],
                    [u.force.x, u.force.y, u.force.z],
                ));
            }
        }
        out
    };

    let train_set = collect(&manifest.splits.train);
    let val_set = collect(&manifest.splits.val);
    let test_set = collect(&manifest.splits.test);
    println!(
        "samples: train {} val {} test {}",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );

    let mut model = StateMlp::new(3, cfg.sim.u_max);
    let opts = TrainOpts {
        epochs: 60,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 5,
        max_batches_per_epoch: None,
        final_lr_factor: 0.1,
        weight_decay: 1e-4,
    };
    let report = nn::train(&mut model, &train_set, &val_set, &opts).unwrap();
    let test: f64 =
        test_set.iter().map(|s| model.eval_sample(s)).sum::<f64>() / test_set.len() as f64;
    let zero: f64 = test_set
        .iter()
        .map(|s| nn::rmse_loss(&[0.0; 3], &s.1))
        .sum::<f64>()
        / test_set.len() as f64;
    println!(
        "best epoch {} val {:.3}; test {:.3} vs zero {:.3} (ratio {:.2})",
        report.best_epoch,
        report.best_val_loss,
        test,
        zero,
        test / zero
    );
    for (e, (tr, va)) in report
        .train_loss
        .iter()
        .zip(report.val_loss.iter())
        .enumerate()
        .step_by(5)
    {
        println!("  epoch {e:>3}: train {tr:.3} val {va:.3}");
    }
}
