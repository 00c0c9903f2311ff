//! Train every loss variant on a synthetic corpus and report dev AUPRC and
//! held-out direction accuracy.
//!
//! `cargo run --release -p gausscse --example desk_scale -- [seeds] [lr] [batch]`

use std::time::Instant;

use gausscse::data::{build_triplets, generate_synthetic, Label, SynthConfig};
use gausscse::{direction_accuracy, seeded_rng, train, LossVariant, Model, RngStream, TrainConfig};

fn main() -> gausscse::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(5, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-2, |s| s.parse().unwrap());
    let batch: usize = args.get(3).map_or(64, |s| s.parse().unwrap());
    let started = Instant::now();
    for variant in [LossVariant::Ent, LossVariant::EntCon, LossVariant::EntRev, LossVariant::EntConRev] {
        let (mut dir_sum, mut auprc_sum) = (0.0, 0.0);
        for seed in 0..seeds {
            let corpus = |count, offset| {
                generate_synthetic(&SynthConfig {
                    count,
                    seed: seed * 1000 + offset,
                    ..SynthConfig::default()
                })
            };
            let triplets = build_triplets(&corpus(2000, 0)?).triplets;
            let dev = corpus(250, 1)?;
            let held_out: Vec<_> =
                corpus(500, 2)?.into_iter().filter(|e| e.label == Label::Entailment).collect();
            let config =
                TrainConfig { variant, seed, learning_rate: lr, batch_size: batch, ..TrainConfig::default() };
            let init = Model::random_bag(4096, 64, 32, &mut seeded_rng(seed, RngStream::Init))?;
            let out = train(&triplets, &dev, &config, init)?;
            let dir = direction_accuracy(&held_out, &out.model)?.accuracy;
            let auprc = out.log.best_dev_auprc.unwrap();
            println!(
                "{variant:<12} seed {seed}: initial {:.4} best auprc {auprc:.4} @ {:?}, direction {dir:.4}",
                out.log.initial_dev_auprc.unwrap(),
                out.log.best_step
            );
            dir_sum += dir;
            auprc_sum += auprc;
        }
        println!(
            "{variant:<12} mean auprc {:.4} direction {:.4}",
            auprc_sum / seeds as f64,
            dir_sum / seeds as f64
        );
    }
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
