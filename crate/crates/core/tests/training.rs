use gausscse::data::{build_triplets, generate_synthetic, SynthConfig, Triplet};
use gausscse::trainer::{grid_search_with, GridCell, DEFAULT_GRID_BATCH_SIZES, DEFAULT_GRID_LEARNING_RATES};
use gausscse::{
    grid_search, par, seeded_rng, train, Error, LossVariant, Model, NliExample, RngStream, TrainConfig,
};

fn corpus(count: usize, seed: u64) -> Vec<NliExample> {
    generate_synthetic(&SynthConfig { count, seed, ..SynthConfig::default() }).unwrap()
}

fn fixture() -> (Vec<Triplet>, Vec<NliExample>) {
    (build_triplets(&corpus(400, 70)).triplets, corpus(100, 71))
}

fn init(seed: u64) -> Model {
    Model::random_bag(1024, 16, 8, &mut seeded_rng(seed, RngStream::Init)).unwrap()
}

fn config(variant: LossVariant) -> TrainConfig {
    TrainConfig { variant, batch_size: 32, eval_every: 10, ..TrainConfig::default() }
}

fn log_bytes(log: &gausscse::trainer::TrainLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_tsv(&mut buf).unwrap();
    buf
}

#[test]
fn training_improves_dev_auprc() {
    let (triplets, dev) = fixture();
    let out = train(&triplets, &dev, &config(LossVariant::EntConRev), init(0)).unwrap();
    let (initial, best) = (out.log.initial_dev_auprc.unwrap(), out.log.best_dev_auprc.unwrap());
    assert!(best > initial, "{best} vs {initial}");
    let final_score = gausscse::nli::dev_auprc(&out.model, &dev).unwrap();
    assert_eq!(final_score, best);
}

#[test]
fn log_records_warmup_and_evaluations() {
    let (triplets, dev) = fixture();
    let cfg = config(LossVariant::EntRev);
    let out = train(&triplets, &dev, &cfg, init(1)).unwrap();
    let total = cfg.total_steps(triplets.len());
    assert_eq!(out.log.records.len(), total);
    assert!(out.log.records.windows(2).all(|w| w[0].learning_rate <= w[1].learning_rate));
    assert_eq!(out.log.records.last().unwrap().learning_rate, cfg.learning_rate);
    for r in &out.log.records {
        assert_eq!(r.dev_auprc.is_some(), r.step % 10 == 0 || r.step == total);
        assert_eq!(r.loss.contradiction, 0.0);
        assert!(r.loss.reversed > 0.0 && r.loss.total.is_finite());
    }
    let text = String::from_utf8(log_bytes(&out.log)).unwrap();
    assert!(text.lines().any(|l| l == "step\tlr\tloss\tv_e\tv_c\tv_r\tdev_auprc"));
}

#[test]
fn training_is_bitwise_deterministic() {
    let (triplets, dev) = fixture();
    let cfg = config(LossVariant::EntConRev);
    let a = par::sequential(|| train(&triplets, &dev, &cfg, init(2)).unwrap());
    let b = par::sequential(|| train(&triplets, &dev, &cfg, init(2)).unwrap());
    assert_eq!(log_bytes(&a.log), log_bytes(&b.log));
    assert_eq!(a.model, b.model);
    // thread count does not change results either
    let c = train(&triplets, &dev, &cfg, init(2)).unwrap();
    assert_eq!(log_bytes(&a.log), log_bytes(&c.log));
    let other_seed = TrainConfig { seed: 3, ..cfg };
    let d = train(&triplets, &dev, &other_seed, init(2)).unwrap();
    assert_ne!(log_bytes(&a.log), log_bytes(&d.log));
}

#[test]
fn empty_dev_keeps_last_parameters() {
    let (triplets, _) = fixture();
    let out = train(&triplets[..50], &[], &config(LossVariant::Ent), init(4)).unwrap();
    assert!(out.log.dev_missing);
    assert!(out.log.best_step.is_none());
    assert!(out.log.records.iter().all(|r| r.dev_auprc.is_none()));
    assert_ne!(out.model, init(4));
}

#[test]
fn empty_dataset_is_rejected() {
    let (_, dev) = fixture();
    assert!(matches!(train(&[], &dev, &config(LossVariant::Ent), init(0)), Err(Error::EmptyInput(_))));
}

#[test]
fn grid_prefers_the_cell_trained_on_cleaner_data() {
    let (clean, dev) = fixture();
    // same sentences, but most triplets have entailment and contradiction swapped
    let noisy: Vec<Triplet> = clean
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i % 4 == 0 {
                t.clone()
            } else {
                Triplet::new(&t.premise, &t.contradicted, &t.entailed).unwrap()
            }
        })
        .collect();
    let cfg = config(LossVariant::EntCon);
    let result = grid_search_with(&[16, 32], &[1e-2], |cell: GridCell| {
        let data = if cell.batch_size == 32 { &clean } else { &noisy };
        let c = TrainConfig { batch_size: 32, learning_rate: cell.learning_rate, ..cfg.clone() };
        Ok(train(data, &dev, &c, init(5))?.log.best_dev_auprc.unwrap())
    })
    .unwrap();
    assert_eq!(result.best.unwrap().0.batch_size, 32);
}

#[test]
fn single_cell_grid_returns_that_cell() {
    let (triplets, dev) = fixture();
    let result = grid_search(&triplets, &dev, &[32], &[1e-2], &config(LossVariant::Ent), &init(6)).unwrap();
    assert_eq!(result.rows.len(), 1);
    let (cell, score) = result.best.unwrap();
    assert_eq!((cell.batch_size, cell.learning_rate), (32, 1e-2));
    assert_eq!(result.rows[0].score, Ok(score));
}

#[test]
fn default_grid_has_twelve_cells_in_row_major_order() {
    let result =
        grid_search_with(&DEFAULT_GRID_BATCH_SIZES, &DEFAULT_GRID_LEARNING_RATES, |c| Ok(c.learning_rate))
            .unwrap();
    let cells: Vec<(usize, f64)> =
        result.rows.iter().map(|r| (r.cell.batch_size, r.cell.learning_rate)).collect();
    assert_eq!(cells.len(), 12);
    assert_eq!(cells[..3], [(16, 1e-5), (16, 3e-5), (16, 5e-5)]);
    assert_eq!(cells[11], (128, 5e-5));
    // every batch size ties at the top learning rate, so the smallest batch wins
    assert_eq!(result.best.unwrap().0.batch_size, 16);
}

#[test]
fn failing_cell_is_recorded_without_aborting() {
    let (triplets, dev) = fixture();
    let result =
        grid_search(&triplets[..64], &dev, &[0, 32], &[1e-2], &config(LossVariant::Ent), &init(7)).unwrap();
    assert!(result.rows[0].score.is_err());
    assert!(result.rows[1].score.is_ok());
    assert_eq!(result.best.unwrap().0.batch_size, 32);
    let mut buf = Vec::new();
    result.write_tsv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("failed"));
}
