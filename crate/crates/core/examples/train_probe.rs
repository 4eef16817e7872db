use scr_core::corpus::*;
use scr_core::encoder::EncoderConfig;
use scr_core::pipeline::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let bundle = generate_corpus(100, 400, 7).unwrap();
    let prepared = PreparedCorpus::new(&bundle, 1);
    println!("corpus+prep {:?}, vocab {}", t0.elapsed(), prepared.vocab.len());

    let mut enc = EncoderConfig::small(prepared.vocab.len(), 7);
    enc.max_len = 48;
    enc.d_ff = 128;
    enc.dropout_rate = 0.0;

    let mut cfg = TrainConfig::rerank(enc.clone(), "clean");
    cfg.epochs = 4;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let state = train_reranker::<f32>(&bundle, &prepared, &cfg, |log| {
        println!("rerank epoch {}: train {:.4} val {:.4} ({:.1}s)", log.epoch, log.train_loss, log.val_metric, log.wall_secs);
    }).unwrap();
    println!("rerank total {:?} best {:.4} @ {}", t.elapsed(), state.best_metric, state.best_epoch);

    let mut cfg = TrainConfig::dr(enc.clone(), "clean", false);
    cfg.epochs = 4;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let state = train_dr::<f32>(&bundle, &prepared, &cfg, |log| {
        println!("dr epoch {}: train {:.4} valMRR {:.4} ({:.1}s)", log.epoch, log.train_loss, log.val_metric, log.wall_secs);
    }).unwrap();
    println!("dr total {:?} best {:.4} @ {}", t.elapsed(), state.best_metric, state.best_epoch);

    let mut cfg = TrainConfig::dr(enc, "clean", true);
    cfg.epochs = 4;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let state = train_dr::<f32>(&bundle, &prepared, &cfg, |log| {
        println!("dr-ance epoch {}: train {:.4} valMRR {:.4} pool {} ({:.1}s)", log.epoch, log.train_loss, log.val_metric, log.negative_pool, log.wall_secs);
    }).unwrap();
    println!("dr-ance total {:?} best {:.4}", t.elapsed(), state.best_metric);
    println!("grand total {:?}", t0.elapsed());
}
