use scr_core::corpus::*;
use scr_core::encoder::EncoderConfig;
use scr_core::eval::*;
use scr_core::index::*;
use scr_core::pipeline::*;
use std::time::Instant;

fn eval_mrr(run: &RunFile, bundle: &CorpusBundle) -> f64 {
    let qrels: std::collections::BTreeMap<String, String> = bundle.split.eval.iter()
        .map(|q| (q.clone(), bundle.qrels[q].clone())).collect();
    mrr(run, &qrels).unwrap()
}

fn main() {
    let t0 = Instant::now();
    let bundle = generate_corpus(2000, 2000, 7).unwrap();
    let prepared = PreparedCorpus::new(&bundle, 1);
    println!("prep {:?} vocab {}", t0.elapsed(), prepared.vocab.len());

    let mut enc = EncoderConfig::small(prepared.vocab.len(), 7);
    enc.max_len = 32;
    enc.d_ff = 96;
    enc.dropout_rate = 0.0;

    let docs = prepared.condition_docs("clean").unwrap().clone();
    let bm25 = build_bm25(&docs).unwrap();

    // BM25 baseline on clean
    let mut bm25_run = RunFile::new("bm25");
    for qid in &bundle.split.eval {
        let q = prepared.query(qid).unwrap();
        bm25_run.insert(qid.clone(), bm25_search(&bm25, q, 100));
    }
    println!("BM25 clean MRR = {:.4}", eval_mrr(&bm25_run, &bundle));

    // DR, 3 epochs
    let mut cfg = TrainConfig::dr(enc.clone(), "clean", false);
    cfg.epochs = 3;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let dr_state = train_dr::<f32>(&bundle, &prepared, &cfg, |l| {
        println!("dr e{}: train {:.4} valMRR {:.4} ({:.1}s)", l.epoch, l.train_loss, l.val_metric, l.wall_secs);
    }).unwrap();
    println!("dr total {:?}", t.elapsed());

    let inputs = doc_inputs_text(&prepared, "clean").unwrap();
    let t = Instant::now();
    let index = build_vector_index(&inputs, &dr_state.best_params, "clean").unwrap();
    println!("index build {:?}", t.elapsed());
    let mut dr_run = RunFile::new("dr");
    for qid in &bundle.split.eval {
        let q = prepared.query(qid).unwrap();
        dr_run.insert(qid.clone(), search_dr(q, &[&index], &dr_state.best_params, None, 100).unwrap());
    }
    println!("DR clean MRR = {:.4}", eval_mrr(&dr_run, &bundle));

    // DR-ANCE, 3 epochs
    let mut cfg = TrainConfig::dr(enc.clone(), "clean", true);
    cfg.epochs = 3;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let ance_state = train_dr::<f32>(&bundle, &prepared, &cfg, |l| {
        println!("ance e{}: train {:.4} valMRR {:.4} pool {} ({:.1}s)", l.epoch, l.train_loss, l.val_metric, l.negative_pool, l.wall_secs);
    }).unwrap();
    println!("ance total {:?}", t.elapsed());
    let index = build_vector_index(&inputs, &ance_state.best_params, "clean").unwrap();
    let mut ance_run = RunFile::new("dr-ance");
    for qid in &bundle.split.eval {
        let q = prepared.query(qid).unwrap();
        ance_run.insert(qid.clone(), search_dr(q, &[&index], &ance_state.best_params, None, 100).unwrap());
    }
    println!("DR-ANCE clean MRR = {:.4}", eval_mrr(&ance_run, &bundle));

    // rerank, 2 epochs, eval depth 50
    let mut cfg = TrainConfig::rerank(enc.clone(), "clean");
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    let t = Instant::now();
    let rr_state = train_reranker::<f32>(&bundle, &prepared, &cfg, |l| {
        println!("rerank e{}: train {:.4} val {:.4} ({:.1}s)", l.epoch, l.train_loss, l.val_metric, l.wall_secs);
    }).unwrap();
    println!("rerank total {:?}", t.elapsed());
    let t = Instant::now();
    let mut rr_run = RunFile::new("rerank");
    for qid in &bundle.split.eval {
        let q = prepared.query(qid).unwrap();
        rr_run.insert(qid.clone(), search_rerank(q, &bm25, &docs, &rr_state.best_params, 50).unwrap());
    }
    println!("rerank eval ({:?}) MRR = {:.4}", t.elapsed(), eval_mrr(&rr_run, &bundle));
    println!("grand total {:?}", t0.elapsed());
}
