//! End-to-end desk-scale run: synthetic data, embedding, predictor, GAN,
//! evaluation. Knobs come from environment variables.

use std::env;
use std::time::Instant;

use filmedgan::data::generate_synthetic;
use filmedgan::eval::{evaluate, train_predictor, PredictorConfig};
use filmedgan::models::{Conditioning, Discriminator, Generator, ModelConfig};
use filmedgan::text::{train_embedding, EmbeddingConfig};
use filmedgan::train::{fit_embedded, TrainConfig};

fn var<T: std::str::FromStr>(k: &str, d: T) -> T {
    env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> filmedgan::Result<()> {
    let n = var("N", 2000);
    let t0 = Instant::now();
    let data = generate_synthetic(n, 7, (64, 32))?;
    let emb_cfg = EmbeddingConfig { epochs: var("EMB_EPOCHS", 10), seed: 1, ..Default::default() };
    let embed = train_embedding(&data.train, &emb_cfg, |e, l| eprintln!("emb {e} {l:.4} {:?}", t0.elapsed()))?;
    let pred = train_predictor(&data.train, &data.schema, &PredictorConfig { epochs: var("P_EPOCHS", 12), ..Default::default() }, |e, l| {
        eprintln!("pred {e} {l:.4} {:?}", t0.elapsed())
    })?;
    let caps: Vec<&str> = data.train.iter().map(|s| s.caption.as_str()).collect();
    let h_train = embed.encode_texts(&caps)?;
    let caps: Vec<&str> = data.test.iter().map(|s| s.caption.as_str()).collect();
    let h_test = embed.encode_texts(&caps)?;
    let conditioning = if var("CONCAT", 0) == 1 { Conditioning::Concat } else { Conditioning::Film };
    let model = ModelConfig { base_width: 16, resolution: (64, 32), conditioning, ..Default::default() };
    let train = TrainConfig {
        epochs: var("EPOCHS", 40),
        tv_lambda: var("TV", 0.01),
        lr: var("LR", 0.002),
        batch_size: var("BATCH", 64),
        seed: 3,
        checkpoint_every: 1,
        ..Default::default()
    };
    let g = Generator::new(&model, train.seed)?;
    let d = Discriminator::new(&model, train.seed ^ 1)?;
    let every = var("EVAL_EVERY", 5);
    let ckpt = fit_embedded(&data.train, &h_train, g, d, &train, |c| {
        let m = c.history.last().unwrap();
        eprintln!("{:?} {:?}", t0.elapsed(), m);
        if every > 0 && c.epoch % every == 0 {
            let r = evaluate(&data.test, &c.generator, &h_test, &pred)?;
            println!("epoch {} {}", c.epoch, serde_json::to_string(&r).unwrap());
        }
        Ok(())
    })
    .map_err(filmedgan::Error::from)?;
    let r = evaluate(&data.test, &ckpt.generator, &h_test, &pred)?;
    println!("final {}", serde_json::to_string(&r).unwrap());
    if let Ok(out) = env::var("OUT") {
        let out = std::path::PathBuf::from(out);
        ckpt.save(&out)?;
        embed.save(&out)?;
        pred.save(&out)?;
        filmedgan::data::save_synthetic(&data, 7, &out.join("data"))?;
    }
    eprintln!("total {:?}", t0.elapsed());
    Ok(())
}
