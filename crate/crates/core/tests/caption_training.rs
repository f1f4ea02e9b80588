use memegen_core::caption::{
    greedy_decode, smooth, train_caption_model, train_pair, CaptionConfig, CaptionModel, CaptionTrainOptions,
};
use memegen_core::tensor::SgdConfig;
use memegen_core::textproc::normalize;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PAIRS: &str = include_str!("../data/caption_pairs.tsv");

fn pairs() -> Vec<(String, String)> {
    PAIRS
        .lines()
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect()
}

#[test]
fn single_pair_memorized_within_500_steps() {
    let pairs = [("i love nlp", "love nlp")];
    let mut model = CaptionModel::from_pairs(&pairs, CaptionConfig::default(), 0).unwrap();
    let input = model.input_indices("i love nlp").unwrap();
    let target = model.target_indices("love nlp").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = SgdConfig::default();
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        loss = train_pair(&mut model, &input, &target, 1.0, &cfg, &mut rng).unwrap();
    }
    assert!(loss < 0.05, "loss after 500 steps: {loss}");
    assert_eq!(greedy_decode(&model, "i love nlp").unwrap().text, "love nlp");
}

#[test]
fn five_pairs_memorized_exactly() {
    let pairs = pairs();
    let mut model = CaptionModel::from_pairs(&pairs, CaptionConfig::default(), 0).unwrap();
    let opts = CaptionTrainOptions {
        epochs: 1500,
        target_loss: Some(0.1),
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let curve = train_caption_model(&mut model, &pairs, &opts).unwrap();
    eprintln!("{} iterations in {:?}", curve.len(), start.elapsed());

    let last_epoch = &curve[curve.len() - pairs.len()..];
    assert!(last_epoch.iter().sum::<f64>() / (pairs.len() as f64) < 0.1);
    let windows = smooth(&curve, 20);
    assert!(windows.last().unwrap() < windows.first().unwrap());

    for (input, target) in &pairs {
        let c = greedy_decode(&model, input).unwrap();
        assert!(c.terminated);
        assert_eq!(normalize(&c.text), normalize(target), "input {input:?}");
    }
    let oov = greedy_decode(&model, "zzz qqq xxx").unwrap();
    assert!(oov.terminated);
}
