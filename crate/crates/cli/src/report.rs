use std::collections::BTreeMap;

use memegen_core::assets::EvalBucket;
use memegen_core::caption::{greedy_decode_batch, oov_count, CaptionModel};
use memegen_core::textproc::UNK_TOKEN;
use memegen_core::{Error, Result};
use serde::Serialize;

/// Automatic quality proxies for one bucket of test sentences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub count: usize,
    /// Fraction of captions that ended with `<EOS>` before the length cap.
    pub eos_rate: f64,
    /// Fraction of captions without `<UNK>`.
    pub no_unk_rate: f64,
    pub non_empty_rate: f64,
    pub mean_caption_len: f64,
    pub min_caption_len: usize,
    pub max_caption_len: usize,
    /// Fraction of input tokens missing from the model vocabulary.
    pub input_oov_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub buckets: BTreeMap<EvalBucket, BucketReport>,
}

/// Decodes every case greedily and summarizes each bucket.
pub fn run_similar_different_eval(model: &CaptionModel, cases: &[(String, EvalBucket)]) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let texts: Vec<&str> = cases.iter().map(|(t, _)| t.as_str()).collect();
    let captions = greedy_decode_batch(model, &texts);

    #[derive(Default)]
    struct Acc {
        count: usize,
        eos: usize,
        no_unk: usize,
        non_empty: usize,
        lens: Vec<usize>,
        oov: usize,
        tokens: usize,
    }
    let mut acc: BTreeMap<EvalBucket, Acc> = BTreeMap::new();
    for ((text, bucket), caption) in cases.iter().zip(captions) {
        let caption = caption?;
        let a = acc.entry(*bucket).or_default();
        a.count += 1;
        a.eos += usize::from(caption.terminated);
        a.no_unk += usize::from(!caption.text.split(' ').any(|w| w == UNK_TOKEN));
        a.non_empty += usize::from(!caption.tokens.is_empty());
        a.lens.push(caption.tokens.len());
        let (oov, tokens) = oov_count(model, text);
        a.oov += oov;
        a.tokens += tokens;
    }
    let buckets = acc
        .into_iter()
        .map(|(bucket, a)| {
            let n = a.count as f64;
            let report = BucketReport {
                count: a.count,
                eos_rate: a.eos as f64 / n,
                no_unk_rate: a.no_unk as f64 / n,
                non_empty_rate: a.non_empty as f64 / n,
                mean_caption_len: a.lens.iter().sum::<usize>() as f64 / n,
                min_caption_len: a.lens.iter().copied().min().unwrap_or(0),
                max_caption_len: a.lens.iter().copied().max().unwrap_or(0),
                input_oov_rate: if a.tokens == 0 { 0.0 } else { a.oov as f64 / a.tokens as f64 },
            };
            (bucket, report)
        })
        .collect();
    Ok(EvalReport {
        total: cases.len(),
        buckets,
    })
}
