//! Reference formulas written independently of the library code.

use std::collections::HashMap;

fn grams(words: &[String], n: usize) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for i in 0..=words.len() - n {
            *m.entry(words[i..i + n].join("\u{1}")).or_insert(0) += 1;
        }
    }
    m
}

/// Exp-smoothed corpus BLEU on lowercased whitespace tokens, 0..100.
pub fn bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut matches = [0f64; 4];
    let mut possible = [0f64; 4];
    let (mut c, mut r) = (0f64, 0f64);
    for (h, rf) in hyps.iter().zip(refs) {
        let hw: Vec<String> = h.to_lowercase().split_whitespace().map(String::from).collect();
        let rw: Vec<String> = rf.to_lowercase().split_whitespace().map(String::from).collect();
        c += hw.len() as f64;
        r += rw.len() as f64;
        for n in 1..=4 {
            let rg = grams(&rw, n);
            for (g, k) in grams(&hw, n) {
                matches[n - 1] += k.min(*rg.get(&g).unwrap_or(&0)) as f64;
                possible[n - 1] += k as f64;
            }
        }
    }
    let mut logs = Vec::new();
    let mut divisor = 1.0;
    for n in 0..4 {
        if possible[n] == 0.0 {
            break;
        }
        let p = if matches[n] > 0.0 {
            100.0 * matches[n] / possible[n]
        } else {
            divisor *= 2.0;
            100.0 / (divisor * possible[n])
        };
        logs.push(p.ln());
    }
    while logs.len() < 4 {
        logs.push(-9_999_999_999.0);
    }
    let bp = if c >= r {
        1.0
    } else if c == 0.0 {
        0.0
    } else {
        (1.0 - r / c).exp()
    };
    bp * (logs.iter().sum::<f64>() / 4.0).exp()
}

/// Mean of `1 - |r - h| / r` over index-paired segments of all sentences.
pub fn overlap(reference: &[Vec<i64>], hypothesis: &[Vec<i64>]) -> f64 {
    let scores: Vec<f64> = reference
        .iter()
        .zip(hypothesis)
        .flat_map(|(r, h)| r.iter().zip(h).map(|(&r, &h)| 1.0 - ((r - h) as f64).abs() / r as f64))
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}
