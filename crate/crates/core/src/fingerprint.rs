//! Response-style fingerprint classifier.
//!
//! A bag-of-words logistic regression over TF-IDF word 1-3-grams, capped at
//! 400,000 features by document frequency, with L2 regularization C = 30.0
//! and at most 4,000 optimization iterations. The score is the predicted
//! probability that a response came from a strong (verbose, multi-step)
//! model.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAX_FEATURES: usize = 400_000;
pub const REGULARIZATION_C: f64 = 30.0;
pub const MAX_ITERATIONS: usize = 4_000;
const GRADIENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FingerprintModel {
    ngrams: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

/// Lowercased words split on non-alphanumeric runs.
fn words(doc: &str) -> Vec<String> {
    doc.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word n-grams for n in 1..=3, space-joined.
fn ngrams(doc: &str) -> Vec<String> {
    let ws = words(doc);
    let mut out = Vec::with_capacity(ws.len() * 3);
    for n in 1..=3usize {
        if ws.len() < n {
            break;
        }
        for window in ws.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

/// Sparse TF-IDF vector, L2-normalized.
fn vectorize(doc: &str, index: &HashMap<String, usize>, idf: &[f64]) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for g in ngrams(doc) {
        if let Some(&i) = index.get(&g) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(i, tf)| (i, tf * idf[i]))
        .collect();
    entries.sort_by_key(|e| e.0);
    let norm: f64 = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    entries
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits the classifier on strong (label +1) and weak (label -1) corpora.
pub fn fit_fingerprint(strong: &[String], weak: &[String]) -> Result<FingerprintModel> {
    if strong.is_empty() || weak.is_empty() {
        return Err(Error::Config(vec![
            "fingerprint training needs both a strong and a weak corpus".into(),
        ]));
    }

    // document frequencies over the combined corpus
    let mut df: HashMap<String, usize> = HashMap::new();
    let all_docs: Vec<&String> = strong.iter().chain(weak.iter()).collect();
    for doc in &all_docs {
        let mut seen = std::collections::HashSet::new();
        for g in ngrams(doc) {
            if seen.insert(g.clone()) {
                *df.entry(g).or_insert(0) += 1;
            }
        }
    }
    // frequency cap: keep the most frequent ngrams, ties by ngram text
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(MAX_FEATURES);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));

    let n_docs = all_docs.len() as f64;
    let ngram_list: Vec<String> = ranked.iter().map(|(g, _)| g.clone()).collect();
    let idf: Vec<f64> = ranked
        .iter()
        .map(|(_, d)| ((1.0 + n_docs) / (1.0 + *d as f64)).ln() + 1.0)
        .collect();
    let index: HashMap<String, usize> = ngram_list
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), i))
        .collect();

    let rows: Vec<Vec<(usize, f64)>> = all_docs
        .iter()
        .map(|d| vectorize(d, &index, &idf))
        .collect();
    let labels: Vec<f64> = strong
        .iter()
        .map(|_| 1.0)
        .chain(weak.iter().map(|_| -1.0))
        .collect();

    // Lipschitz bound of the gradient via power iteration on X^T X over the
    // bias-augmented design matrix.
    let dim = ngram_list.len();
    let mut v = vec![1.0; dim + 1];
    let mut lambda_max: f64 = 1.0;
    for _ in 0..30 {
        let mut xv = vec![0.0; rows.len()];
        for (r, row) in rows.iter().enumerate() {
            let mut acc = v[dim]; // bias column of ones
            for &(i, x) in row {
                acc += x * v[i];
            }
            xv[r] = acc;
        }
        let mut next = vec![0.0; dim + 1];
        for (r, row) in rows.iter().enumerate() {
            for &(i, x) in row {
                next[i] += x * xv[r];
            }
            next[dim] += xv[r];
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        lambda_max = norm;
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / norm;
        }
    }
    let lipschitz = 0.25 * lambda_max + 1.0 / REGULARIZATION_C;
    let step = 1.0 / lipschitz;

    // objective: |w|^2 / (2C) + sum_i ln(1 + exp(-y_i (w.x_i + b)))
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (row, &y) in rows.iter().zip(&labels) {
            let mut z = bias;
            for &(i, x) in row {
                z += x * weights[i];
            }
            let coeff = -y * sigmoid(-y * z);
            for &(i, x) in row {
                gw[i] += coeff * x;
            }
            gb += coeff;
        }
        for (g, w) in gw.iter_mut().zip(&weights) {
            *g += w / REGULARIZATION_C;
        }
        let grad_norm = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if grad_norm.sqrt() < GRADIENT_TOLERANCE {
            break;
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        bias -= step * gb;
    }

    Ok(FingerprintModel {
        ngrams: ngram_list,
        index,
        idf,
        weights,
        bias,
    })
}

/// Predicted probability that a response came from a strong model.
pub fn fingerprint_score(model: &FingerprintModel, doc: &str) -> f64 {
    let row = vectorize(doc, &model.index, &model.idf);
    let mut z = model.bias;
    for (i, x) in row {
        z += x * model.weights[i];
    }
    sigmoid(z)
}

impl FingerprintModel {
    pub fn feature_count(&self) -> usize {
        self.ngrams.len()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Persists as textual files: vocabulary, idf, weights, bias.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write = |name: &str, body: String| -> Result<()> {
            std::fs::write(dir.join(name), body)
                .map_err(|e| Error::io(dir.join(name).display().to_string(), e))
        };
        write("fingerprint_vocab.txt", self.ngrams.join("\n") + "\n")?;
        write(
            "fingerprint_idf.txt",
            self.idf.iter().map(f64::to_string).collect::<Vec<_>>().join("\n") + "\n",
        )?;
        write(
            "fingerprint_weights.txt",
            self.weights.iter().map(f64::to_string).collect::<Vec<_>>().join("\n") + "\n",
        )?;
        write("fingerprint_bias.txt", format!("{}\n", self.bias))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::io(dir.join(name).display().to_string(), e))
        };
        let parse_f64s = |name: &str, body: &str| -> Result<Vec<f64>> {
            body.lines()
                .enumerate()
                .map(|(n, l)| {
                    l.trim().parse::<f64>().map_err(|e| Error::Parse {
                        path: name.to_string(),
                        line: n + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        };
        let ngrams: Vec<String> = read("fingerprint_vocab.txt")?
            .lines()
            .map(str::to_string)
            .collect();
        let idf = parse_f64s("fingerprint_idf.txt", &read("fingerprint_idf.txt")?)?;
        let weights = parse_f64s("fingerprint_weights.txt", &read("fingerprint_weights.txt")?)?;
        let bias = parse_f64s("fingerprint_bias.txt", &read("fingerprint_bias.txt")?)?
            .first()
            .copied()
            .ok_or_else(|| Error::Parse {
                path: "fingerprint_bias.txt".into(),
                line: 1,
                message: "missing bias".into(),
            })?;
        if ngrams.len() != idf.len() || ngrams.len() != weights.len() {
            return Err(Error::Config(vec![
                "fingerprint files disagree on feature count".into(),
            ]));
        }
        let index = ngrams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
        Ok(FingerprintModel {
            ngrams,
            index,
            idf,
            weights,
            bias,
        })
    }
}
